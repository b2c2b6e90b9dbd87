//! 2-D cross-correlation primitives shared by the convolution and transposed
//! convolution layers. Zero padding of (k-1)/2 keeps spatial dims at stride 1
//! and halves them at stride 2.
//!
//! Stride-1 paths run on zero-padded planes so that each kernel tap is one
//! long shifted multiply-accumulate over the whole plane; contributions that
//! land in the padding ring are discarded on extraction. Every output element
//! is accumulated in a fixed order, so results do not depend on scheduling.

use crate::tensor::Tensor;

/// Copies a `h x w` plane into the interior of a `(h+2p) x (w+2p)` buffer
/// whose border is zeroed.
fn pad_plane(src: &[f64], h: usize, w: usize, p: usize, dst: &mut [f64]) {
    let pw = w + 2 * p;
    dst.fill(0.0);
    for y in 0..h {
        let d = (y + p) * pw + p;
        dst[d..d + w].copy_from_slice(&src[y * w..y * w + w]);
    }
}

/// `dst[i] += a * src[i + shift]` over the overlapping range, for a possibly
/// negative shift.
#[inline]
fn saxpy_shifted(dst: &mut [f64], src: &[f64], shift: isize, a: f64) {
    if shift >= 0 {
        let s = shift as usize;
        let n = dst.len().min(src.len() - s);
        let (d, x) = (&mut dst[..n], &src[s..s + n]);
        for i in 0..n {
            d[i] += a * x[i];
        }
    } else {
        let s = (-shift) as usize;
        let n = src.len().min(dst.len() - s);
        let (d, x) = (&mut dst[s..s + n], &src[..n]);
        for i in 0..n {
            d[i] += a * x[i];
        }
    }
}

/// Dot product of `a` and `b` shifted by `shift` over the overlapping range.
#[inline]
fn dot_shifted(a: &[f64], b: &[f64], shift: usize) -> f64 {
    let n = a.len().min(b.len() - shift);
    let (x, y) = (&a[..n], &b[shift..shift + n]);
    let mut acc = 0.0;
    for i in 0..n {
        acc += x[i] * y[i];
    }
    acc
}

/// `out[n][co] = bias[co] + sum_{ci,ky,kx} w[co][ci][ky][kx] * x[n][ci][oy*s+ky-P][ox*s+kx-P]`
pub fn correlate(
    x: &Tensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    c_out: usize,
    k: usize,
    stride: usize,
) -> Tensor {
    let (n_batch, c_in, h, w) = x.shape();
    debug_assert_eq!(weight.len(), c_out * c_in * k * k);
    let pad = (k - 1) / 2;
    let (ho, wo) = (h / stride, w / stride);
    let mut out = Tensor::zeros(n_batch, c_out, ho, wo);

    if stride == 1 {
        let pw = w + 2 * pad;
        let ph = h + 2 * pad;
        let mut xpads = vec![0.0f64; c_in * pw * ph];
        let mut acc = vec![0.0f64; pw * ph];
        for n in 0..n_batch {
            for ci in 0..c_in {
                pad_plane(x.plane(n, ci), h, w, pad, &mut xpads[ci * pw * ph..(ci + 1) * pw * ph]);
            }
            for co in 0..c_out {
                acc.fill(0.0);
                for ci in 0..c_in {
                    let xp = &xpads[ci * pw * ph..(ci + 1) * pw * ph];
                    let wbase = ((co * c_in + ci) * k) * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wgt = weight[wbase + ky * k + kx];
                            // out[y][x] needs xpad[y+ky][x+kx]; in acc's padded
                            // frame out lives at (+pad, +pad), so the source
                            // shift is (ky-pad, kx-pad).
                            let shift = (ky as isize - pad as isize) * pw as isize
                                + (kx as isize - pad as isize);
                            saxpy_shifted(&mut acc, xp, shift, wgt);
                        }
                    }
                }
                let out_plane = out.plane_mut(n, co);
                let b = bias.map_or(0.0, |b| b[co]);
                for y in 0..h {
                    let src = &acc[(y + pad) * pw + pad..(y + pad) * pw + pad + w];
                    let dst = &mut out_plane[y * w..y * w + w];
                    for i in 0..w {
                        dst[i] = src[i] + b;
                    }
                }
            }
        }
        return out;
    }

    // General strided path.
    for n in 0..n_batch {
        for co in 0..c_out {
            let b = bias.map_or(0.0, |b| b[co]);
            let out_plane = out.plane_mut(n, co);
            out_plane.fill(b);
            for ci in 0..c_in {
                let x_plane = x.plane(n, ci);
                for oy in 0..ho {
                    let out_row = &mut out_plane[oy * wo..oy * wo + wo];
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = &x_plane[iy as usize * w..iy as usize * w + w];
                        let w_row = &weight[((co * c_in + ci) * k + ky) * k..][..k];
                        for (kx, &wgt) in w_row.iter().enumerate() {
                            let shift = kx as isize - pad as isize;
                            for (ox, d) in out_row.iter_mut().enumerate() {
                                let ix = (ox * stride) as isize + shift;
                                if ix >= 0 && ix < w as isize {
                                    *d += wgt * x_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`correlate`] with respect to its input: scatters `g` (shaped
/// like the correlation output) back onto the input grid.
pub fn correlate_adjoint_input(
    g: &Tensor,
    weight: &[f64],
    c_in: usize,
    k: usize,
    stride: usize,
    h: usize,
    w: usize,
) -> Tensor {
    let (n_batch, c_out, ho, wo) = g.shape();
    debug_assert_eq!(weight.len(), c_out * c_in * k * k);
    debug_assert_eq!((ho, wo), (h / stride, w / stride));
    let pad = (k - 1) / 2;
    let mut out = Tensor::zeros(n_batch, c_in, h, w);

    if stride == 1 {
        // dx[iy][ix] = sum_{ky,kx} w[ky][kx] * gpad[iy - ky + pad][ix - kx + pad]:
        // a correlation of the padded upstream gradient with the flipped
        // kernel, which is again one shifted accumulate per tap.
        let pw = w + 2 * pad;
        let ph = h + 2 * pad;
        let mut gpads = vec![0.0f64; c_out * pw * ph];
        let mut acc = vec![0.0f64; pw * ph];
        for n in 0..n_batch {
            for co in 0..c_out {
                pad_plane(g.plane(n, co), h, w, pad, &mut gpads[co * pw * ph..(co + 1) * pw * ph]);
            }
            for ci in 0..c_in {
                acc.fill(0.0);
                for co in 0..c_out {
                    let gp = &gpads[co * pw * ph..(co + 1) * pw * ph];
                    let wbase = ((co * c_in + ci) * k) * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wgt = weight[wbase + ky * k + kx];
                            let shift = (pad as isize - ky as isize) * pw as isize
                                + (pad as isize - kx as isize);
                            saxpy_shifted(&mut acc, gp, shift, wgt);
                        }
                    }
                }
                let out_plane = out.plane_mut(n, ci);
                for y in 0..h {
                    let src = &acc[(y + pad) * pw + pad..(y + pad) * pw + pad + w];
                    out_plane[y * w..y * w + w].copy_from_slice(src);
                }
            }
        }
        return out;
    }

    for n in 0..n_batch {
        for ci in 0..c_in {
            let out_plane = out.plane_mut(n, ci);
            for co in 0..c_out {
                let g_plane = g.plane(n, co);
                for oy in 0..ho {
                    let g_row = &g_plane[oy * wo..oy * wo + wo];
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let out_row = &mut out_plane[iy as usize * w..iy as usize * w + w];
                        let w_row = &weight[((co * c_in + ci) * k + ky) * k..][..k];
                        for (kx, &wgt) in w_row.iter().enumerate() {
                            let shift = kx as isize - pad as isize;
                            for (ox, &gv) in g_row.iter().enumerate() {
                                let ix = (ox * stride) as isize + shift;
                                if ix >= 0 && ix < w as isize {
                                    out_row[ix as usize] += wgt * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`correlate`] with respect to the weights.
pub fn correlate_weight_grad(
    x: &Tensor,
    g: &Tensor,
    c_out: usize,
    k: usize,
    stride: usize,
) -> Vec<f64> {
    let (n_batch, c_in, h, w) = x.shape();
    let (_, _, ho, wo) = g.shape();
    let pad = (k - 1) / 2;
    let mut dw = vec![0.0f64; c_out * c_in * k * k];

    if stride == 1 {
        // dw[ky][kx] = sum over the plane of g[y][x] * xpad[y+ky][x+kx]. With
        // g zero-padded the garbage terms vanish, leaving one shifted dot
        // product per tap.
        let pw = w + 2 * pad;
        let ph = h + 2 * pad;
        let mut xpads = vec![0.0f64; c_in * pw * ph];
        let mut gpads = vec![0.0f64; c_out * pw * ph];
        for n in 0..n_batch {
            for ci in 0..c_in {
                pad_plane(x.plane(n, ci), h, w, pad, &mut xpads[ci * pw * ph..(ci + 1) * pw * ph]);
            }
            for co in 0..c_out {
                pad_plane(g.plane(n, co), h, w, pad, &mut gpads[co * pw * ph..(co + 1) * pw * ph]);
            }
            for co in 0..c_out {
                let gp = &gpads[co * pw * ph..(co + 1) * pw * ph];
                for ci in 0..c_in {
                    let xp = &xpads[ci * pw * ph..(ci + 1) * pw * ph];
                    let wbase = ((co * c_in + ci) * k) * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            // g sits at (+pad, +pad) in its frame; x tap (ky,kx)
                            // sits at (ky, kx): source shift is (ky-pad, kx-pad)
                            // relative to g, always expressible with g leading.
                            let shift = (ky as isize - pad as isize) * pw as isize
                                + (kx as isize - pad as isize);
                            let d = if shift >= 0 {
                                dot_shifted(gp, xp, shift as usize)
                            } else {
                                dot_shifted(xp, gp, (-shift) as usize)
                            };
                            dw[wbase + ky * k + kx] += d;
                        }
                    }
                }
            }
        }
        return dw;
    }

    for co in 0..c_out {
        for ci in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let shift = kx as isize - pad as isize;
                    let mut acc = 0.0f64;
                    for n in 0..n_batch {
                        let x_plane = x.plane(n, ci);
                        let g_plane = g.plane(n, co);
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = &x_plane[iy as usize * w..iy as usize * w + w];
                            let g_row = &g_plane[oy * wo..oy * wo + wo];
                            for (ox, &gv) in g_row.iter().enumerate() {
                                let ix = (ox * stride) as isize + shift;
                                if ix >= 0 && ix < w as isize {
                                    acc += x_row[ix as usize] * gv;
                                }
                            }
                        }
                    }
                    dw[((co * c_in + ci) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    dw
}

/// Per-output-channel sum of `g`, i.e. the bias gradient of a correlation.
pub fn channel_sums(g: &Tensor) -> Vec<f64> {
    let (n_batch, c, _, _) = g.shape();
    let mut out = vec![0.0f64; c];
    for n in 0..n_batch {
        for (ci, o) in out.iter_mut().enumerate() {
            *o += g.plane(n, ci).iter().sum::<f64>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference correlation with naive loops.
    fn correlate_naive(
        x: &Tensor,
        weight: &[f64],
        bias: Option<&[f64]>,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Tensor {
        let (n_batch, c_in, h, w) = x.shape();
        let pad = (k - 1) / 2;
        let (ho, wo) = (h / stride, w / stride);
        let mut out = Tensor::zeros(n_batch, c_out, ho, wo);
        for n in 0..n_batch {
            for co in 0..c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.map_or(0.0, |b| b[co]);
                        for ci in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += weight[((co * c_in + ci) * k + ky) * k + kx]
                                        * x.at(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(n, co, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn padded_path_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &k in &[1usize, 3, 5] {
            for _ in 0..6 {
                let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
                let (h, w) = (rng.gen_range(1..=7usize), rng.gen_range(1..=7usize));
                let x = Tensor::from_vec(
                    n,
                    cin,
                    h,
                    w,
                    (0..n * cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                );
                let weight: Vec<f64> =
                    (0..cout * cin * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let fast = correlate(&x, &weight, Some(&bias), cout, k, 1);
                let slow = correlate_naive(&x, &weight, Some(&bias), cout, k, 1);
                for (a, b) in fast.data().iter().zip(slow.data()) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b} (k={k} {h}x{w})");
                }
            }
        }
    }
}
