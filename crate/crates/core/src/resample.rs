//! Footprint reduction: row skewing, mask-aware block downsampling and
//! mask-aware bicubic upsampling.
//!
//! All functions operate on one day's field as a row-major `width x height`
//! slice plus its observation mask; vacated or undefined cells come back as
//! value 0 with mask 0.

use crate::error::{GridError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkewDirection {
    West,
    East,
}

/// Cumulative row shift: row `r` moves `floor(r / period)` columns in
/// `direction`. `period = 2` shifts every other row together with the rows
/// below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkewSpec {
    pub period: usize,
    pub direction: SkewDirection,
}

impl SkewSpec {
    pub fn west(period: usize) -> Self {
        Self {
            period,
            direction: SkewDirection::West,
        }
    }

    pub fn shift_for_row(&self, row: usize) -> usize {
        if self.period == 0 {
            0
        } else {
            row / self.period
        }
    }
}

fn shift_rows(
    field: &[f32],
    mask: &[u8],
    width: usize,
    height: usize,
    spec: &SkewSpec,
    direction: SkewDirection,
) -> Result<(Vec<f32>, Vec<u8>)> {
    assert_eq!(field.len(), width * height);
    assert_eq!(mask.len(), width * height);
    let mut out_field = vec![0.0f32; width * height];
    let mut out_mask = vec![0u8; width * height];
    for row in 0..height {
        let shift = spec.shift_for_row(row) as isize;
        let shift = match direction {
            SkewDirection::West => -shift,
            SkewDirection::East => shift,
        };
        for col in 0..width {
            let src = row * width + col;
            let dst_col = col as isize + shift;
            if dst_col < 0 || dst_col >= width as isize {
                if mask[src] == 1 {
                    return Err(GridError::SkewOffCanvas { row });
                }
                continue;
            }
            let dst = row * width + dst_col as usize;
            out_field[dst] = field[src];
            out_mask[dst] = mask[src];
        }
    }
    Ok((out_field, out_mask))
}

/// Applies the skew; observed content pushed off the canvas is an error.
pub fn skew(
    field: &[f32],
    mask: &[u8],
    width: usize,
    height: usize,
    spec: &SkewSpec,
) -> Result<(Vec<f32>, Vec<u8>)> {
    shift_rows(field, mask, width, height, spec, spec.direction)
}

/// Exact inverse of [`skew`] for content that stayed on the canvas.
pub fn unskew(
    field: &[f32],
    mask: &[u8],
    width: usize,
    height: usize,
    spec: &SkewSpec,
) -> Result<(Vec<f32>, Vec<u8>)> {
    let back = match spec.direction {
        SkewDirection::West => SkewDirection::East,
        SkewDirection::East => SkewDirection::West,
    };
    shift_rows(field, mask, width, height, spec, back)
}

/// Block-averages `factor x factor` groups of fine cells. A coarse cell is
/// valid when the observed share of its block reaches `valid_threshold`;
/// its value is the mean of the observed fine cells.
pub fn downsample(
    field: &[f32],
    mask: &[u8],
    width: usize,
    height: usize,
    factor: usize,
    valid_threshold: f64,
) -> Result<(Vec<f32>, Vec<u8>)> {
    assert!(factor >= 1);
    if width % factor != 0 || height % factor != 0 {
        return Err(GridError::NotDivisible {
            width,
            height,
            factor,
        });
    }
    let (cw, ch) = (width / factor, height / factor);
    let mut out_field = vec![0.0f32; cw * ch];
    let mut out_mask = vec![0u8; cw * ch];
    for cy in 0..ch {
        for cx in 0..cw {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for dy in 0..factor {
                for dx in 0..factor {
                    let i = (cy * factor + dy) * width + cx * factor + dx;
                    if mask[i] == 1 {
                        sum += field[i] as f64;
                        count += 1;
                    }
                }
            }
            let share = count as f64 / (factor * factor) as f64;
            let o = cy * cw + cx;
            if share >= valid_threshold && count > 0 {
                out_field[o] = (sum / count as f64) as f32;
                out_mask[o] = 1;
            }
        }
    }
    Ok((out_field, out_mask))
}

/// Keys cubic convolution weights (a = -1/2) for offsets -1..=2; sums to 1
/// and reproduces linear ramps exactly.
fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Bicubic upsampling of a coarse field to `factor`-times finer resolution.
///
/// Fine-cell centers are evaluated in coarse coordinates with the usual
/// half-cell offset. Wherever the 4x4 bicubic support touches an invalid
/// coarse cell the interpolation falls back to bilinear over the valid
/// 2x2 neighbors, then to the nearest valid cell. Every output is clamped
/// to the [min, max] of the coarse values that contributed, which keeps
/// overshoot near mask boundaries in check.
pub fn upsample(
    coarse_field: &[f32],
    coarse_mask: &[u8],
    coarse_width: usize,
    coarse_height: usize,
    factor: usize,
) -> Vec<f32> {
    assert!(factor >= 1);
    assert_eq!(coarse_field.len(), coarse_width * coarse_height);
    assert_eq!(coarse_mask.len(), coarse_width * coarse_height);
    let (fw, fh) = (coarse_width * factor, coarse_height * factor);
    let mut out = vec![0.0f32; fw * fh];

    let valid_cells: Vec<(usize, usize)> = (0..coarse_height)
        .flat_map(|r| (0..coarse_width).map(move |c| (r, c)))
        .filter(|&(r, c)| coarse_mask[r * coarse_width + c] == 1)
        .collect();
    if valid_cells.is_empty() {
        return out;
    }

    for y in 0..fh {
        let v = (y as f64 + 0.5) / factor as f64 - 0.5;
        let j = v.floor() as isize;
        let ty = v - j as f64;
        let wy = cubic_weights(ty);
        for x in 0..fw {
            let u = (x as f64 + 0.5) / factor as f64 - 0.5;
            let i = u.floor() as isize;
            let tx = u - i as f64;

            // Bicubic over the clamped 4x4 support when it is fully valid.
            let mut all_valid = true;
            'support: for ky in 0..4isize {
                for kx in 0..4isize {
                    let r = clamp_idx(j - 1 + ky, coarse_height);
                    let c = clamp_idx(i - 1 + kx, coarse_width);
                    if coarse_mask[r * coarse_width + c] == 0 {
                        all_valid = false;
                        break 'support;
                    }
                }
            }

            let value = if all_valid {
                let wx = cubic_weights(tx);
                let mut acc = 0.0f64;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for ky in 0..4isize {
                    for kx in 0..4isize {
                        let r = clamp_idx(j - 1 + ky, coarse_height);
                        let c = clamp_idx(i - 1 + kx, coarse_width);
                        let cv = coarse_field[r * coarse_width + c] as f64;
                        acc += wy[ky as usize] * wx[kx as usize] * cv;
                        lo = lo.min(cv);
                        hi = hi.max(cv);
                    }
                }
                acc.clamp(lo, hi)
            } else {
                bilinear_or_nearest(
                    coarse_field,
                    coarse_mask,
                    coarse_width,
                    coarse_height,
                    &valid_cells,
                    v,
                    u,
                    j,
                    i,
                    ty,
                    tx,
                )
            };
            out[y * fw + x] = value as f32;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn bilinear_or_nearest(
    field: &[f32],
    mask: &[u8],
    width: usize,
    height: usize,
    valid_cells: &[(usize, usize)],
    v: f64,
    u: f64,
    j: isize,
    i: isize,
    ty: f64,
    tx: f64,
) -> f64 {
    let corners = [
        (j, i, (1.0 - ty) * (1.0 - tx)),
        (j, i + 1, (1.0 - ty) * tx),
        (j + 1, i, ty * (1.0 - tx)),
        (j + 1, i + 1, ty * tx),
    ];
    let mut wsum = 0.0f64;
    let mut acc = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (r, c, w) in corners {
        let r = clamp_idx(r, height);
        let c = clamp_idx(c, width);
        if mask[r * width + c] == 1 {
            let cv = field[r * width + c] as f64;
            acc += w * cv;
            wsum += w;
            lo = lo.min(cv);
            hi = hi.max(cv);
        }
    }
    if wsum > 0.0 {
        return (acc / wsum).clamp(lo, hi);
    }
    // No valid bilinear neighbor: nearest valid coarse cell, ties broken by
    // (row, col) order.
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for &(r, c) in valid_cells {
        let d = (r as f64 - v).powi(2) + (c as f64 - u).powi(2);
        if d < best.0 {
            best = (d, r, c);
        }
    }
    field[best.1 * width + best.2] as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_shift_rule() {
        let spec = SkewSpec::west(2);
        let shifts: Vec<usize> = (0..4).map(|r| spec.shift_for_row(r)).collect();
        assert_eq!(shifts, vec![0, 0, 1, 1]);
    }

    #[test]
    fn single_cell_returns_to_original_column() {
        let (w, h) = (5, 5);
        let mut field = vec![0.0f32; w * h];
        let mut mask = vec![0u8; w * h];
        field[3 * w + 3] = 2.5;
        mask[3 * w + 3] = 1;
        let spec = SkewSpec::west(2);
        let (sf, sm) = skew(&field, &mask, w, h, &spec).unwrap();
        assert_eq!(sm[3 * w + 2], 1); // shifted one column west
        let (uf, um) = unskew(&sf, &sm, w, h, &spec).unwrap();
        assert_eq!(uf, field);
        assert_eq!(um, mask);
    }

    #[test]
    fn observed_content_off_canvas_errors() {
        let (w, h) = (2, 4);
        let field = vec![1.0f32; w * h];
        let mask = vec![1u8; w * h];
        let e = skew(&field, &mask, w, h, &SkewSpec::west(2)).unwrap_err();
        assert!(matches!(e, GridError::SkewOffCanvas { row: 2 }));
    }

    #[test]
    fn block_mean_of_zero_to_eight() {
        let field: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let mask = vec![1u8; 9];
        let (down, dmask) = downsample(&field, &mask, 3, 3, 3, 0.5).unwrap();
        assert_eq!(down, vec![4.0]);
        assert_eq!(dmask, vec![1]);
    }

    #[test]
    fn sparse_block_fails_threshold() {
        let field = vec![1.0f32; 9];
        let mut mask = vec![0u8; 9];
        mask[4] = 1;
        let (_, dmask) = downsample(&field, &mask, 3, 3, 3, 0.5).unwrap();
        assert_eq!(dmask, vec![0]);
    }

    #[test]
    fn constant_field_roundtrips_exactly() {
        let field = vec![0.7f32; 36];
        let mask = vec![1u8; 36];
        let (down, dmask) = downsample(&field, &mask, 6, 6, 3, 0.5).unwrap();
        assert!(down.iter().all(|&v| v == 0.7));
        let up = upsample(&down, &dmask, 2, 2, 3);
        assert!(up.iter().all(|&v| v == 0.7));
    }
}
