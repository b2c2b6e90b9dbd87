//! Differentiable layers: convolution, transposed convolution, SELU, batch
//! normalization and dropout. Forward passes cache whatever the analytic
//! backward pass needs; `backward` consumes the cache.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::kernels;
use crate::tensor::Tensor;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Mutable view of one parameter tensor and its gradient slot.
pub struct ParamMut<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Named view used by checkpointing; includes non-trainable state such as
/// batchnorm running statistics.
pub struct StateMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out][in][k][k]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub weight_grad: Vec<f64>,
    pub bias_grad: Vec<f64>,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        let wlen = out_channels * in_channels * kernel * kernel;
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![0.0; wlen],
            bias: vec![0.0; out_channels],
            weight_grad: vec![0.0; wlen],
            bias_grad: vec![0.0; out_channels],
            cached_input: None,
        }
    }

    pub fn init_lecun(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let std = (1.0 / fan_in).sqrt();
        let normal = rand_distr::Normal::new(0.0, std).unwrap();
        for w in self.weight.iter_mut() {
            *w = rng.sample(normal);
        }
        self.bias.fill(0.0);
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.shape();
        if c != self.in_channels {
            return Err(NnError::ShapeMismatch {
                layer: self.name.clone(),
                expected: format!("{} channels", self.in_channels),
                actual: format!("{c} channels ({h}x{w})"),
            });
        }
        if self.stride == 2 && (h % 2 != 0 || w % 2 != 0) {
            return Err(NnError::OddSpatialDims {
                layer: self.name.clone(),
                h,
                w,
            });
        }
        let out = kernels::correlate(
            x,
            &self.weight,
            Some(&self.bias),
            self.out_channels,
            self.kernel,
            self.stride,
        );
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.take().ok_or_else(|| NnError::BackwardWithoutForward {
            layer: self.name.clone(),
        })?;
        let (_, _, h, w) = x.shape();
        let dw = kernels::correlate_weight_grad(&x, g, self.out_channels, self.kernel, self.stride);
        for (a, b) in self.weight_grad.iter_mut().zip(&dw) {
            *a += b;
        }
        for (a, b) in self.bias_grad.iter_mut().zip(kernels::channel_sums(g)) {
            *a += b;
        }
        Ok(kernels::correlate_adjoint_input(
            g,
            &self.weight,
            self.in_channels,
            self.kernel,
            self.stride,
            h,
            w,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct TConv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[in][out][k][k]`: the adjoint of a correlation mapping out -> in.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub weight_grad: Vec<f64>,
    pub bias_grad: Vec<f64>,
    cached_input: Option<Tensor>,
}

impl TConv2d {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        let wlen = in_channels * out_channels * kernel * kernel;
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![0.0; wlen],
            bias: vec![0.0; out_channels],
            weight_grad: vec![0.0; wlen],
            bias_grad: vec![0.0; out_channels],
            cached_input: None,
        }
    }

    pub fn init_lecun(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let std = (1.0 / fan_in).sqrt();
        let normal = rand_distr::Normal::new(0.0, std).unwrap();
        for w in self.weight.iter_mut() {
            *w = rng.sample(normal);
        }
        self.bias.fill(0.0);
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.shape();
        if c != self.in_channels {
            return Err(NnError::ShapeMismatch {
                layer: self.name.clone(),
                expected: format!("{} channels", self.in_channels),
                actual: format!("{c} channels ({h}x{w})"),
            });
        }
        let (ho, wo) = (h * self.stride, w * self.stride);
        let mut out = kernels::correlate_adjoint_input(
            x,
            &self.weight,
            self.out_channels,
            self.kernel,
            self.stride,
            ho,
            wo,
        );
        let plane = ho * wo;
        for n in 0..out.batch() {
            for co in 0..self.out_channels {
                let b = self.bias[co];
                let _ = n;
                let p = out.plane_mut(n, co);
                debug_assert_eq!(p.len(), plane);
                for v in p {
                    *v += b;
                }
            }
        }
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.take().ok_or_else(|| NnError::BackwardWithoutForward {
            layer: self.name.clone(),
        })?;
        // dw[ci][co][ky][kx] = sum g-as-input correlated with x-as-output.
        let dw = kernels::correlate_weight_grad(g, &x, self.in_channels, self.kernel, self.stride);
        for (a, b) in self.weight_grad.iter_mut().zip(&dw) {
            *a += b;
        }
        for (a, b) in self.bias_grad.iter_mut().zip(kernels::channel_sums(g)) {
            *a += b;
        }
        Ok(kernels::correlate(
            g,
            &self.weight,
            None,
            self.in_channels,
            self.kernel,
            self.stride,
        ))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Selu {
    cached_input: Option<Tensor>,
}

impl Selu {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for v in out.data_mut() {
            *v = if *v > 0.0 {
                SELU_LAMBDA * *v
            } else {
                SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
            };
        }
        self.cached_input = Some(x.clone());
        out
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.take().ok_or_else(|| NnError::BackwardWithoutForward {
            layer: "selu".into(),
        })?;
        let mut out = g.clone();
        for (gv, xv) in out.data_mut().iter_mut().zip(x.data()) {
            *gv *= if *xv > 0.0 {
                SELU_LAMBDA
            } else {
                SELU_LAMBDA * SELU_ALPHA * xv.exp()
            };
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    phase: Phase,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma_grad: Vec<f64>,
    pub beta_grad: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            gamma_grad: vec![0.0; channels],
            beta_grad: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BATCHNORM_MOMENTUM,
            eps: BATCHNORM_EPS,
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let (n_batch, c, h, w) = x.shape();
        if c != self.channels {
            return Err(NnError::ShapeMismatch {
                layer: self.name.clone(),
                expected: format!("{} channels", self.channels),
                actual: format!("{c} channels"),
            });
        }
        let count = (n_batch * h * w) as f64;
        let mut x_hat = x.clone();
        let mut inv_std = vec![0.0; c];
        match phase {
            Phase::Train => {
                for ci in 0..c {
                    let mut sum = 0.0;
                    for n in 0..n_batch {
                        sum += x.plane(n, ci).iter().sum::<f64>();
                    }
                    let mean = sum / count;
                    let mut var_sum = 0.0;
                    for n in 0..n_batch {
                        for &v in x.plane(n, ci) {
                            var_sum += (v - mean) * (v - mean);
                        }
                    }
                    let var = var_sum / count;
                    let istd = 1.0 / (var + self.eps).sqrt();
                    inv_std[ci] = istd;
                    for n in 0..n_batch {
                        for v in x_hat.plane_mut(n, ci) {
                            *v = (*v - mean) * istd;
                        }
                    }
                    // Running stats use the unbiased variance, as is
                    // conventional for evaluation-time normalization.
                    let unbiased = if count > 1.0 {
                        var * count / (count - 1.0)
                    } else {
                        var
                    };
                    self.running_mean[ci] =
                        (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                    self.running_var[ci] =
                        (1.0 - self.momentum) * self.running_var[ci] + self.momentum * unbiased;
                }
            }
            Phase::Eval => {
                for ci in 0..c {
                    let istd = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                    inv_std[ci] = istd;
                    let mean = self.running_mean[ci];
                    for n in 0..n_batch {
                        for v in x_hat.plane_mut(n, ci) {
                            *v = (*v - mean) * istd;
                        }
                    }
                }
            }
        }
        let mut out = x_hat.clone();
        for ci in 0..c {
            let (g, b) = (self.gamma[ci], self.beta[ci]);
            for n in 0..n_batch {
                for v in out.plane_mut(n, ci) {
                    *v = g * *v + b;
                }
            }
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            phase,
        });
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| NnError::BackwardWithoutForward {
            layer: self.name.clone(),
        })?;
        let (n_batch, c, h, w) = g.shape();
        let count = (n_batch * h * w) as f64;
        let mut out = Tensor::zeros(n_batch, c, h, w);
        for ci in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for n in 0..n_batch {
                for (&gv, &xh) in g.plane(n, ci).iter().zip(cache.x_hat.plane(n, ci)) {
                    sum_g += gv;
                    sum_gx += gv * xh;
                }
            }
            self.beta_grad[ci] += sum_g;
            self.gamma_grad[ci] += sum_gx;
            let gamma_istd = self.gamma[ci] * cache.inv_std[ci];
            match cache.phase {
                Phase::Train => {
                    for n in 0..n_batch {
                        let gp = g.plane(n, ci);
                        let xp = cache.x_hat.plane(n, ci);
                        let op = out.plane_mut(n, ci);
                        for i in 0..gp.len() {
                            op[i] = gamma_istd
                                * (gp[i] - sum_g / count - xp[i] * sum_gx / count);
                        }
                    }
                }
                Phase::Eval => {
                    for n in 0..n_batch {
                        let gp = g.plane(n, ci);
                        let op = out.plane_mut(n, ci);
                        for i in 0..gp.len() {
                            op[i] = gamma_istd * gp[i];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    cached_mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability {p}");
        Self {
            p,
            cached_mask: None,
        }
    }

    fn forward(&mut self, x: &Tensor, phase: Phase, rng: &mut ChaCha8Rng) -> Tensor {
        match phase {
            Phase::Eval => {
                self.cached_mask = Some(vec![1.0; x.len()]);
                x.clone()
            }
            Phase::Train => {
                let mut out = x.clone();
                let mask: Vec<f64> = if self.p == 0.0 {
                    vec![1.0; x.len()]
                } else {
                    let keep = 1.0 - self.p;
                    (0..x.len())
                        .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                        .collect()
                };
                for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                self.cached_mask = Some(mask);
                out
            }
        }
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let mask = self.cached_mask.take().ok_or_else(|| NnError::BackwardWithoutForward {
            layer: "dropout".into(),
        })?;
        let mut out = g.clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    TConv(TConv2d),
    Selu(Selu),
    BatchNorm(BatchNorm2d),
    Dropout(Dropout),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, phase: Phase, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::TConv(l) => l.forward(x),
            Layer::Selu(l) => Ok(l.forward(x)),
            Layer::BatchNorm(l) => l.forward(x, phase),
            Layer::Dropout(l) => Ok(l.forward(x, phase, rng)),
        }
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(g),
            Layer::TConv(l) => l.backward(g),
            Layer::Selu(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Conv(l) => {
                l.weight_grad.fill(0.0);
                l.bias_grad.fill(0.0);
            }
            Layer::TConv(l) => {
                l.weight_grad.fill(0.0);
                l.bias_grad.fill(0.0);
            }
            Layer::BatchNorm(l) => {
                l.gamma_grad.fill(0.0);
                l.beta_grad.fill(0.0);
            }
            Layer::Selu(_) | Layer::Dropout(_) => {}
        }
    }

    /// Trainable parameters, in a stable order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        match self {
            Layer::Conv(l) => vec![
                ParamMut {
                    name: format!("{}.weight", l.name),
                    value: &mut l.weight,
                    grad: &mut l.weight_grad,
                },
                ParamMut {
                    name: format!("{}.bias", l.name),
                    value: &mut l.bias,
                    grad: &mut l.bias_grad,
                },
            ],
            Layer::TConv(l) => vec![
                ParamMut {
                    name: format!("{}.weight", l.name),
                    value: &mut l.weight,
                    grad: &mut l.weight_grad,
                },
                ParamMut {
                    name: format!("{}.bias", l.name),
                    value: &mut l.bias,
                    grad: &mut l.bias_grad,
                },
            ],
            Layer::BatchNorm(l) => vec![
                ParamMut {
                    name: format!("{}.gamma", l.name),
                    value: &mut l.gamma,
                    grad: &mut l.gamma_grad,
                },
                ParamMut {
                    name: format!("{}.beta", l.name),
                    value: &mut l.beta,
                    grad: &mut l.beta_grad,
                },
            ],
            Layer::Selu(_) | Layer::Dropout(_) => vec![],
        }
    }

    /// Everything a checkpoint must persist: trainable parameters plus
    /// batchnorm running statistics.
    pub fn state_mut(&mut self) -> Vec<StateMut<'_>> {
        match self {
            Layer::Conv(l) => vec![
                StateMut {
                    name: format!("{}.weight", l.name),
                    shape: vec![l.out_channels, l.in_channels, l.kernel, l.kernel],
                    value: &mut l.weight,
                },
                StateMut {
                    name: format!("{}.bias", l.name),
                    shape: vec![l.out_channels],
                    value: &mut l.bias,
                },
            ],
            Layer::TConv(l) => vec![
                StateMut {
                    name: format!("{}.weight", l.name),
                    shape: vec![l.in_channels, l.out_channels, l.kernel, l.kernel],
                    value: &mut l.weight,
                },
                StateMut {
                    name: format!("{}.bias", l.name),
                    shape: vec![l.out_channels],
                    value: &mut l.bias,
                },
            ],
            Layer::BatchNorm(l) => vec![
                StateMut {
                    name: format!("{}.gamma", l.name),
                    shape: vec![l.channels],
                    value: &mut l.gamma,
                },
                StateMut {
                    name: format!("{}.beta", l.name),
                    shape: vec![l.channels],
                    value: &mut l.beta,
                },
                StateMut {
                    name: format!("{}.running_mean", l.name),
                    shape: vec![l.channels],
                    value: &mut l.running_mean,
                },
                StateMut {
                    name: format!("{}.running_var", l.name),
                    shape: vec![l.channels],
                    value: &mut l.running_var,
                },
            ],
            Layer::Selu(_) | Layer::Dropout(_) => vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn selu_fixed_point_at_zero() {
        let mut selu = Selu::default();
        let x = Tensor::from_vec(1, 1, 1, 3, vec![0.0, 1.0, -1.0]);
        let y = selu.forward(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - SELU_LAMBDA).abs() < 1e-12);
        assert!((y.data()[2] - SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut conv = Conv2d::new("conv", 1, 1, 1, 1);
        conv.weight[0] = 1.0;
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn stride2_conv_halves_dims_and_tconv_restores_them() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new("c", 3, 4, 5, 2);
        conv.init_lecun(&mut rng);
        let x = Tensor::zeros(2, 3, 32, 128);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), (2, 4, 16, 64));

        let mut tconv = TConv2d::new("t", 4, 3, 5, 2);
        tconv.init_lecun(&mut rng);
        let z = tconv.forward(&y).unwrap();
        assert_eq!(z.shape(), (2, 3, 32, 128));
    }

    #[test]
    fn stride2_on_odd_dims_is_an_error() {
        let mut conv = Conv2d::new("c", 1, 1, 5, 2);
        let x = Tensor::zeros(1, 1, 7, 8);
        assert!(matches!(
            conv.forward(&x),
            Err(NnError::OddSpatialDims { .. })
        ));
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut conv = Conv2d::new("c", 1, 1, 5, 1);
        let g = Tensor::zeros(1, 1, 4, 4);
        assert!(matches!(
            conv.backward(&g),
            Err(NnError::BackwardWithoutForward { .. })
        ));
    }

    #[test]
    fn dropout_p0_is_identity_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut drop = Dropout::new(0.0);
        let x = Tensor::from_vec(1, 1, 1, 4, vec![1.0, -2.0, 3.0, 4.0]);
        let y = drop.forward(&x, Phase::Train, &mut rng);
        assert_eq!(y.data(), x.data());
        let g = Tensor::from_vec(1, 1, 1, 4, vec![0.5, 0.5, 0.5, 0.5]);
        let gx = drop.backward(&g).unwrap();
        assert_eq!(gx.data(), g.data());
    }

    #[test]
    fn batchnorm_train_mode_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm2d::new("bn", 2);
        bn.gamma = vec![1.5, 0.5];
        bn.beta = vec![-0.25, 2.0];
        let n = 4 * 6 * 6;
        let data: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let x = Tensor::from_vec(4, 2, 6, 6, data);
        let y = bn.forward(&x, Phase::Train).unwrap();
        for ci in 0..2 {
            let mut vals = Vec::new();
            for b in 0..4 {
                vals.extend_from_slice(y.plane(b, ci));
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!((mean - bn.beta[ci]).abs() < 1e-5, "mean {mean}");
            assert!((var - bn.gamma[ci] * bn.gamma[ci]).abs() < 1e-5, "var {var}");
        }
    }
}
