//! Convolutional autoencoder assembly.
//!
//! The encoder lifts the input channels to `d_ch` with one convolution, then
//! applies `n_outer` same-size, `n_reduce` stride-2 and `n_inner` same-size
//! convolutions. A dropout layer sits on the latent tensor. The decoder
//! mirrors the encoder with transposed convolutions, restores the input
//! channel count, and a final lone transposed convolution produces the
//! single-channel prediction. Every convolution is 5x5 and is followed by
//! SELU and batch normalization except the final output layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gridfill_core::derive_seed;

use crate::error::{NnError, Result};
use crate::layers::{BatchNorm2d, Conv2d, Dropout, Layer, ParamMut, Phase, Selu, StateMut, TConv2d};
use crate::tensor::Tensor;

pub const KERNEL_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderConfig {
    pub n_outer: usize,
    pub n_reduce: usize,
    pub n_inner: usize,
    pub d_ch: usize,
    pub n_days: usize,
    pub include_masks: bool,
    pub use_posenc: bool,
    pub dropout_p: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            n_outer: 1,
            n_reduce: 0,
            n_inner: 0,
            d_ch: 64,
            n_days: 1,
            include_masks: true,
            use_posenc: false,
            dropout_p: 0.0,
            width: 32,
            height: 128,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.n_outer + self.n_reduce + self.n_inner;
        if self.n_outer < 1 {
            return Err(NnError::InvalidConfig("n_outer must be >= 1".into()));
        }
        if self.n_reduce > 5 {
            return Err(NnError::InvalidConfig("n_reduce must be <= 5".into()));
        }
        if !(1..=10).contains(&sum) {
            return Err(NnError::InvalidConfig(format!(
                "n_outer + n_reduce + n_inner = {sum} outside [1, 10]"
            )));
        }
        if ![1, 3, 11].contains(&self.n_days) {
            return Err(NnError::InvalidConfig(format!(
                "n_days {} not one of 1, 3, 11",
                self.n_days
            )));
        }
        if self.d_ch == 0 {
            return Err(NnError::InvalidConfig("d_ch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NnError::InvalidConfig(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        let div = 1usize << self.n_reduce;
        if self.width % div != 0 || self.height % div != 0 {
            return Err(NnError::InvalidConfig(format!(
                "{}x{} not divisible by 2^{}",
                self.width, self.height, self.n_reduce
            )));
        }
        Ok(())
    }

    /// Input channel count: one anomaly channel per day, optionally one mask
    /// channel per day, optionally two positional-encoding channels.
    pub fn d_in(&self) -> usize {
        self.n_days * (1 + usize::from(self.include_masks)) + 2 * usize::from(self.use_posenc)
    }

    /// Latent dimensionality `d_ch * (W / 2^n_reduce) * (H / 2^n_reduce)`.
    pub fn latent_dim(&self) -> usize {
        let div = 1usize << self.n_reduce;
        self.d_ch * (self.width / div) * (self.height / div)
    }

    /// Number of convolutional layers (conv + tconv) in the assembled model.
    pub fn conv_layer_count(&self) -> usize {
        2 * (self.n_outer + self.n_reduce + self.n_inner) + 3
    }

    /// Exact trainable parameter total: convolution weights and biases plus
    /// batchnorm scale/shift.
    pub fn param_count(&self) -> usize {
        let k2 = KERNEL_SIZE * KERNEL_SIZE;
        let (d_in, d_ch) = (self.d_in(), self.d_ch);
        let sum = self.n_outer + self.n_reduce + self.n_inner;
        let lift = d_in * d_ch * k2 + d_ch + 2 * d_ch;
        let body = 2 * sum * (d_ch * d_ch * k2 + d_ch + 2 * d_ch);
        let unlift = d_ch * d_in * k2 + d_in + 2 * d_in;
        let fin = d_in * k2 + 1;
        lift + body + unlift + fin
    }
}

/// All (n_outer, n_reduce, n_inner) combinations satisfying the family
/// constraints: n_outer >= 1, 0 <= n_reduce <= 5, n_inner >= 0 and
/// 1 <= sum <= 10. Enumerates to exactly 200 configurations.
pub fn enumerate_configs() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for n_outer in 1..=10usize {
        for n_reduce in 0..=5usize {
            for n_inner in 0..=9usize {
                let sum = n_outer + n_reduce + n_inner;
                if (1..=10).contains(&sum) {
                    out.push((n_outer, n_reduce, n_inner));
                }
            }
        }
    }
    out
}

/// Two-channel positional encoding: channel 0 sweeps -1..1 left to right,
/// channel 1 sweeps -1..1 top to bottom, both endpoint-inclusive.
pub fn positional_encoding(width: usize, height: usize) -> Tensor {
    assert!(width >= 2 && height >= 2);
    let mut t = Tensor::zeros(1, 2, height, width);
    for y in 0..height {
        for x in 0..width {
            let hx = -1.0 + 2.0 * x as f64 / (width - 1) as f64;
            let vy = -1.0 + 2.0 * y as f64 / (height - 1) as f64;
            t.set(0, 0, y, x, hx);
            t.set(0, 1, y, x, vy);
        }
    }
    t
}

#[derive(Debug, Clone)]
pub struct ModelInstance {
    pub config: AutoencoderConfig,
    pub layers: Vec<Layer>,
    dropout_rng: ChaCha8Rng,
}

/// Builds and initializes the model; weights are LeCun-normal draws from a
/// stream seeded by `rng_seed`.
pub fn build_model(config: &AutoencoderConfig, rng_seed: u64) -> Result<ModelInstance> {
    config.validate()?;
    let (d_in, d_ch) = (config.d_in(), config.d_ch);
    let mut layers: Vec<Layer> = Vec::new();
    let mut conv_idx = 0usize;

    let mut push_conv = |layers: &mut Vec<Layer>, c_in: usize, c_out: usize, stride: usize| {
        let name = format!("enc{conv_idx}");
        layers.push(Layer::Conv(Conv2d::new(&name, c_in, c_out, KERNEL_SIZE, stride)));
        layers.push(Layer::Selu(Selu::default()));
        layers.push(Layer::BatchNorm(BatchNorm2d::new(format!("{name}.bn"), c_out)));
        conv_idx += 1;
    };

    push_conv(&mut layers, d_in, d_ch, 1);
    for _ in 0..config.n_outer {
        push_conv(&mut layers, d_ch, d_ch, 1);
    }
    for _ in 0..config.n_reduce {
        push_conv(&mut layers, d_ch, d_ch, 2);
    }
    for _ in 0..config.n_inner {
        push_conv(&mut layers, d_ch, d_ch, 1);
    }

    layers.push(Layer::Dropout(Dropout::new(config.dropout_p)));

    let mut tconv_idx = 0usize;
    let mut push_tconv =
        |layers: &mut Vec<Layer>, c_in: usize, c_out: usize, stride: usize, terminal: bool| {
            let name = if terminal {
                "out".to_string()
            } else {
                format!("dec{tconv_idx}")
            };
            layers.push(Layer::TConv(TConv2d::new(&name, c_in, c_out, KERNEL_SIZE, stride)));
            if !terminal {
                layers.push(Layer::Selu(Selu::default()));
                layers.push(Layer::BatchNorm(BatchNorm2d::new(format!("{name}.bn"), c_out)));
            }
            tconv_idx += 1;
        };

    for _ in 0..config.n_inner {
        push_tconv(&mut layers, d_ch, d_ch, 1, false);
    }
    for _ in 0..config.n_reduce {
        push_tconv(&mut layers, d_ch, d_ch, 2, false);
    }
    for _ in 0..config.n_outer {
        push_tconv(&mut layers, d_ch, d_ch, 1, false);
    }
    push_tconv(&mut layers, d_ch, d_in, 1, false);
    push_tconv(&mut layers, d_in, 1, 1, true);

    let mut model = ModelInstance {
        config: config.clone(),
        layers,
        dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "dropout", 0)),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "init", 0));
    for layer in &mut model.layers {
        match layer {
            Layer::Conv(c) => c.init_lecun(&mut init_rng),
            Layer::TConv(c) => c.init_lecun(&mut init_rng),
            _ => {}
        }
    }
    Ok(model)
}

impl ModelInstance {
    /// Assembles a model from an explicit layer list; used by harnesses that
    /// need degenerate stacks (identity kernels, single layers).
    pub fn from_layers(config: AutoencoderConfig, layers: Vec<Layer>, rng_seed: u64) -> Self {
        Self {
            config,
            layers,
            dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "dropout", 0)),
        }
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<Tensor> {
        let mut t = x.clone();
        for layer in &mut self.layers {
            t = layer.forward(&t, phase, &mut self.dropout_rng)?;
        }
        Ok(t)
    }

    /// Backpropagates `grad` (shaped like the model output) through every
    /// layer; parameter gradients accumulate into the layers' grad slots.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn state_mut(&mut self) -> Vec<StateMut<'_>> {
        self.layers.iter_mut().flat_map(|l| l.state_mut()).collect()
    }

    pub fn param_shapes(&mut self) -> Vec<usize> {
        self.params_mut().iter().map(|p| p.value.len()).collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Reseeds the dropout stream; used to freeze masks for gradient checks
    /// and to derive per-run streams.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_dropout_p(&mut self, p: f64) {
        for layer in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                d.p = p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_counts_span_five_to_twenty_three() {
        let mut config = AutoencoderConfig {
            n_outer: 1,
            n_reduce: 0,
            n_inner: 0,
            ..Default::default()
        };
        assert_eq!(config.conv_layer_count(), 5);
        config.n_outer = 4;
        config.n_reduce = 3;
        config.n_inner = 3;
        assert_eq!(config.conv_layer_count(), 23);
    }

    #[test]
    fn d_in_counts_channels() {
        let config = AutoencoderConfig {
            n_days: 3,
            include_masks: true,
            use_posenc: true,
            ..Default::default()
        };
        assert_eq!(config.d_in(), 8);
    }

    #[test]
    fn posenc_endpoints() {
        let t = positional_encoding(4, 2);
        let row: Vec<f64> = (0..4).map(|x| t.at(0, 0, 0, x)).collect();
        let want = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (a, b) in row.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // Constant along the orthogonal axis.
        assert_eq!(t.at(0, 0, 0, 2), t.at(0, 0, 1, 2));
        let t2 = positional_encoding(2, 3);
        assert_eq!(t2.at(0, 0, 0, 0), -1.0);
        assert_eq!(t2.at(0, 0, 0, 1), 1.0);
    }

    #[test]
    fn built_model_matches_param_arithmetic() {
        let config = AutoencoderConfig {
            n_outer: 2,
            n_reduce: 1,
            n_inner: 1,
            d_ch: 8,
            n_days: 3,
            include_masks: true,
            use_posenc: true,
            width: 16,
            height: 16,
            ..Default::default()
        };
        let mut model = build_model(&config, 1).unwrap();
        assert_eq!(model.param_count(), config.param_count());
    }

    #[test]
    fn degenerate_single_channel_param_count() {
        // d_ch=1, d_in=1, one outer layer: hand-computed sum.
        let config = AutoencoderConfig {
            n_outer: 1,
            n_reduce: 0,
            n_inner: 0,
            d_ch: 1,
            n_days: 1,
            include_masks: false,
            use_posenc: false,
            width: 8,
            height: 8,
            ..Default::default()
        };
        // lift 1*1*25+1+2, two body layers (1*1*25+1+2) * 2, unlift
        // 1*1*25+1+2, final 1*25+1.
        assert_eq!(config.param_count(), 28 + 56 + 28 + 26);
        let mut model = build_model(&config, 0).unwrap();
        assert_eq!(model.param_count(), 138);
    }
}
