//! Training: noise imputation, the masked distance, example assembly and the
//! minibatch loop.
//!
//! Inputs are additionally-damaged fields with Gaussian noise imputed at
//! damaged cells; the loss is evaluated against the original field on the
//! original observation mask only, so the model is free to speculate inside
//! the damaged regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridfill_core::cube::{AnomalyCube, MaskCube};
use gridfill_core::derive_seed;
use gridfill_core::error::GridError;
use gridfill_core::split::SplitSpec;

use crate::error::{NnError, Result};
use crate::layers::Phase;
use crate::model::{build_model, positional_encoding, AutoencoderConfig, ModelInstance};
use crate::optim::{schedule_value_with, OptimizerParams, OptimizerState, FLAT_FRACTION};
use crate::tensor::Tensor;

/// Marginal distribution of the imputed noise, in degrees C.
#[derive(Debug, Clone)]
pub struct NoiseParams {
    pub mu: f64,
    pub sigma: f64,
    pub rng_seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            mu: -0.0365,
            sigma: 0.683,
            rng_seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self { rng_seed, ..*self }
    }
}

/// Replaces masked-out master cells with independent `N(mu, sigma^2)` draws;
/// observed cells pass through bit-exact and non-master cells become 0.
///
/// Draws are made per day from a stream seeded by
/// `derive_seed(rng_seed, "noise-day", day)`, in row-major cell order, one
/// draw per imputed cell; a day's noise therefore does not depend on which
/// other days are materialized.
pub fn impute_noise(
    cube: &AnomalyCube,
    mask: &MaskCube,
    master: &[u8],
    params: &NoiseParams,
) -> AnomalyCube {
    let (days, width, height) = (cube.days(), cube.width(), cube.height());
    assert_eq!(master.len(), width * height);
    assert_eq!(mask.days(), days);
    let mut out = cube.clone();
    *out.mask_mut() = mask.clone();
    let normal = rand_distr::Normal::new(params.mu, params.sigma).unwrap();
    for day in 0..days {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.rng_seed, "noise-day", day as u64));
        let bits = mask.day_slice(day);
        let values = out.day_values_mut(day);
        for i in 0..width * height {
            if master[i] == 0 {
                values[i] = 0.0;
            } else if bits[i] == 0 {
                values[i] = rng.sample(normal) as f32;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

/// Masked distance of Eq-style form: `|| (y - o) .* mask || / #observed`.
/// The denominator is the observed-cell count for both norms.
pub fn masked_distance(y: &[f64], o: &[f64], mask: &[u8], norm: Norm) -> Result<f64> {
    assert_eq!(y.len(), o.len());
    assert_eq!(y.len(), mask.len());
    let count: usize = mask.iter().map(|&m| m as usize).sum();
    if count == 0 {
        return Err(NnError::Grid(GridError::EmptyMask));
    }
    let total = match norm {
        Norm::L1 => y
            .iter()
            .zip(o)
            .zip(mask)
            .map(|((a, b), &m)| if m == 1 { (a - b).abs() } else { 0.0 })
            .sum::<f64>(),
        Norm::L2 => y
            .iter()
            .zip(o)
            .zip(mask)
            .map(|((a, b), &m)| {
                if m == 1 {
                    (a - b) * (a - b)
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            .sqrt(),
    };
    Ok(total / count as f64)
}

/// Dataset view used by training and inference: the originally observed
/// anomalies (mask = original observation mask) and the master mask.
#[derive(Debug, Clone, Copy)]
pub struct DatasetRef<'a> {
    pub observed: &'a AnomalyCube,
    pub master: &'a [u8],
}

/// Day window of length `n_days` centered on `day`, clamped to the record.
pub fn window_days(day: usize, n_days: usize, total_days: usize) -> Vec<usize> {
    let half = n_days / 2;
    (0..n_days)
        .map(|i| (day + i).saturating_sub(half).min(total_days - 1))
        .collect()
}

/// Assembles one model input from an already noise-imputed cube: anomaly
/// channels for the window days, then (optionally) their input masks, then
/// the positional encoding.
pub fn assemble_input(
    imputed: &AnomalyCube,
    input_mask: &MaskCube,
    day: usize,
    config: &AutoencoderConfig,
    posenc: Option<&Tensor>,
) -> Tensor {
    let (w, h) = (imputed.width(), imputed.height());
    let mut input = Tensor::zeros(1, config.d_in(), h, w);
    let days = window_days(day, config.n_days, imputed.days());
    let mut ch = 0usize;
    for &d in &days {
        let plane = input.plane_mut(0, ch);
        for (dst, &src) in plane.iter_mut().zip(imputed.day_values(d)) {
            *dst = src as f64;
        }
        ch += 1;
    }
    if config.include_masks {
        for &d in &days {
            let plane = input.plane_mut(0, ch);
            for (dst, &bit) in plane.iter_mut().zip(input_mask.day_slice(d)) {
                *dst = bit as f64;
            }
            ch += 1;
        }
    }
    if config.use_posenc {
        let pe = posenc.expect("posenc tensor required when use_posenc");
        input.plane_mut(0, ch).copy_from_slice(pe.plane(0, 0));
        input.plane_mut(0, ch + 1).copy_from_slice(pe.plane(0, 1));
    }
    input
}

/// Builds one training example for `day`: the noise-imputed additionally
/// damaged input window, the original field as target, and the original
/// observation mask as loss mask.
pub fn make_example(
    data: &DatasetRef,
    day: usize,
    damage: &MaskCube,
    config: &AutoencoderConfig,
    noise: &NoiseParams,
) -> Result<(Tensor, Vec<f64>, Vec<u8>)> {
    let m_orig = data.observed.mask();
    for &d in &window_days(day, config.n_days, data.observed.days()) {
        for (i, (&new, &old)) in damage
            .day_slice(d)
            .iter()
            .zip(m_orig.day_slice(d))
            .enumerate()
        {
            if new == 1 && old == 0 {
                return Err(NnError::Grid(GridError::MaskOutsideMaster {
                    day: d,
                    row: i / data.observed.width(),
                    col: i % data.observed.width(),
                }));
            }
        }
    }
    let imputed = impute_noise(data.observed, damage, data.master, noise);
    let posenc = config
        .use_posenc
        .then(|| positional_encoding(config.width, config.height));
    let input = assemble_input(&imputed, damage, day, config, posenc.as_ref());
    let target: Vec<f64> = data
        .observed
        .day_values(day)
        .iter()
        .map(|&v| v as f64)
        .collect();
    let loss_mask = m_orig.day_slice(day).to_vec();
    Ok((input, target, loss_mask))
}

#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub dropout_p: f64,
    pub norm: Norm,
    pub flat_fraction: f64,
    /// Marginal of the imputed noise; a dataset property, not a tuning knob.
    pub noise_mu: f64,
    pub noise_sigma: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        let noise = NoiseParams::default();
        Self {
            epochs: 50,
            batch_size: 32,
            max_lr: 0.003,
            beta1: 0.95,
            beta2: 0.999,
            weight_decay: 0.3,
            dropout_p: 0.0,
            norm: Norm::L1,
            flat_fraction: FLAT_FRACTION,
            noise_mu: noise.mu,
            noise_sigma: noise.sigma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_hidden_loss: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelInstance,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_hidden_loss: f64,
    pub epochs: Vec<EpochStats>,
}

struct BatchBuffers {
    input: Tensor,
    target: Vec<f64>,
    masks: Vec<u8>,
}

fn assemble_batch(
    days: &[usize],
    imputed: &AnomalyCube,
    observed: &AnomalyCube,
    damage: &MaskCube,
    config: &AutoencoderConfig,
    posenc: Option<&Tensor>,
) -> BatchBuffers {
    let (w, h) = (observed.width(), observed.height());
    let plane = w * h;
    let n = days.len();
    let mut input = Tensor::zeros(n, config.d_in(), h, w);
    let mut target = vec![0.0f64; n * plane];
    let mut masks = vec![0u8; n * plane];
    for (bi, &day) in days.iter().enumerate() {
        let one = assemble_input(imputed, damage, day, config, posenc);
        let src = one.data();
        let dst_off = bi * config.d_in() * plane;
        input.data_mut()[dst_off..dst_off + src.len()].copy_from_slice(src);
        for (i, &v) in observed.day_values(day).iter().enumerate() {
            target[bi * plane + i] = v as f64;
        }
        masks[bi * plane..(bi + 1) * plane].copy_from_slice(observed.mask().day_slice(day));
    }
    BatchBuffers {
        input,
        target,
        masks,
    }
}

/// Mean per-example masked distance over the batch, and the loss gradient
/// with respect to the model output.
fn batch_loss_and_grad(
    out: &Tensor,
    target: &[f64],
    masks: &[u8],
    norm: Norm,
) -> Result<(f64, Tensor)> {
    let (n, _, h, w) = out.shape();
    let plane = h * w;
    let mut grad = Tensor::zeros(n, 1, h, w);
    let mut loss = 0.0f64;
    for bi in 0..n {
        let o = out.plane(bi, 0);
        let y = &target[bi * plane..(bi + 1) * plane];
        let m = &masks[bi * plane..(bi + 1) * plane];
        let count: usize = m.iter().map(|&b| b as usize).sum();
        if count == 0 {
            return Err(NnError::Grid(GridError::EmptyMask));
        }
        let g = grad.plane_mut(bi, 0);
        match norm {
            Norm::L1 => {
                let mut total = 0.0;
                for i in 0..plane {
                    if m[i] == 1 {
                        let d = o[i] - y[i];
                        total += d.abs();
                        g[i] = d.signum() / (count as f64 * n as f64);
                    }
                }
                loss += total / count as f64;
            }
            Norm::L2 => {
                let mut sq = 0.0;
                for i in 0..plane {
                    if m[i] == 1 {
                        let d = o[i] - y[i];
                        sq += d * d;
                    }
                }
                let root = sq.sqrt();
                if root > 0.0 {
                    for i in 0..plane {
                        if m[i] == 1 {
                            g[i] = (o[i] - y[i]) / (root * count as f64 * n as f64);
                        }
                    }
                }
                loss += root / count as f64;
            }
        }
    }
    Ok((loss / n as f64, grad))
}

/// Mean masked distance over `days`, evaluated in eval mode with the given
/// per-day loss masks. Days whose mask is empty are skipped.
fn evaluate(
    model: &mut ModelInstance,
    days: &[usize],
    imputed: &AnomalyCube,
    observed: &AnomalyCube,
    damage: &MaskCube,
    config: &AutoencoderConfig,
    posenc: Option<&Tensor>,
    mask_of_day: impl Fn(usize) -> Vec<u8>,
    norm: Norm,
    batch_size: usize,
) -> Result<Option<f64>> {
    let plane = observed.width() * observed.height();
    let mut total = 0.0f64;
    let mut counted = 0usize;
    for chunk in days.chunks(batch_size.max(1)) {
        let batch = assemble_batch(chunk, imputed, observed, damage, config, posenc);
        let out = model.forward(&batch.input, Phase::Eval)?;
        for (bi, &day) in chunk.iter().enumerate() {
            let mask = mask_of_day(day);
            if mask.iter().all(|&b| b == 0) {
                continue;
            }
            let y: Vec<f64> = observed.day_values(day).iter().map(|&v| v as f64).collect();
            let o = out.plane(bi, 0);
            debug_assert_eq!(o.len(), plane);
            total += masked_distance(o, &y, &mask, norm)?;
            counted += 1;
        }
    }
    Ok((counted > 0).then(|| total / counted as f64))
}

/// Trains a fresh model for `hyper.epochs` epochs of minibatch optimization
/// over the split's training days.
///
/// Returns the final epoch's mean training loss, the validation loss on the
/// original observation mask, and the validation loss restricted to the
/// additionally hidden cells (observed originally, removed by `damage`).
pub fn train_model(
    data: &DatasetRef,
    split: &SplitSpec,
    damage: &MaskCube,
    config: &AutoencoderConfig,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.dropout_p = hyper.dropout_p;
    config.validate()?;
    let observed = data.observed;
    let total_days = observed.days();
    if split.total_days != total_days {
        return Err(NnError::InvalidConfig(format!(
            "split covers {} days, dataset has {total_days}",
            split.total_days
        )));
    }

    let mut model = build_model(&config, derive_seed(seed, "model", 0))?;
    model.reseed_dropout(derive_seed(seed, "dropout", 0));
    let posenc = config
        .use_posenc
        .then(|| positional_encoding(config.width, config.height));

    let train_days = split.training_days();
    let val_days = split.validation_days();
    let batches_per_epoch = train_days.len().div_ceil(hyper.batch_size.max(1));
    let total_steps = (hyper.epochs * batches_per_epoch).max(1);

    let opt_params = OptimizerParams {
        max_lr: hyper.max_lr,
        beta1: hyper.beta1,
        beta2: hyper.beta2,
        weight_decay: hyper.weight_decay,
        ..Default::default()
    };
    let mut optimizer = OptimizerState::new(opt_params, &model.param_shapes());

    // Validation inputs use one fixed noise draw for the whole run.
    let val_noise = NoiseParams {
        mu: hyper.noise_mu,
        sigma: hyper.noise_sigma,
        rng_seed: derive_seed(seed, "val-noise", 0),
    };
    let val_imputed = impute_noise(observed, damage, data.master, &val_noise);

    let hidden_mask_of = |day: usize| -> Vec<u8> {
        observed
            .mask()
            .day_slice(day)
            .iter()
            .zip(damage.day_slice(day))
            .map(|(&orig, &dam)| orig & (1 - dam))
            .collect()
    };
    let orig_mask_of = |day: usize| observed.mask().day_slice(day).to_vec();

    let mut epoch_log: Vec<EpochStats> = Vec::new();
    let mut step = 0usize;

    for epoch in 0..hyper.epochs {
        let noise = NoiseParams {
            mu: hyper.noise_mu,
            sigma: hyper.noise_sigma,
            rng_seed: derive_seed(seed, "epoch-noise", epoch as u64),
        };
        let imputed = impute_noise(observed, damage, data.master, &noise);

        let mut order = train_days.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle", epoch as u64));
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0f64;
        let mut epoch_batches = 0usize;
        let mut last_lr = 0.0f64;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch = assemble_batch(chunk, &imputed, observed, damage, &config, posenc.as_ref());
            let out = model.forward(&batch.input, Phase::Train)?;
            let (loss, grad) = batch_loss_and_grad(&out, &batch.target, &batch.masks, hyper.norm)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            model.zero_grad();
            model.backward(&grad)?;
            let lr = schedule_value_with(step, total_steps, hyper.max_lr, hyper.flat_fraction);
            optimizer.step(lr, model.params_mut())?;
            step += 1;
            last_lr = lr;
            epoch_loss += loss;
            epoch_batches += 1;
        }
        let train_loss = epoch_loss / epoch_batches.max(1) as f64;

        let val_loss = evaluate(
            &mut model,
            &val_days,
            &val_imputed,
            observed,
            damage,
            &config,
            posenc.as_ref(),
            orig_mask_of,
            hyper.norm,
            hyper.batch_size,
        )?
        .unwrap_or(f64::NAN);
        let val_hidden_loss = evaluate(
            &mut model,
            &val_days,
            &val_imputed,
            observed,
            damage,
            &config,
            posenc.as_ref(),
            hidden_mask_of,
            hyper.norm,
            hyper.batch_size,
        )?
        .unwrap_or(val_loss);
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        epoch_log.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_hidden_loss,
            lr: last_lr,
        });
    }

    // Zero-epoch runs report the initialization losses.
    if hyper.epochs == 0 {
        let train_loss = evaluate(
            &mut model,
            &train_days,
            &val_imputed,
            observed,
            damage,
            &config,
            posenc.as_ref(),
            orig_mask_of,
            hyper.norm,
            hyper.batch_size,
        )?
        .unwrap_or(f64::NAN);
        let val_loss = evaluate(
            &mut model,
            &val_days,
            &val_imputed,
            observed,
            damage,
            &config,
            posenc.as_ref(),
            orig_mask_of,
            hyper.norm,
            hyper.batch_size,
        )?
        .unwrap_or(f64::NAN);
        let val_hidden_loss = evaluate(
            &mut model,
            &val_days,
            &val_imputed,
            observed,
            damage,
            &config,
            posenc.as_ref(),
            hidden_mask_of,
            hyper.norm,
            hyper.batch_size,
        )?
        .unwrap_or(val_loss);
        return Ok(TrainOutcome {
            model,
            train_loss,
            val_loss,
            val_hidden_loss,
            epochs: vec![],
        });
    }

    let last = epoch_log.last().expect("at least one epoch");
    Ok(TrainOutcome {
        train_loss: last.train_loss,
        val_loss: last.val_loss,
        val_hidden_loss: last.val_hidden_loss,
        model,
        epochs: epoch_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridfill_core::MaskCube;

    #[test]
    fn masked_distance_hand_cases() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let o = [0.0, 0.0, 3.0, 1.0];
        let mask = [1u8, 1, 1, 0];
        let l1 = masked_distance(&y, &o, &mask, Norm::L1).unwrap();
        assert!((l1 - 1.0).abs() < 1e-12, "{l1}");
        let l2 = masked_distance(&y, &o, &mask, Norm::L2).unwrap();
        assert!((l2 - 5.0f64.sqrt() / 3.0).abs() < 1e-12, "{l2}");
        assert!((l2 - 0.745).abs() < 1e-3);
    }

    #[test]
    fn identical_fields_have_zero_distance() {
        let y = [1.5, -2.0];
        let mask = [1u8, 1];
        assert_eq!(masked_distance(&y, &y, &mask, Norm::L1).unwrap(), 0.0);
        assert_eq!(masked_distance(&y, &y, &mask, Norm::L2).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let y = [1.0];
        let mask = [0u8];
        assert!(masked_distance(&y, &y, &mask, Norm::L1).is_err());
    }

    #[test]
    fn window_clamps_at_the_edges() {
        assert_eq!(window_days(0, 3, 10), vec![0, 0, 1]);
        assert_eq!(window_days(9, 3, 10), vec![8, 9, 9]);
        assert_eq!(window_days(4, 3, 10), vec![3, 4, 5]);
        assert_eq!(window_days(4, 1, 10), vec![4]);
    }

    #[test]
    fn impute_noise_preserves_observed_cells() {
        let mask = MaskCube::new(1, 2, 2, vec![1, 0, 1, 0]).unwrap();
        let cube = AnomalyCube::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0], mask.clone()).unwrap();
        let master = vec![1u8, 1, 1, 0];
        let out = impute_noise(&cube, &mask, &master, &NoiseParams::default());
        assert_eq!(out.get(0, 0, 0).to_bits(), 1.0f32.to_bits());
        assert_eq!(out.get(0, 1, 0).to_bits(), 3.0f32.to_bits());
        assert_ne!(out.get(0, 0, 1), 2.0); // imputed
        assert_eq!(out.get(0, 1, 1), 0.0); // non-master
    }

    #[test]
    fn impute_noise_is_deterministic_per_seed() {
        let mask = MaskCube::filled(3, 4, 4, 0);
        let cube = AnomalyCube::new(3, 4, 4, vec![0.0; 48], mask.clone()).unwrap();
        let master = vec![1u8; 16];
        let p = NoiseParams {
            rng_seed: 9,
            ..Default::default()
        };
        let a = impute_noise(&cube, &mask, &master, &p);
        let b = impute_noise(&cube, &mask, &master, &p);
        assert_eq!(a, b);
        let c = impute_noise(&cube, &mask, &master, &p.with_seed(10));
        assert_ne!(a, c);
    }
}
