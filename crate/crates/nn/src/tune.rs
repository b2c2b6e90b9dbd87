//! Regularization grid search.
//!
//! A model is retrained from scratch in iterations of full training runs
//! until the validation/training loss ratio lands in [1, 1.05]. Regularization
//! moves down (dropout, then weight decay, then batch size) when the ratio is
//! below the band and up (dropout, then weight decay) when above. When two
//! consecutive iterations bracket the band, the next hyperparameters are an
//! inverse-distance-weighted interpolation of the two. The iteration with the
//! lowest validation loss on the additionally-hidden cells wins.

use gridfill_core::cube::MaskCube;
use gridfill_core::derive_seed;
use gridfill_core::split::SplitSpec;

use crate::error::Result;
use crate::model::{AutoencoderConfig, ModelInstance};
use crate::train::{train_model, DatasetRef, TrainHyper, TrainOutcome};

pub const RATIO_BAND: (f64, f64) = (1.0, 1.05);
pub const MAX_TUNE_ITERATIONS: usize = 15;

pub const DROPOUT_STEP: f64 = 0.05;
pub const DROPOUT_CAP: f64 = 0.5;
pub const WEIGHT_DECAY_FLOOR: f64 = 1e-4;
pub const BATCH_STEP: usize = 4;
pub const BATCH_FLOOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneStatus {
    Under,
    Over,
    WellTrained,
    Failed,
}

#[derive(Debug, Clone)]
pub struct TuneIteration {
    pub dropout_p: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_hidden_loss: f64,
    pub ratio: f64,
}

#[derive(Debug)]
pub struct TuningState {
    pub iterations: Vec<TuneIteration>,
    pub status: TuneStatus,
    /// Index of the iteration with the lowest hidden-cell validation loss.
    pub best_index: usize,
    pub best_model: ModelInstance,
    pub best_outcome_val_loss: f64,
}

fn band_distance(ratio: f64) -> f64 {
    if ratio < RATIO_BAND.0 {
        RATIO_BAND.0 - ratio
    } else if ratio > RATIO_BAND.1 {
        ratio - RATIO_BAND.1
    } else {
        0.0
    }
}

fn in_band(ratio: f64) -> bool {
    (RATIO_BAND.0..=RATIO_BAND.1).contains(&ratio)
}

/// Next hyperparameters after an out-of-band iteration, without bracketing.
fn stepped(dropout: f64, weight_decay: f64, batch: usize, ratio: f64) -> (f64, f64, usize) {
    if ratio < RATIO_BAND.0 {
        // Decrease regularization: dropout, then weight decay, then batch.
        if dropout >= DROPOUT_STEP {
            ((dropout - DROPOUT_STEP).max(0.0), weight_decay, batch)
        } else if weight_decay > WEIGHT_DECAY_FLOOR {
            (dropout, (weight_decay / 2.0).max(WEIGHT_DECAY_FLOOR), batch)
        } else {
            (dropout, weight_decay, batch.saturating_sub(BATCH_STEP).max(BATCH_FLOOR))
        }
    } else {
        // Increase regularization: dropout, then weight decay.
        if dropout + DROPOUT_STEP <= DROPOUT_CAP {
            (dropout + DROPOUT_STEP, weight_decay, batch)
        } else {
            (dropout, weight_decay * 2.0, batch)
        }
    }
}

/// Inverse-distance-to-band interpolation between two bracketing iterations;
/// the iteration closer to the band dominates.
fn interpolate(a: &TuneIteration, b: &TuneIteration) -> (f64, f64) {
    let (da, db) = (band_distance(a.ratio), band_distance(b.ratio));
    let wa = db / (da + db);
    let wb = da / (da + db);
    (
        wa * a.dropout_p + wb * b.dropout_p,
        wa * a.weight_decay + wb * b.weight_decay,
    )
}

/// Runs the grid search for one architecture. `base` supplies everything but
/// the regularization knobs, which start at (dropout 0, weight decay 0.3,
/// batch 32).
pub fn tune_regularization(
    data: &DatasetRef,
    split: &SplitSpec,
    damage: &MaskCube,
    config: &AutoencoderConfig,
    base: &TrainHyper,
    seed: u64,
) -> Result<TuningState> {
    let mut dropout_p = 0.0f64;
    let mut weight_decay = 0.3f64;
    let mut batch_size = 32usize;

    let mut iterations: Vec<TuneIteration> = Vec::new();
    let mut best: Option<(usize, TrainOutcome)> = None;
    let mut status = TuneStatus::Failed;

    for iter_idx in 0..MAX_TUNE_ITERATIONS {
        let hyper = TrainHyper {
            dropout_p,
            weight_decay,
            batch_size,
            ..base.clone()
        };
        let outcome = train_model(
            data,
            split,
            damage,
            config,
            &hyper,
            derive_seed(seed, "tune-iter", iter_idx as u64),
        )?;
        let ratio = outcome.val_loss / outcome.train_loss;
        iterations.push(TuneIteration {
            dropout_p,
            weight_decay,
            batch_size,
            train_loss: outcome.train_loss,
            val_loss: outcome.val_loss,
            val_hidden_loss: outcome.val_hidden_loss,
            ratio,
        });
        let better = match &best {
            None => true,
            Some((_, prev)) => outcome.val_hidden_loss < prev.val_hidden_loss,
        };
        if better {
            best = Some((iter_idx, outcome));
        }

        if in_band(ratio) {
            status = TuneStatus::WellTrained;
            break;
        }
        status = if ratio < RATIO_BAND.0 {
            TuneStatus::Under
        } else {
            TuneStatus::Over
        };

        let n = iterations.len();
        let bracketed = n >= 2 && {
            let (prev, curr) = (&iterations[n - 2], &iterations[n - 1]);
            (prev.ratio < RATIO_BAND.0 && curr.ratio > RATIO_BAND.1)
                || (prev.ratio > RATIO_BAND.1 && curr.ratio < RATIO_BAND.0)
        };
        if bracketed {
            let (d, w) = interpolate(&iterations[n - 2], &iterations[n - 1]);
            dropout_p = d;
            weight_decay = w;
        } else {
            let (d, w, b) = stepped(dropout_p, weight_decay, batch_size, ratio);
            dropout_p = d;
            weight_decay = w;
            batch_size = b;
        }
    }

    if status == TuneStatus::Under || status == TuneStatus::Over {
        status = TuneStatus::Failed;
    }
    let (best_index, best_outcome) = best.expect("at least one iteration ran");
    Ok(TuningState {
        iterations,
        status,
        best_index,
        best_model: best_outcome.model,
        best_outcome_val_loss: best_outcome.val_hidden_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iter_with_ratio(ratio: f64, dropout: f64, wd: f64) -> TuneIteration {
        TuneIteration {
            dropout_p: dropout,
            weight_decay: wd,
            batch_size: 32,
            train_loss: 1.0,
            val_loss: ratio,
            val_hidden_loss: ratio,
            ratio,
        }
    }

    #[test]
    fn moves_follow_the_declared_order() {
        // Below band with dropout available: dropout falls first.
        assert_eq!(stepped(0.10, 0.3, 32, 0.9), (0.05, 0.3, 32));
        // Dropout exhausted: weight decay halves.
        assert_eq!(stepped(0.0, 0.3, 32, 0.9), (0.0, 0.15, 32));
        // Weight decay at floor: batch size shrinks.
        let (_, _, b) = stepped(0.0, WEIGHT_DECAY_FLOOR, 32, 0.9);
        assert_eq!(b, 28);
        // Above band: dropout rises first, then weight decay doubles.
        assert_eq!(stepped(0.0, 0.3, 32, 1.2), (0.05, 0.3, 32));
        assert_eq!(stepped(DROPOUT_CAP, 0.3, 32, 1.2), (DROPOUT_CAP, 0.6, 32));
    }

    #[test]
    fn interpolation_weights_favor_the_closer_iteration() {
        let a = iter_with_ratio(0.90, 0.0, 0.4); // distance 0.10
        let b = iter_with_ratio(1.10, 0.2, 0.1); // distance 0.05
        let (d, w) = interpolate(&a, &b);
        // b is twice as close, so it gets weight 2/3.
        assert!((d - (0.2 * (2.0 / 3.0))).abs() < 1e-12, "{d}");
        assert!((w - (0.4 / 3.0 + 0.1 * 2.0 / 3.0)).abs() < 1e-12, "{w}");
    }

    #[test]
    fn band_membership() {
        assert!(in_band(1.0));
        assert!(in_band(1.05));
        assert!(!in_band(0.999));
        assert!(!in_band(1.051));
    }
}
