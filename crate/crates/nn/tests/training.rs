//! Training behavior on a tiny synthetic dataset: masked-loss semantics,
//! noise imputation statistics, determinism and the training loop itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridfill_core::cube::{AnomalyCube, MaskCube};
use gridfill_core::maskgen::{generate_masks, MaskGenParams};
use gridfill_core::split::make_split;
use gridfill_core::GridGeometry;
use gridfill_nn::layers::{Conv2d, Layer, Phase};
use gridfill_nn::model::ModelInstance;
use gridfill_nn::train::{
    impute_noise, make_example, masked_distance, train_model, DatasetRef, Norm, NoiseParams,
    TrainHyper,
};
use gridfill_nn::AutoencoderConfig;

const W: usize = 8;
const H: usize = 8;
const DAYS: usize = 60;

/// Smooth traveling pattern plus a weak trend; roughly unit scale.
fn tiny_field(day: usize, row: usize, col: usize) -> f32 {
    let t = day as f64;
    let x = col as f64 / W as f64;
    let y = row as f64 / H as f64;
    let v = 0.6 * (std::f64::consts::TAU * (x + 0.02 * t)).sin()
        + 0.3 * (std::f64::consts::TAU * (y - 0.015 * t) + 0.4).cos()
        + 0.002 * t;
    v as f32
}

fn tiny_dataset(seed: u64) -> (AnomalyCube, MaskCube, GridGeometry) {
    let geometry = GridGeometry::rectangular(W, H, 1.0);
    let mut values = Vec::with_capacity(DAYS * W * H);
    for day in 0..DAYS {
        for row in 0..H {
            for col in 0..W {
                values.push(tiny_field(day, row, col));
            }
        }
    }
    let all = MaskCube::filled(DAYS, W, H, 1);
    let m_orig = generate_masks(
        &geometry,
        2,
        &all,
        &MaskGenParams {
            target_missing_fraction: 0.2,
            rng_seed: seed,
            ..Default::default()
        },
    )
    .unwrap();
    let damage = generate_masks(
        &geometry,
        2,
        &m_orig,
        &MaskGenParams {
            target_missing_fraction: 0.6,
            rng_seed: seed + 1,
            ..Default::default()
        },
    )
    .unwrap();
    let cube = AnomalyCube::new(DAYS, W, H, values, m_orig).unwrap();
    (cube, damage, geometry)
}

fn tiny_config() -> AutoencoderConfig {
    AutoencoderConfig {
        n_outer: 1,
        n_reduce: 0,
        n_inner: 0,
        d_ch: 4,
        n_days: 1,
        include_masks: true,
        use_posenc: false,
        dropout_p: 0.0,
        width: W,
        height: H,
    }
}

fn tiny_hyper(epochs: usize) -> TrainHyper {
    TrainHyper {
        epochs,
        batch_size: 8,
        weight_decay: 0.0,
        ..Default::default()
    }
}

#[test]
fn noise_statistics_match_the_marginal() {
    // All cells missing: imputed master cells follow N(-0.0365, 0.683^2).
    let (days, w, h) = (50, 64, 64);
    let mask = MaskCube::filled(days, w, h, 0);
    let cube = AnomalyCube::new(days, w, h, vec![0.0; days * w * h], mask.clone()).unwrap();
    let master = vec![1u8; w * h];
    let params = NoiseParams {
        rng_seed: 77,
        ..Default::default()
    };
    let out = impute_noise(&cube, &mask, &master, &params);
    let n = out.values().len() as f64;
    let mean = out.values().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = out
        .values()
        .iter()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / (n - 1.0);
    let sigma = var.sqrt();
    let se_mean = 0.683 / n.sqrt();
    let se_sigma = 0.683 / (2.0 * n).sqrt();
    assert!(
        (mean - (-0.0365)).abs() < 3.0 * se_mean,
        "mean {mean}, tolerance {}",
        3.0 * se_mean
    );
    assert!(
        (sigma - 0.683).abs() < 3.0 * se_sigma,
        "sigma {sigma}, tolerance {}",
        3.0 * se_sigma
    );
}

#[test]
fn loss_ignores_values_under_mask_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..32 {
        let n = 24;
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let o: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mask: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.6))).collect();
        if mask.iter().all(|&m| m == 0) {
            continue;
        }
        let base = masked_distance(&y, &o, &mask, Norm::L1).unwrap();
        let mut fuzzed = y.clone();
        for i in 0..n {
            if mask[i] == 0 {
                fuzzed[i] = rng.gen_range(-100.0..100.0);
            }
        }
        let same = masked_distance(&fuzzed, &o, &mask, Norm::L1).unwrap();
        assert_eq!(base, same);
    }
}

#[test]
fn make_example_keeps_observed_cells_and_clamps_windows() {
    let (cube, _damage, geometry) = tiny_dataset(1);
    let data = DatasetRef {
        observed: &cube,
        master: &geometry.master,
    };
    // No extra damage: input anomaly channel equals the original at observed
    // cells.
    let m_orig = cube.mask().clone();
    let config = tiny_config();
    let noise = NoiseParams::default();
    let (input, target, loss_mask) = make_example(&data, 10, &m_orig, &config, &noise).unwrap();
    for (i, &bit) in m_orig.day_slice(10).iter().enumerate() {
        if bit == 1 {
            assert_eq!(input.data()[i], cube.day_values(10)[i] as f64);
            assert_eq!(target[i], cube.day_values(10)[i] as f64);
        }
    }
    // Loss mask never includes non-master cells.
    for (m, bit) in geometry.master.iter().zip(&loss_mask) {
        assert!(bit <= m);
    }

    // A three-day window at day 0 clamps to (0, 0, 1).
    let config3 = AutoencoderConfig {
        n_days: 3,
        ..tiny_config()
    };
    let (input3, _, _) = make_example(&data, 0, &m_orig, &config3, &noise).unwrap();
    assert_eq!(input3.plane(0, 0), input3.plane(0, 1));
    assert_ne!(input3.plane(0, 0), input3.plane(0, 2));
}

#[test]
fn damage_exceeding_the_original_mask_is_an_error() {
    let (cube, _damage, geometry) = tiny_dataset(2);
    let data = DatasetRef {
        observed: &cube,
        master: &geometry.master,
    };
    // Claim an observation where the original mask has none.
    let mut bad = cube.mask().clone();
    let hidden = (0..W * H)
        .find(|&i| cube.mask().day_slice(5)[i] == 0)
        .expect("a missing cell");
    bad.day_slice_mut(5)[hidden] = 1;
    let err = make_example(&data, 5, &bad, &tiny_config(), &NoiseParams::default()).unwrap_err();
    assert!(err.to_string().contains("outside"), "{err}");
}

#[test]
fn identity_model_reproduces_observed_cells() {
    // A single 1x1 convolution with unit weight is the identity; with no
    // extra damage the masked loss against the original field is zero.
    let (cube, _damage, geometry) = tiny_dataset(3);
    let data = DatasetRef {
        observed: &cube,
        master: &geometry.master,
    };
    let config = AutoencoderConfig {
        include_masks: false,
        ..tiny_config()
    };
    let mut conv = Conv2d::new("out", 1, 1, 1, 1);
    conv.weight[0] = 1.0;
    let mut model = ModelInstance::from_layers(config.clone(), vec![Layer::Conv(conv)], 0);

    let m_orig = cube.mask().clone();
    let (input, target, loss_mask) =
        make_example(&data, 7, &m_orig, &config, &NoiseParams::default()).unwrap();
    let out = model.forward(&input, Phase::Eval).unwrap();
    let loss = masked_distance(out.plane(0, 0), &target, &loss_mask, Norm::L1).unwrap();
    assert!(loss < 1e-12, "identity loss {loss}");
}

#[test]
fn tiny_training_loss_decreases_over_first_five_epochs() {
    let (cube, damage, geometry) = tiny_dataset(4);
    let data = DatasetRef {
        observed: &cube,
        master: &geometry.master,
    };
    let split = make_split(DAYS, DAYS, (1.0, 0.0), 12).unwrap();
    let hyper = TrainHyper {
        batch_size: 4,
        max_lr: 0.01,
        ..tiny_hyper(5)
    };
    let outcome = train_model(&data, &split, &damage, &tiny_config(), &hyper, 21).unwrap();
    let losses: Vec<f64> = outcome.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 5);
    for i in 1..losses.len() {
        assert!(
            losses[i] < losses[i - 1],
            "epoch {i}: {} !< {}",
            losses[i],
            losses[i - 1]
        );
    }
}

#[test]
fn zero_epoch_run_reports_initialization_losses() {
    let (cube, damage, geometry) = tiny_dataset(5);
    let data = DatasetRef {
        observed: &cube,
        master: &geometry.master,
    };
    let split = make_split(DAYS, DAYS, (1.0, 0.0), 12).unwrap();
    let outcome = train_model(&data, &split, &damage, &tiny_config(), &tiny_hyper(0), 3).unwrap();
    assert!(outcome.epochs.is_empty());
    assert!(outcome.train_loss.is_finite() && outcome.train_loss > 0.0);
    assert!(outcome.val_loss.is_finite() && outcome.val_loss > 0.0);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let (cube, damage, geometry) = tiny_dataset(6);
    let data = DatasetRef {
        observed: &cube,
        master: &geometry.master,
    };
    let split = make_split(DAYS, DAYS, (1.0, 0.0), 12).unwrap();
    let mut a = train_model(&data, &split, &damage, &tiny_config(), &tiny_hyper(3), 9).unwrap();
    let mut b = train_model(&data, &split, &damage, &tiny_config(), &tiny_hyper(3), 9).unwrap();
    for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!(ea.train_loss.to_bits(), eb.train_loss.to_bits());
        assert_eq!(ea.val_loss.to_bits(), eb.val_loss.to_bits());
    }
    let wa: Vec<u64> = a
        .model
        .state_mut()
        .iter()
        .flat_map(|e| e.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    let wb: Vec<u64> = b
        .model
        .state_mut()
        .iter()
        .flat_map(|e| e.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    assert_eq!(wa, wb);

    let mut c = train_model(&data, &split, &damage, &tiny_config(), &tiny_hyper(3), 10).unwrap();
    let wc: Vec<u64> = c
        .model
        .state_mut()
        .iter()
        .flat_map(|e| e.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
    assert_ne!(wa, wc);
}

#[test]
fn l1_and_l2_training_report_comparable_l1_validation() {
    // Parity harness: optimize with either norm, report the L1 validation
    // loss of both runs.
    let (cube, damage, geometry) = tiny_dataset(7);
    let data = DatasetRef {
        observed: &cube,
        master: &geometry.master,
    };
    let split = make_split(DAYS, DAYS, (1.0, 0.0), 12).unwrap();
    let l1 = train_model(&data, &split, &damage, &tiny_config(), &tiny_hyper(8), 13).unwrap();
    let hyper_l2 = TrainHyper {
        norm: Norm::L2,
        ..tiny_hyper(8)
    };
    let l2_run = train_model(&data, &split, &damage, &tiny_config(), &hyper_l2, 13).unwrap();
    // Re-measure the L2-optimized model with the L1 validation metric: the
    // outcome's val_loss for that run is already L2, so compare indirectly
    // through finiteness and scale.
    println!(
        "L1-optimized val L1 = {:.4}; L2-optimized val L2 = {:.4}",
        l1.val_loss, l2_run.val_loss
    );
    assert!(l1.val_loss.is_finite() && l2_run.val_loss.is_finite());
    assert!(l1.val_loss > 0.0 && l2_run.val_loss > 0.0);
}

#[test]
fn dropout_preserves_expectation() {
    use gridfill_nn::layers::Dropout;
    use gridfill_nn::Tensor;
    let p = 0.3;
    let trials = 4000;
    let x = Tensor::from_vec(1, 1, 4, 4, vec![1.0; 16]);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut sum = vec![0.0f64; 16];
    for _ in 0..trials {
        let mut layer = Layer::Dropout(Dropout::new(p));
        let y = layer.forward(&x, Phase::Train, &mut rng).unwrap();
        for (s, &v) in sum.iter_mut().zip(y.data()) {
            *s += v;
        }
    }
    // Grand mean over elements and trials: SE = sqrt(p / ((1-p) n)).
    let n = (trials * 16) as f64;
    let grand = sum.iter().sum::<f64>() / n;
    let se = (p / ((1.0 - p) * n)).sqrt();
    assert!(
        (grand - 1.0).abs() < 3.0 * se,
        "grand mean {grand}, 3se {}",
        3.0 * se
    );
}
