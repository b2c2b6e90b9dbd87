//! Stochastic-diffusion generator of additional-damage masks.
//!
//! Damage is generated one month block at a time: a few missing nuclei are
//! seeded over the observed cells, then the missing region grows one cell
//! per step, preferring cells that already touch more missing neighbors,
//! until the month's overall missing fraction reaches the target. The
//! resulting mask only removes data (`m' <= existing`), is constant within
//! each month and approximately contiguous.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cube::{month_count, month_range, GridGeometry, MaskCube};
use crate::error::{GridError, Result};

#[derive(Debug, Clone)]
pub struct MaskGenParams {
    /// Desired overall missing fraction (relative to master) after damage.
    pub target_missing_fraction: f64,
    /// Diffusion seed points per month.
    pub seeds_count: usize,
    /// Preference for growing next to already-missing cells.
    pub growth_bias: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
}

impl Default for MaskGenParams {
    fn default() -> Self {
        Self {
            target_missing_fraction: 0.6,
            seeds_count: 1,
            growth_bias: 4.0,
            max_iterations: 10_000_000,
            rng_seed: 0,
        }
    }
}

const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Generates the damaged mask for one month given that month's existing
/// observation bits (row-major, one day's worth). Returns the month's new
/// mask bits.
pub fn generate_month_mask(
    geometry: &GridGeometry,
    existing_bits: &[u8],
    target_missing_fraction: f64,
    params: &MaskGenParams,
    month_seed: u64,
) -> Result<Vec<u8>> {
    let (w, h) = (geometry.width, geometry.height);
    assert_eq!(existing_bits.len(), w * h);
    let master_count = geometry.master_count();
    if master_count == 0 {
        return Err(GridError::MaskGen("master mask is empty".into()));
    }

    let mut missing: Vec<bool> = (0..w * h)
        .map(|i| geometry.master[i] == 1 && existing_bits[i] == 0)
        .collect();
    let mut missing_count: usize = missing.iter().filter(|&&m| m).count();

    let existing_fraction = missing_count as f64 / master_count as f64;
    if target_missing_fraction <= existing_fraction {
        return Err(GridError::TargetAlreadyExceeded {
            target: target_missing_fraction,
            existing: existing_fraction,
        });
    }
    let target_count = (target_missing_fraction * master_count as f64).round() as usize;
    let target_count = target_count.min(master_count);

    let mut rng = ChaCha8Rng::seed_from_u64(month_seed);
    let observed: Vec<usize> = (0..w * h)
        .filter(|&i| geometry.master[i] == 1 && !missing[i])
        .collect();

    // Seed nuclei uniformly over the observed cells.
    let mut frontier: Vec<usize> = Vec::new();
    let mut in_frontier = vec![false; w * h];
    let flip = |cell: usize,
                    missing: &mut Vec<bool>,
                    missing_count: &mut usize,
                    frontier: &mut Vec<usize>,
                    in_frontier: &mut Vec<bool>| {
        missing[cell] = true;
        *missing_count += 1;
        let (row, col) = (cell / w, cell % w);
        for (dr, dc) in NEIGHBORS {
            let (nr, nc) = (row as isize + dr, col as isize + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let n = nr as usize * w + nc as usize;
            if geometry.master[n] == 1 && !missing[n] && !in_frontier[n] {
                in_frontier[n] = true;
                frontier.push(n);
            }
        }
    };

    let mut seeded = 0usize;
    while seeded < params.seeds_count && missing_count < target_count {
        let cell = observed[rng.gen_range(0..observed.len())];
        if missing[cell] {
            continue;
        }
        flip(cell, &mut missing, &mut missing_count, &mut frontier, &mut in_frontier);
        seeded += 1;
    }

    // Grow: draw a frontier cell with weight 1 + bias * missing neighbors.
    let mut iterations = 0usize;
    while missing_count < target_count {
        iterations += 1;
        if iterations > params.max_iterations {
            return Err(GridError::MaskGen(format!(
                "did not reach target fraction {target_missing_fraction} within {} iterations",
                params.max_iterations
            )));
        }
        frontier.retain(|&c| {
            let keep = !missing[c];
            if !keep {
                in_frontier[c] = false;
            }
            keep
        });
        if frontier.is_empty() {
            // Disconnected observed pockets: fall back to fresh nuclei.
            let remaining: Vec<usize> = (0..w * h)
                .filter(|&i| geometry.master[i] == 1 && !missing[i])
                .collect();
            if remaining.is_empty() {
                break;
            }
            let cell = remaining[rng.gen_range(0..remaining.len())];
            flip(cell, &mut missing, &mut missing_count, &mut frontier, &mut in_frontier);
            continue;
        }
        let weight_of = |cell: usize| -> f64 {
            let (row, col) = (cell / w, cell % w);
            let mut nb = 0usize;
            for (dr, dc) in NEIGHBORS {
                let (nr, nc) = (row as isize + dr, col as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                if missing[nr as usize * w + nc as usize] {
                    nb += 1;
                }
            }
            1.0 + params.growth_bias * nb as f64
        };
        let total: f64 = frontier.iter().map(|&c| weight_of(c)).sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut chosen = *frontier.last().unwrap();
        for &c in &frontier {
            let wgt = weight_of(c);
            if draw < wgt {
                chosen = c;
                break;
            }
            draw -= wgt;
        }
        in_frontier[chosen] = false;
        flip(chosen, &mut missing, &mut missing_count, &mut frontier, &mut in_frontier);
    }

    Ok((0..w * h)
        .map(|i| u8::from(geometry.master[i] == 1 && !missing[i]))
        .collect())
}

/// Generates the full additionally-damaged mask cube: every month block gets
/// the same target fraction, with per-month seeds `rng_seed + month`.
///
/// Within a month the existing mask is reduced to its day-wise intersection
/// so the output stays below `existing` even when the input is not strictly
/// month-constant.
pub fn generate_masks(
    geometry: &GridGeometry,
    months: usize,
    existing: &MaskCube,
    params: &MaskGenParams,
) -> Result<MaskCube> {
    let days = existing.days();
    if months != month_count(days) {
        return Err(GridError::MaskGen(format!(
            "months {} does not match {} days",
            months, days
        )));
    }
    if existing.width() != geometry.width || existing.height() != geometry.height {
        return Err(GridError::ShapeMismatch {
            context: "generate_masks",
            expected: format!("{}x{}", geometry.width, geometry.height),
            actual: format!("{}x{}", existing.width(), existing.height()),
        });
    }
    let n = geometry.width * geometry.height;
    let mut bits = vec![0u8; days * n];
    for month in 0..months {
        let range = month_range(days, month);
        let mut month_existing = vec![1u8; n];
        for day in range.clone() {
            for (e, &b) in month_existing.iter_mut().zip(existing.day_slice(day)) {
                *e &= b;
            }
        }
        let month_bits = generate_month_mask(
            geometry,
            &month_existing,
            params.target_missing_fraction,
            params,
            params.rng_seed.wrapping_add(month as u64),
        )?;
        for day in range {
            bits[day * n..(day + 1) * n].copy_from_slice(&month_bits);
        }
    }
    MaskCube::new(days, geometry.width, geometry.height, bits)
}

/// Per-day summary of a mask cube.
#[derive(Debug, Clone)]
pub struct MaskStats {
    /// Missing fraction relative to master, per day.
    pub missing_fraction: Vec<f64>,
    /// Largest 4-connected missing component as a share of all missing
    /// cells, per day (1.0 when nothing is missing).
    pub largest_component_share: Vec<f64>,
    /// True when the mask is constant within every month block.
    pub month_constant: bool,
}

pub fn mask_stats(mask: &MaskCube, geometry: &GridGeometry) -> Result<MaskStats> {
    if mask.width() != geometry.width || mask.height() != geometry.height {
        return Err(GridError::ShapeMismatch {
            context: "mask_stats",
            expected: format!("{}x{}", geometry.width, geometry.height),
            actual: format!("{}x{}", mask.width(), mask.height()),
        });
    }
    let master_count = geometry.master_count();
    let days = mask.days();
    let mut missing_fraction = Vec::with_capacity(days);
    let mut largest_component_share = Vec::with_capacity(days);
    for day in 0..days {
        let bits = mask.day_slice(day);
        let missing: usize = geometry
            .master
            .iter()
            .zip(bits)
            .filter(|(&m, &b)| m == 1 && b == 0)
            .count();
        missing_fraction.push(missing as f64 / master_count as f64);
        let largest = largest_missing_component(bits, geometry);
        largest_component_share.push(if missing == 0 {
            1.0
        } else {
            largest as f64 / missing as f64
        });
    }
    let mut month_constant = true;
    'outer: for month in 0..month_count(days) {
        let range = month_range(days, month);
        let first = mask.day_slice(range.start);
        for day in range {
            if mask.day_slice(day) != first {
                month_constant = false;
                break 'outer;
            }
        }
    }
    Ok(MaskStats {
        missing_fraction,
        largest_component_share,
        month_constant,
    })
}

/// Size of the largest 4-connected component of missing master cells in one
/// day's mask bits.
pub fn largest_missing_component(bits: &[u8], geometry: &GridGeometry) -> usize {
    let (w, h) = (geometry.width, geometry.height);
    let mut seen = vec![false; w * h];
    let mut largest = 0usize;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || geometry.master[start] == 0 || bits[start] == 1 {
            continue;
        }
        let mut size = 0usize;
        stack.push(start);
        seen[start] = true;
        while let Some(cell) = stack.pop() {
            size += 1;
            let (row, col) = (cell / w, cell % w);
            for (dr, dc) in NEIGHBORS {
                let (nr, nc) = (row as isize + dr, col as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let n = nr as usize * w + nc as usize;
                if !seen[n] && geometry.master[n] == 1 && bits[n] == 0 {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        largest = largest.max(size);
    }
    largest
}
