//! Train/validation day split.
//!
//! The validation block is contiguous and placed so that its share of days
//! on each side of a regime boundary (a day where the dataset's missing-data
//! statistics change) matches the regimes' share of the whole record. Day
//! indices are 0-based throughout.

use crate::error::{GridError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub total_days: usize,
    /// First validation day (inclusive, 0-based).
    pub validation_start_day: usize,
    /// Last validation day (inclusive, 0-based).
    pub validation_end_day: usize,
}

impl SplitSpec {
    pub fn validation_len(&self) -> usize {
        self.validation_end_day - self.validation_start_day + 1
    }

    pub fn is_validation(&self, day: usize) -> bool {
        day >= self.validation_start_day && day <= self.validation_end_day
    }

    pub fn training_days(&self) -> Vec<usize> {
        (0..self.total_days).filter(|&d| !self.is_validation(d)).collect()
    }

    pub fn validation_days(&self) -> Vec<usize> {
        (self.validation_start_day..=self.validation_end_day).collect()
    }
}

/// Chooses a contiguous validation block of `validation_days` days out of
/// `total_days`.
///
/// `regime_boundary_day` is the first day of the second regime;
/// `regime_fractions` the (before, after) shares the block should take from
/// each regime, typically the regimes' share of the full record. With a
/// single regime pass boundary = `total_days` and fractions (1, 0): the
/// block lands at the end of the record.
pub fn make_split(
    total_days: usize,
    regime_boundary_day: usize,
    regime_fractions: (f64, f64),
    validation_days: usize,
) -> Result<SplitSpec> {
    if validation_days == 0 || validation_days >= total_days {
        return Err(GridError::InvalidSplit(format!(
            "validation span {validation_days} out of range for {total_days} days"
        )));
    }
    let (f_before, f_after) = regime_fractions;
    if f_before < 0.0 || f_after < 0.0 || (f_before + f_after) <= 0.0 {
        return Err(GridError::InvalidSplit(format!(
            "bad regime fractions ({f_before}, {f_after})"
        )));
    }
    let f_before = f_before / (f_before + f_after);
    let want_before = (validation_days as f64 * f_before).round() as usize;
    let want_before = want_before.min(validation_days);

    // Straddle the boundary with `want_before` days on the early side.
    let start = regime_boundary_day.saturating_sub(want_before);
    let start = start.min(total_days - validation_days);
    let end = start + validation_days - 1;

    // Feasibility: the realized before-share must sit within a day of the
    // request (the block may be pushed off the boundary only by the edges
    // of the record).
    let got_before = regime_boundary_day.saturating_sub(start).min(validation_days);
    if got_before.abs_diff(want_before) > 1 {
        return Err(GridError::InvalidSplit(format!(
            "cannot place {validation_days}-day block with {want_before} days before day {regime_boundary_day}"
        )));
    }
    Ok(SplitSpec {
        total_days,
        validation_start_day: start,
        validation_end_day: end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_year_block_straddles_the_regime_change() {
        // 31 years of 365-day years, regime change after year 22, 5-year
        // validation block split 22/31 vs 9/31. In 1-based day ordinals the
        // block is days 6736..=8560; 0-based indices are one lower.
        let split = make_split(11315, 8030, (22.0 / 31.0, 9.0 / 31.0), 1825).unwrap();
        assert_eq!(split.validation_start_day, 6735);
        assert_eq!(split.validation_end_day, 8559);
        assert_eq!(split.validation_len(), 1825);
        // 1295 days in the first regime, 530 in the second.
        assert_eq!(8030 - split.validation_start_day, 1295);
    }

    #[test]
    fn single_regime_defaults_to_trailing_block() {
        let split = make_split(100, 100, (1.0, 0.0), 20).unwrap();
        assert_eq!(split.validation_start_day, 80);
        assert_eq!(split.validation_end_day, 99);
    }

    #[test]
    fn even_fractions_center_on_the_boundary() {
        let split = make_split(100, 50, (0.5, 0.5), 10).unwrap();
        assert_eq!(split.validation_start_day, 45);
        assert_eq!(split.validation_end_day, 54);
    }

    #[test]
    fn training_and_validation_partition_all_days() {
        let split = make_split(100, 50, (0.5, 0.5), 10).unwrap();
        let train = split.training_days();
        let val = split.validation_days();
        assert_eq!(train.len() + val.len(), 100);
        assert!(train.iter().all(|d| !val.contains(d)));
    }

    #[test]
    fn infeasible_span_is_an_error() {
        assert!(make_split(10, 5, (0.5, 0.5), 10).is_err());
        assert!(make_split(10, 5, (0.5, 0.5), 0).is_err());
    }
}
