//! Core gridded data types: binary observation masks, anomaly cubes and grid
//! geometry.
//!
//! A cube holds `days` daily fields on a fixed `width` x `height` grid.
//! Cells are addressed as (row, col) with row-major storage per day:
//! `index = (day * height + row) * width + col`.

use crate::error::{GridError, Result};

/// Days in one synthetic calendar month when no real date table is supplied.
/// Month `m` covers days `[30m, 30m + 30)`; a trailing partial block counts
/// as a month of its own.
pub const MONTH_DAYS: usize = 30;

/// Binary observation mask over a day-by-grid cube. 1 = observed, 0 = missing
/// or invalid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskCube {
    days: usize,
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl MaskCube {
    pub fn new(days: usize, width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != days * width * height {
            return Err(GridError::ShapeMismatch {
                context: "MaskCube::new",
                expected: format!("{} bits", days * width * height),
                actual: format!("{}", bits.len()),
            });
        }
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Ok(Self {
            days,
            width,
            height,
            bits,
        })
    }

    pub fn filled(days: usize, width: usize, height: usize, bit: u8) -> Self {
        Self {
            days,
            width,
            height,
            bits: vec![bit; days * width * height],
        }
    }

    pub fn days(&self) -> usize {
        self.days
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, day: usize, row: usize, col: usize) -> usize {
        (day * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, day: usize, row: usize, col: usize) -> u8 {
        self.bits[self.idx(day, row, col)]
    }

    #[inline]
    pub fn set(&mut self, day: usize, row: usize, col: usize, bit: u8) {
        let i = self.idx(day, row, col);
        self.bits[i] = bit;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// One day's bits as a contiguous row-major slice.
    pub fn day_slice(&self, day: usize) -> &[u8] {
        let n = self.width * self.height;
        &self.bits[day * n..(day + 1) * n]
    }

    pub fn day_slice_mut(&mut self, day: usize) -> &mut [u8] {
        let n = self.width * self.height;
        &mut self.bits[day * n..(day + 1) * n]
    }

    pub fn observed_count(&self, day: usize) -> usize {
        self.day_slice(day).iter().map(|&b| b as usize).sum()
    }

    /// Checks `bits(n) <= master` for all days; i.e. no observation outside
    /// the valid region.
    pub fn check_within_master(&self, master: &[u8]) -> Result<()> {
        assert_eq!(master.len(), self.width * self.height);
        for day in 0..self.days {
            let slice = self.day_slice(day);
            for (i, (&b, &m)) in slice.iter().zip(master.iter()).enumerate() {
                if b == 1 && m == 0 {
                    return Err(GridError::MaskOutsideMaster {
                        day,
                        row: i / self.width,
                        col: i % self.width,
                    });
                }
            }
        }
        Ok(())
    }

    /// Number of month blocks covering `days`.
    pub fn month_count(&self) -> usize {
        month_count(self.days)
    }
}

pub fn month_count(days: usize) -> usize {
    days.div_ceil(MONTH_DAYS)
}

/// Day range `[start, end)` of month block `m`.
pub fn month_range(days: usize, month: usize) -> std::ops::Range<usize> {
    let start = month * MONTH_DAYS;
    let end = ((month + 1) * MONTH_DAYS).min(days);
    start..end
}

/// A daily scalar field (anomalies, degrees C) with its paired observation
/// mask. Values at mask-0 cells are stored but carry no meaning; they are
/// kept finite so the cube can be serialized without special cases.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyCube {
    days: usize,
    width: usize,
    height: usize,
    values: Vec<f32>,
    mask: MaskCube,
}

impl AnomalyCube {
    pub fn new(
        days: usize,
        width: usize,
        height: usize,
        values: Vec<f32>,
        mask: MaskCube,
    ) -> Result<Self> {
        if values.len() != days * width * height {
            return Err(GridError::ShapeMismatch {
                context: "AnomalyCube::new values",
                expected: format!("{}", days * width * height),
                actual: format!("{}", values.len()),
            });
        }
        if mask.days() != days || mask.width() != width || mask.height() != height {
            return Err(GridError::ShapeMismatch {
                context: "AnomalyCube::new mask",
                expected: format!("{days}x{width}x{height}"),
                actual: format!("{}x{}x{}", mask.days(), mask.width(), mask.height()),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                let per_day = width * height;
                return Err(GridError::NonFinite {
                    day: i / per_day,
                    row: (i % per_day) / width,
                    col: i % width,
                });
            }
        }
        Ok(Self {
            days,
            width,
            height,
            values,
            mask,
        })
    }

    pub fn zeros(days: usize, width: usize, height: usize) -> Self {
        Self {
            days,
            width,
            height,
            values: vec![0.0; days * width * height],
            mask: MaskCube::filled(days, width, height, 1),
        }
    }

    pub fn days(&self) -> usize {
        self.days
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn mask(&self) -> &MaskCube {
        &self.mask
    }
    pub fn mask_mut(&mut self) -> &mut MaskCube {
        &mut self.mask
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn idx(&self, day: usize, row: usize, col: usize) -> usize {
        (day * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, day: usize, row: usize, col: usize) -> f32 {
        self.values[self.idx(day, row, col)]
    }

    #[inline]
    pub fn set(&mut self, day: usize, row: usize, col: usize, v: f32) {
        let i = self.idx(day, row, col);
        self.values[i] = v;
    }

    pub fn day_values(&self, day: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.values[day * n..(day + 1) * n]
    }

    pub fn day_values_mut(&mut self, day: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.values[day * n..(day + 1) * n]
    }

    /// Equality that ignores values at mask-0 cells: masks must be identical
    /// and observed values bit-exact.
    pub fn masked_eq(&self, other: &Self) -> bool {
        if self.days != other.days || self.width != other.width || self.height != other.height {
            return false;
        }
        if self.mask != other.mask {
            return false;
        }
        self.values
            .iter()
            .zip(other.values.iter())
            .zip(self.mask.bits().iter())
            .all(|((a, b), &m)| m == 0 || a.to_bits() == b.to_bits())
    }
}

/// Distance metric used when collecting cells around a site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceMetric {
    /// Great-circle distance on lat/lon, Earth radius 6371 km.
    Haversine,
    /// Planar distance for synthetic grids: `km_per_cell * hypot(drow, dcol)`.
    CellPitch { km_per_cell: f64 },
}

/// Static spatial layout of the grid: per-cell coordinates, the master mask
/// of valid cells, and the footprint-reduction parameters attached to the
/// dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    /// Degrees, row-major; meaningful only at master cells.
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    /// 1 at valid cells, row-major.
    pub master: Vec<u8>,
    /// Rows per one-column shift; 0 disables skewing.
    pub skew_period: usize,
    /// Block edge for downsampling; 1 disables resampling.
    pub downsample_factor: usize,
    pub metric: DistanceMetric,
}

impl GridGeometry {
    pub fn new(
        width: usize,
        height: usize,
        lat: Vec<f64>,
        lon: Vec<f64>,
        master: Vec<u8>,
    ) -> Result<Self> {
        let n = width * height;
        if lat.len() != n || lon.len() != n || master.len() != n {
            return Err(GridError::ShapeMismatch {
                context: "GridGeometry::new",
                expected: format!("{n}"),
                actual: format!("{}/{}/{}", lat.len(), lon.len(), master.len()),
            });
        }
        for i in 0..n {
            if master[i] == 1 && (!lat[i].is_finite() || !lon[i].is_finite()) {
                return Err(GridError::NonFinite {
                    day: 0,
                    row: i / width,
                    col: i % width,
                });
            }
        }
        Ok(Self {
            width,
            height,
            lat,
            lon,
            master,
            skew_period: 0,
            downsample_factor: 1,
            metric: DistanceMetric::Haversine,
        })
    }

    /// A fully valid rectangular grid with synthetic coordinates: rows map to
    /// latitude and columns to longitude at `deg_per_cell` spacing.
    pub fn rectangular(width: usize, height: usize, deg_per_cell: f64) -> Self {
        let mut lat = Vec::with_capacity(width * height);
        let mut lon = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                lat.push(row as f64 * deg_per_cell);
                lon.push(col as f64 * deg_per_cell);
            }
        }
        Self {
            width,
            height,
            lat,
            lon,
            master: vec![1; width * height],
            skew_period: 0,
            downsample_factor: 1,
            metric: DistanceMetric::Haversine,
        }
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_resampling(mut self, skew_period: usize, downsample_factor: usize) -> Self {
        self.skew_period = skew_period;
        self.downsample_factor = downsample_factor.max(1);
        self
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn is_master(&self, row: usize, col: usize) -> bool {
        self.master[self.cell(row, col)] == 1
    }

    pub fn master_count(&self) -> usize {
        self.master.iter().map(|&m| m as usize).sum()
    }

    /// Distance in km between two cells under the configured metric.
    pub fn distance_km(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        match self.metric {
            DistanceMetric::Haversine => {
                let ia = self.cell(a.0, a.1);
                let ib = self.cell(b.0, b.1);
                haversine_km(self.lat[ia], self.lon[ia], self.lat[ib], self.lon[ib])
            }
            DistanceMetric::CellPitch { km_per_cell } => {
                let dr = a.0 as f64 - b.0 as f64;
                let dc = a.1 as f64 - b.1 as f64;
                km_per_cell * (dr * dr + dc * dc).sqrt()
            }
        }
    }
}

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two points given in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (la1, lo1) = (lat1.to_radians(), lon1.to_radians());
    let (la2, lo2) = (lat2.to_radians(), lon2.to_radians());
    let dlat = la2 - la1;
    let dlon = lo2 - lo1;
    let s = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().asin()
}
