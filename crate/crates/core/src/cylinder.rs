//! Space-time cylinders: the neighborhood of a (day, cell) site over which
//! field extremes are taken. Default footprint is a 50 km radius disc of
//! master cells extended `window_days` forward in time.

use crate::cube::GridGeometry;
use crate::error::{GridError, Result};

pub const DEFAULT_RADIUS_KM: f64 = 50.0;
pub const DEFAULT_WINDOW_DAYS: usize = 7;

/// A prediction site: the anchor day and cell of one cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Site {
    pub day: usize,
    pub row: usize,
    pub col: usize,
}

/// One site's resolved cylinder: member cells plus the day window
/// `[day, day + window_days)`.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub site: Site,
    /// Master cells within `radius_km` of the site, always including the
    /// site itself. Row-major (row, col) pairs.
    pub cells: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct CylinderIndex {
    pub cylinders: Vec<Cylinder>,
    pub window_days: usize,
    pub radius_km: f64,
}

/// Resolves each site to its cylinder cell set under the geometry's distance
/// metric.
pub fn build_cylinders(
    geometry: &GridGeometry,
    sites: &[Site],
    radius_km: f64,
    window_days: usize,
    total_days: usize,
) -> Result<CylinderIndex> {
    assert!(radius_km > 0.0, "radius must be positive");
    assert!(window_days >= 1, "window must span at least one day");
    let mut cylinders = Vec::with_capacity(sites.len());
    for &site in sites {
        if site.row >= geometry.height
            || site.col >= geometry.width
            || !geometry.is_master(site.row, site.col)
        {
            return Err(GridError::SiteOutsideMaster {
                day: site.day,
                row: site.row,
                col: site.col,
            });
        }
        let end = site.day + window_days - 1;
        if end >= total_days {
            return Err(GridError::WindowOutOfRange {
                start: site.day,
                end,
                days: total_days,
            });
        }
        let mut cells = Vec::new();
        for row in 0..geometry.height {
            for col in 0..geometry.width {
                if !geometry.is_master(row, col) {
                    continue;
                }
                if geometry.distance_km((site.row, site.col), (row, col)) <= radius_km {
                    cells.push((row, col));
                }
            }
        }
        debug_assert!(cells.contains(&(site.row, site.col)));
        cylinders.push(Cylinder { site, cells });
    }
    Ok(CylinderIndex {
        cylinders,
        window_days,
        radius_km,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_radius_keeps_only_the_site() {
        let geom = GridGeometry::rectangular(4, 4, 1.0);
        let sites = [Site { day: 0, row: 2, col: 1 }];
        let idx = build_cylinders(&geom, &sites, 0.001, 7, 10).unwrap();
        assert_eq!(idx.cylinders[0].cells, vec![(2, 1)]);
    }

    #[test]
    fn site_outside_master_is_an_error() {
        let mut geom = GridGeometry::rectangular(3, 3, 1.0);
        geom.master[4] = 0;
        let sites = [Site { day: 0, row: 1, col: 1 }];
        let e = build_cylinders(&geom, &sites, 50.0, 7, 10).unwrap_err();
        assert!(matches!(e, GridError::SiteOutsideMaster { row: 1, col: 1, .. }));
    }
}
