//! Data model and spatial plumbing for gridded anomaly reconstruction:
//! anomaly/mask cubes with a bit-exact binary codec, space-time cylinder
//! indexing, train/validation splitting, footprint-reduction resampling and
//! stochastic damage-mask generation.

pub mod codec;
pub mod cube;
pub mod cylinder;
pub mod error;
pub mod maskgen;
pub mod resample;
pub mod seed;
pub mod split;

pub use codec::{codec_roundtrip, read_cube, read_geometry, write_cube, write_geometry};
pub use cube::{AnomalyCube, DistanceMetric, GridGeometry, MaskCube, MONTH_DAYS};
pub use cylinder::{build_cylinders, Cylinder, CylinderIndex, Site};
pub use error::{GridError, Result};
pub use maskgen::{generate_masks, mask_stats, MaskGenParams, MaskStats};
pub use resample::{downsample, skew, unskew, upsample, SkewDirection, SkewSpec};
pub use seed::derive_seed;
pub use split::{make_split, SplitSpec};
