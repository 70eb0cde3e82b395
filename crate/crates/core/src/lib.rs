//! Deformable 2-D registration of paired chest radiographs and local
//! signal-ratio analysis.
//!
//! The crate aligns an expiration radiograph (moving) onto the paired
//! inspiration radiograph (fixed) with a multiresolution diffeomorphic
//! SVFFD model driven by local normalized cross-correlation, then
//! quantifies local signal change via expiration/inspiration ratio
//! images, craniocaudal projections with robust line fits, and
//! lung-field statistics.
//!
//! Module map:
//! - [`imaging`]: physical-grid rasters, masks, landmarks, smoothing,
//!   resolution pyramids, distance transforms.
//! - [`transform`]: affine maps, cubic B-spline velocity lattices,
//!   scaling-and-squaring exponentials, Jacobian analysis.
//! - [`objective`]: SSD/NCC/LNCC similarity, bending energy, and the
//!   composite loss with exact parameter gradients.
//! - [`optimize`]: Adam, the adaptive convergence rule, multiresolution
//!   drivers, registration pipelines, and the parameter sweep.
//! - [`metrics`]: DICE, surface distances, TRE, folding ratio, MMGJD.
//! - [`analysis`]: ratio images, CC projections, Huber fits, lung
//!   fields, VLC_rel, Spearman correlation, cohort tables.
//! - [`phantom`]: seeded synthetic pairs with ground-truth
//!   deformations for end-to-end verification.
//! - [`io`]: LW2D raster container, PGM masks, landmark and cohort
//!   CSV, dataset directory layout.

pub mod analysis;
pub mod error;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod optimize;
pub mod phantom;
pub mod transform;

pub use error::{Error, Result};
pub use imaging::{BinaryMask, Grid2D, Image2D, LandmarkSet, MaskKind, Vec2};
