//! Isoperimetric compactness prior for binary segmentation masks.
//!
//! The crate measures how close a segmented region is to a disk through the
//! ratio `mu = 4*pi*A / L^2`, turns it into an admissibility test and a hinge
//! penalty `max(0, tau - mu)`, and provides:
//!
//! - [`raster`]: prediction fields, binary masks and bit-exact PGM I/O,
//! - [`geometry`]: connected components, hole filling, area/perimeter
//!   estimators and [`geometry::region_report`],
//! - [`relax`]: differentiable relaxations with analytic gradients and a
//!   finite-difference checker,
//! - [`metrics`]: Dice coefficient and Hausdorff distance,
//! - [`synth`]: parametric shapes with closed-form ratios,
//! - [`repair`]: projected gradient descent that uses the penalty to close
//!   broken rings,
//! - [`cli`]: the `isoprior` command-line front end.
//!
//! Batch entry points take an [`exec::Execution`] so the same work can run on
//! the rayon pool (feature `parallel`, on by default) or sequentially.

pub mod cli;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod relax;
pub mod repair;
pub mod synth;

mod fmt;

pub use exec::Execution;
pub use geometry::{
    penalty, region_report, Aggregate, Estimator, FillMode, PenaltyConfig, RegionReport,
};
pub use raster::{BinaryMask, GridShape, PredictionField, Threshold};
