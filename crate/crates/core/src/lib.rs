//! Joint bias field estimation and level set segmentation.
//!
//! The observed image is modeled as `I = b * J + n` with a smooth
//! multiplicative bias `b` spanned by Legendre polynomials and a
//! piecewise-constant true image `J`. Cluster centers, level set functions
//! and bias weights are estimated by alternating minimization.

pub mod basis;
pub mod cli;
pub mod error;
pub mod imagegrid;
pub mod levelset;
pub mod metrics;
pub mod model;
pub mod solver;
pub mod synth;

pub use basis::{build_basis, eval_bias, BasisSet, WeightMatrix};
pub use error::{Error, Result};
pub use imagegrid::{LabelMap, RasterImage, ScalarField};
pub use levelset::{LevelSetStack, SmoothStep};
pub use model::{ClusterMatrix, ModelParams};
pub use solver::{run, run_chan_vese, Segmentation, SolveConfig, SolveMode, SolveTrace};
