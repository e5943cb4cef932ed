//! Time series alignment under joint temporal warping and global feature-space transforms.
//!
//! - [`align`]: DTW and soft-DTW kernels on cost matrices.
//! - [`transforms`]: Stiefel, affine-Stiefel and transposition families with their registration solvers.
//! - [`gi`]: DTW-GI (block-coordinate descent) and softDTW-GI (Riemannian gradient descent).
//! - [`barycenter`]: averaging under the GI geometry.
//! - [`forecast`]: attention-kernel structured prediction.
//! - [`synth`]: seeded synthetic datasets.
//! - [`io`] and [`experiments`]: file formats and study runners used by the CLI.

pub mod align;
pub mod barycenter;
pub mod error;
pub mod experiments;
pub mod forecast;
pub mod gi;
pub mod io;
pub mod rng;
pub mod series;
pub mod synth;
pub mod transforms;

pub use align::{cost_matrix, dtw, soft_dtw, soft_dtw_grad, Alignment, AlignmentPath, CostMatrix};
pub use error::{Error, Result};
pub use gi::{dtw_gi_bcd, soft_dtw_gi_grad, Family, GiResult, SolverConfig};
pub use series::TimeSeries;
pub use transforms::{AffineStiefel, ChromaTransposition, StiefelLinear, Transform};
