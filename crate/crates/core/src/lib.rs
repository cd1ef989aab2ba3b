//! Marginalized linear denoising features.
//!
//! * [`denoise`]: the closed-form single-layer denoiser.
//! * [`corruption`]: explicit finite-`m` corruption, used as a Monte Carlo
//!   oracle for the closed form.
//! * [`stack`]: greedy layer-wise stacking with a threshold nonlinearity.
//! * [`kernel`] and [`widths`]: the composite multi-width RBF kernel and
//!   gradient-based learning of its widths.
//! * [`svm`] and [`cv`]: SMO on precomputed Gram matrices, one-vs-rest, and
//!   grid cross-validation.
//! * [`io`], [`model_file`], [`metrics`], [`pipeline`]: data files, model
//!   persistence and the workflows behind the `slide` CLI.
//!
//! ## Feature flags
//!
//! - `parallel` (default): data-parallel Gram assembly, Monte Carlo
//!   accumulation, one-vs-rest training and grid search through rayon.
//!   Results are bit-identical with and without it.

pub mod corruption;
pub mod cv;
pub mod denoise;
pub mod error;
pub mod exec;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod model_file;
pub mod pipeline;
pub mod stack;
pub mod svm;
pub mod widths;

pub use nalgebra;

pub use denoise::{DataMatrix, DenoiseLayer};
pub use error::{Result, SlideError};
pub use exec::Exec;
pub use kernel::KernelParams;
pub use model_file::SlideModel;
pub use stack::{LayerOutputs, StackConfig, StackModel};
