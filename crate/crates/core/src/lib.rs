//! Reconstruction and forecasting of sparse, irregularly sampled longitudinal
//! trajectories.
//!
//! The crate is organised around the analysis pipeline:
//!
//! - [`data`]: visit-level records, CSV ingestion, rule-based cleaning and
//!   baseline summaries.
//! - [`smoothing`]: local linear estimation of the pooled mean curve.
//! - [`basis`]: clamped cubic B-splines and their L2-orthonormalisation.
//! - [`fpca`]: reduced-rank functional PCA fitted by maximising the Gaussian
//!   marginal likelihood, conditional-expectation scores, reconstruction and
//!   leave-last-out forecasting.
//! - [`lmm`]: random intercept/slope mixed models with likelihood-ratio tests
//!   and leave-one-subject-out prediction error.
//! - [`eval`]: forecast error summaries and the residual-on-biomarker update.
//! - [`simulate`]: synthetic data with a known ground truth.
//!
//! Inner loops over subjects, folds and grid points run on rayon when the
//! `parallel` feature is enabled (the default). Every reduction is performed in
//! a fixed order, so results are bit-identical with or without it.

pub mod basis;
pub mod data;
pub mod error;
pub mod eval;
pub mod fpca;
pub mod lmm;
pub mod simulate;
pub mod smoothing;
pub mod stats;

mod linalg;
mod optim;
mod par;
pub mod quadrature;

pub use error::{Error, Result};
