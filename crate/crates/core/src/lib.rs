//! Learning and filtering predictive state models by two-stage instrumental
//! regression.
//!
//! The pipeline treats history features as instruments: stage 1 regresses
//! history onto future and extended-future features to denoise them, stage 2
//! ridge-regresses the denoised extended future onto the denoised future to
//! recover a linear operator `W`. Filtering then alternates `p_t = W q_t`
//! with a plugin-specific conditioning step on the incoming observation.
//!
//! Modules:
//! - [`seqdata`]: sequence containers, generators (HMM, linear-Gaussian,
//!   block-structured subsystems, knowledge tracing), CSV and JSON round trips.
//! - [`features`]: history/future/extended-future window extraction, basis
//!   learning, moment stacking.
//! - [`regress`]: linear ridge, logistic, lasso, and conditional mean
//!   embedding regressors.
//! - [`twostage`]: stage-1 denoising, stage-2 operator regression, model
//!   assembly, and the filter/predict loop.
//! - [`hmm`]: discrete observable-operator plugin and an EM baseline.
//! - [`gaussian`]: Gaussian belief plugin for moment-stacked features.
//! - [`kernel`]: Gram-matrix pipeline with kernel Bayes rule filtering.
//! - [`bounds`]: finite-sample deviation bounds and empirical coverage and
//!   convergence harnesses.

pub mod bounds;
mod error;
pub mod features;
pub mod gaussian;
pub mod hmm;
pub mod kernel;
pub mod linalg;
pub mod regress;
pub mod rng;
pub mod seqdata;
pub mod serde_mat;
pub mod twostage;

pub use error::{Error, Result};
