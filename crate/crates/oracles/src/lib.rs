//! Independent reference implementations used as test oracles.
//!
//! Everything in this crate is written directly from first principles
//! (forward recursions, closed forms, fixed-point iterations, finite
//! differences) and deliberately avoids the code paths of the library it
//! checks. It is a dev-dependency only; nothing here ships in the library.

pub mod bounds;
pub mod closed;
pub mod hmm;
pub mod kalman;

pub use bounds::{cov_bound_reference, cross_bound_reference, ols_bound_reference};
pub use closed::{central_difference_gradient, lasso_kkt_residual, soft_threshold};
pub use hmm::{ExactTables, HmmRef};
pub use kalman::{lyapunov_fixed_point, KalmanRef};
