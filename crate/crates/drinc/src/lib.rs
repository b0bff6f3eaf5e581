//! Distributionally robust infinite-horizon controller synthesis.
//!
//! This crate designs output-feedback controllers for linear systems from a
//! finite set of disturbance-trajectory samples. The worst-case expected
//! quadratic cost over a type-2 Wasserstein ball around the empirical
//! disturbance distribution is minimized subject to conditional
//! value-at-risk safety constraints, with the controller parameterized by
//! finite-impulse-response closed-loop maps. The resulting program is a
//! single semidefinite program assembled in [`synthesis`] and solved through
//! the backend-agnostic [`conic`] layer.
//!
//! Module map:
//! - [`model`]: plant, polytopes, cost and safety specifications.
//! - [`samples`]: sample ingestion, empirical distributions, Wasserstein
//!   distance, test-distribution generators.
//! - [`transport`]: exact solver for the discrete transportation problem.
//! - [`sls`]: closed-loop FIR maps, achievability constraints, controller
//!   realization.
//! - [`dro`]: distributionally robust risk evaluation and oracles.
//! - [`conic`]: conic program representation and solving.
//! - [`synthesis`]: the full synthesis program and baseline designs.
//! - [`sim`]: closed-loop rollouts, metrics, benchmark harness.
//! - [`cli`]: command-line front end.

// Link the system BLAS/LAPACK used by the semidefinite solver backend.
extern crate blas_src;
extern crate lapack_src;

pub mod cli;
pub mod conic;
pub mod dro;
pub mod model;
pub mod samples;
pub mod sim;
pub mod sls;
pub mod synthesis;
pub mod transport;
