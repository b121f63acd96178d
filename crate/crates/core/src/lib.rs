//! Online learning of a context-to-dynamics decoder for finite-horizon LQR.
//!
//! Each environment is a linear system `x' = A x + B u + w` whose dynamics are
//! decoded from an observed context `(C, D)` through an unknown matrix `Θ`:
//! `[A, B] = Θ · blockdiag(C, D)`. The learner keeps a ridge-regression
//! estimate of `Θ`, plays optimistically inside a confidence ellipsoid, and
//! outputs a decoder that turns new contexts into near-optimal controllers.
//!
//! Modules:
//! - [`lqr`]: Riccati recursion, optimal values and gains, Bellman checks.
//! - [`decoder`]: contexts, decoders and regression features.
//! - [`learner`]: the optimistic online learner.
//! - [`env`]: noisy rollouts and regret accounting.
//! - [`benchmark`]: the point-mass path-following benchmark.
//! - [`experiment`]: config-driven experiment runs and CSV/JSON outputs.

pub mod benchmark;
pub mod decoder;
pub mod env;
mod error;
pub mod experiment;
pub mod learner;
pub mod lqr;
pub mod par;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
