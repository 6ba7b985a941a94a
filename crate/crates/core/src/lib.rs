//! Time-varying kernelized bandit optimization.
//!
//! The crate implements GP-UCB style policies for reward functions that drift
//! inside a reproducing kernel Hilbert space under a total-variation budget:
//!
//! - [`policies`]: stationary IGP-UCB, restarted GP-UCB (R-GP-UCB) and
//!   sliding-window GP-UCB (SW-GP-UCB) with their confidence-width schedules.
//! - [`environment`]: drifting RKHS function sequences with exact norm and
//!   budget accounting, plus sub-Gaussian bandit feedback.
//! - [`posterior`]: regularized kernel regression (the surrogate GP posterior).
//! - [`infogain`]: maximum information gain estimators.
//! - [`feature_space`]: explicit finite feature maps used to cross-check the
//!   kernelized computations against their design-matrix counterparts.
//! - [`harness`]: episodes, dynamic regret, coverage experiments and sweeps.
//! - [`config`]: the experiment file format consumed by the `tvkb` binary.

pub mod config;
pub mod environment;
pub mod error;
pub mod feature_space;
pub mod harness;
pub mod infogain;
pub mod kernels;
pub mod linalg;
pub mod policies;
pub mod posterior;
pub mod seed;

pub use error::{Error, Result};
pub use kernels::{CandidateSet, Domain, Kernel, KernelKind, MaternNu};
