#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Differentially private off-policy evaluation.
//!
//! GTD2-style primal-dual stochastic gradients over per-trajectory
//! statistics, clipped and perturbed with Gaussian noise, with a subsampled
//! Rényi-DP moments accountant for calibrating the noise scale.
//!
//! Module map:
//! - [`env`]: chain and mountain-car MDPs, policies, feature maps.
//! - [`ope`]: statistics, gradients, GTD2, fixed points, MSPBE, LSTD.
//! - [`privacy`]: moment bounds, composition, tail bounds, σ calibration.
//! - [`gpope`]: the private training loop.
//! - [`diagnostics`]: saddle spectrum and convergence-bound recursions.
//! - [`harness`]: experiment configs, sweeps, oracles, CSV output.

pub mod diagnostics;
pub mod env;
pub mod error;
pub mod gpope;
pub mod harness;
pub mod ope;
pub mod privacy;
pub mod seed;

pub use env::{EnvSpec, FeatureMap, Policy, State, Trajectory, Transition};
pub use error::{Error, Result};
pub use gpope::{gpope_run, NoiseConfig, RunRecord, RunSettings, StepSchedule};
pub use ope::{GradientVector, OracleMode, SaddleIterate, StatTriple};
pub use privacy::{AccountantState, AuditReport, PrivacyBudget};
