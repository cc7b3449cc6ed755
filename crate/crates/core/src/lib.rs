//! Stochastic samplers that share the time-marginals of a deterministic flow.
//!
//! Given a flow field `v(x, t)` transporting an isotropic Gaussian `p1` to `p0`, the
//! score of every marginal can be imputed from the velocity, and any diffusion
//! schedule `g~(t)` then yields an SDE with the same marginals:
//!
//! ```text
//! dx = [v(x, t) + g~(t)^2 / 2 * grad log p_t(x)] dt + g~(t) dW
//! ```
//!
//! Modules:
//! - [`flow`]: closed-form velocity fields, score imputation, guidance.
//! - [`sde`]: diffusion families and coefficient transforms.
//! - [`integrator`]: reverse-time Euler–Maruyama with seeded per-trajectory streams.
//! - [`stats`]: analytic marginals, estimators, Gaussian KL.
//! - [`config`], [`experiment`], [`output`], [`verify`], [`cli`]: the `flowsde` tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod integrator;
pub mod output;
pub mod sde;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use flow::{FlowField, GaussianEndpoint, GaussianFlow, GaussianMixtureEndpoint, MixtureFlow, Schedule};
pub use integrator::{simulate_ode, simulate_reverse, RngSpec, SimulationOptions, TimeGrid, TrajectoryEnsemble};
pub use sde::{DiffusionSchedule, Family, SdeCoefficients};
pub use stats::{AnalyticMarginal, KlDirection, MarginalReport};
