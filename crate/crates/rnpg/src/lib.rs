//! Natural policy gradient with importance-sampling reuse of historical
//! trajectories (RNPG), its non-reusing and non-natural baselines, and a
//! statistical verification harness for the asymptotic theory on a
//! one-dimensional linear quadratic control problem.
//!
//! Modules:
//! - [`env`]: discounted-MDP environments (cartpole, LQC) and the two
//!   trajectory-sampling schemes (strict-i.i.d. occupancy sampling and
//!   single-path).
//! - [`policy`]: parameterized stochastic policies with exact log-density,
//!   exact score, and sampling.
//! - [`estimators`]: advantage estimation, the replay window, likelihood
//!   ratios, and the reuse-based gradient and Fisher-information estimators.
//! - [`optim`]: projected (natural) gradient ascent, step schedules, Adam
//!   preconditioning, and the KL-constrained trust-region step.
//! - [`lqc_oracle`]: closed-form LQC quantities and the theoretical
//!   asymptotic covariance, computed independently of the training code.
//! - [`stats`]: sample moments, normal quantiles, and Q-Q comparison.
//! - [`experiment`]: experiment orchestration, seeding, macro-replications,
//!   sweeps, and artifact emission.

pub mod env;
pub mod estimators;
pub mod experiment;
mod linalg;
pub mod lqc_oracle;
pub mod optim;
pub mod policy;
pub mod stats;

pub use experiment::config::ExperimentConfig;
