//! Parameter-update rules: projected gradient ascent with step schedules,
//! Adam preconditioning of the natural direction, and the KL-constrained
//! trust-region step with backtracking line search.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::linalg;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("step size must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("polynomial decay exponent must lie in (0.5, 1], got {0}")]
    InvalidDecay(f64),
    #[error("non-finite update direction at component {0}")]
    NonFiniteDirection(usize),
    #[error("projection radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("quadratic form x^T F x = {0} is not positive; Fisher estimate lost definiteness")]
    BrokenQuadraticForm(f64),
    #[error(transparent)]
    Solve(#[from] linalg::LinalgError),
}

/// Step-size schedule. The polynomial schedule `alpha / n^p` with
/// `p in (0.5, 1]` is square-summable but not summable, the standard
/// stochastic-approximation requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    Polynomial { alpha: f64, p: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        match *self {
            StepSchedule::Constant { alpha } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(OptimError::InvalidAlpha(alpha));
                }
            }
            StepSchedule::Polynomial { alpha, p } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(OptimError::InvalidAlpha(alpha));
                }
                if !(p > 0.5 && p <= 1.0) {
                    return Err(OptimError::InvalidDecay(p));
                }
            }
        }
        Ok(())
    }

    /// Step size for update `n` (1-based).
    pub fn at(&self, n: usize) -> f64 {
        debug_assert!(n >= 1, "schedules are 1-indexed");
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Polynomial { alpha, p } => alpha / (n as f64).powf(p),
        }
    }
}

/// Componentwise clip to `[-radius, radius]`: the simplest compact convex
/// parameter set. The default radius 1e6 leaves it inert unless configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBox {
    pub radius: f64,
}

impl ProjectionBox {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(OptimError::InvalidRadius(self.radius));
        }
        Ok(())
    }

    pub fn clip(&self, theta: &mut Array1<f64>) {
        for v in theta.iter_mut() {
            *v = v.clamp(-self.radius, self.radius);
        }
    }
}

/// Projected ascent step `clip(theta + alpha_n * nat_dir)`.
pub fn update_step(
    theta: &Array1<f64>,
    nat_dir: &Array1<f64>,
    schedule: StepSchedule,
    n: usize,
    bounds: ProjectionBox,
) -> Result<Array1<f64>, OptimError> {
    if let Some(i) = nat_dir.iter().position(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteDirection(i));
    }
    let alpha = schedule.at(n);
    let mut next = theta + &(nat_dir * alpha);
    bounds.clip(&mut next);
    Ok(next)
}

/// First and second moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Array1<f64>,
    v: Array1<f64>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: Array1::zeros(dim),
            v: Array1::zeros(dim),
            t: 0,
        }
    }

    /// Standard bias-corrected Adam transform of a direction. The step-size
    /// multiplication stays with the schedule; this only reshapes the
    /// direction.
    pub fn precondition(
        &mut self,
        dir: &Array1<f64>,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Array1<f64> {
        self.t += 1;
        let t = self.t as i32;
        self.m = &self.m * beta1 + &(dir * (1.0 - beta1));
        self.v = &self.v * beta2 + &(dir.mapv(|g| g * g) * (1.0 - beta2));
        let m_hat = &self.m / (1.0 - beta1.powi(t));
        let v_hat = &self.v / (1.0 - beta2.powi(t));
        ndarray::Zip::from(&m_hat)
            .and(&v_hat)
            .map_collect(|&m, &v| m / (v.sqrt() + eps))
    }
}

/// Outcome of one trust-region step.
#[derive(Debug, Clone)]
pub struct TrpoOutcome {
    pub theta: Array1<f64>,
    pub accepted: bool,
    /// Multiplier applied to the natural direction (0 when rejected).
    pub step_scale: f64,
    /// Quadratic KL `0.5 * step^T F step` of the returned parameter.
    pub kl: f64,
}

/// KL-constrained update: full step `beta * x` with `x = F^-1 g` and
/// `beta = sqrt(2 delta / (x^T F x))`, halved up to `max_backtracks` times
/// until the estimated objective improvement is nonnegative (the quadratic
/// KL is within `delta` for every candidate by construction). Returns the
/// parameter unchanged when every candidate fails.
///
/// `improvement` estimates the objective change of a candidate parameter
/// relative to the current one.
pub fn trpo_step(
    theta: &Array1<f64>,
    grad_hat: &Array1<f64>,
    fim_hat: &Array2<f64>,
    delta: f64,
    improvement: &mut dyn FnMut(&Array1<f64>) -> f64,
) -> Result<TrpoOutcome, OptimError> {
    const MAX_BACKTRACKS: usize = 10;
    let grad_norm = grad_hat.dot(grad_hat).sqrt();
    if grad_norm == 0.0 {
        return Ok(TrpoOutcome {
            theta: theta.clone(),
            accepted: true,
            step_scale: 0.0,
            kl: 0.0,
        });
    }
    let (x, _) = linalg::spd_solve(fim_hat.view(), grad_hat.view())?;
    let q = x.dot(&fim_hat.dot(&x));
    if q <= 0.0 || !q.is_finite() {
        return Err(OptimError::BrokenQuadraticForm(q));
    }
    let beta_full = (2.0 * delta / q).sqrt();
    let mut scale = beta_full;
    for _ in 0..=MAX_BACKTRACKS {
        let candidate = theta + &(&x * scale);
        let kl = 0.5 * scale * scale * q;
        if kl <= delta + 1e-12 && improvement(&candidate) >= 0.0 {
            return Ok(TrpoOutcome {
                theta: candidate,
                accepted: true,
                step_scale: scale,
                kl,
            });
        }
        scale *= 0.5;
    }
    Ok(TrpoOutcome {
        theta: theta.clone(),
        accepted: false,
        step_scale: 0.0,
        kl: 0.0,
    })
}
