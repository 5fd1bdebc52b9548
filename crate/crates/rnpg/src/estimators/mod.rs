//! Reuse-based gradient and Fisher-information estimators.
//!
//! Both estimators average per-sample terms over the `min(K, available)`
//! most recent batches of a replay window, correcting every historical
//! sample by the per-pair policy likelihood ratio
//! `omega_hat = pi(a|s; theta_now) / pi(a|s; theta_behavior)`. The exact
//! occupancy-measure ratio has no closed form for the implemented
//! environments; the policy ratio is the drop-in approximation and the hook
//! for an exact ratio is the same code path with a different behavior
//! density recorded at collection time.
//!
//! With K = 1 both estimators reduce exactly to their vanilla
//! (current-batch-only) counterparts.

mod window;

pub use window::{Batch, ReplayWindow};

use ndarray::{Array1, Array2};

use crate::env::{Episode, Sample};
use crate::linalg;
use crate::policy::PolicyParams;

/// Exponent bound for likelihood ratios; exp of anything larger overflows.
const RATIO_EXP_LIMIT: f64 = 700.0;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("estimator invoked on an empty window or batch")]
    EmptyBatch,
    #[error("batch iterations must strictly increase (last {last}, pushed {next})")]
    NonIncreasingIteration { last: usize, next: usize },
    #[error(
        "likelihood ratio exponent {exponent:.3} exceeds {limit}; \
         policies too far apart for importance weighting (behavior logp {behavior_logp:.3})"
    )]
    RatioOverflow {
        exponent: f64,
        limit: f64,
        behavior_logp: f64,
    },
    #[error("Fisher solve failed: {0}")]
    Solve(#[from] linalg::LinalgError),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EstimatorError {
    fn serde(e: serde_json::Error) -> Self {
        EstimatorError::Checkpoint(e.to_string())
    }
}

/// How the samples in the window were generated, which fixes the estimator
/// normalization.
///
/// In i.i.d. mode each sample is an occupancy draw with unit weight, and the
/// gradient carries the explicit 1/(1-gamma) factor. In single-path mode the
/// per-step weight gamma^t absorbs that factor (policy-gradient-theorem
/// form) and batches are normalized by their episode count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Iid,
    SinglePath,
}

/// Where advantages come from when a sample is re-evaluated under the
/// current policy.
///
/// `Frozen` keeps the value computed at collection time (the only option
/// when fresh rollouts would be needed); `LqcClosedForm` recomputes
/// `1 + theta^2 - (s+a)^2` under the current parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageModel {
    Frozen,
    LqcClosedForm,
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub gamma: f64,
    pub mode: SamplingMode,
    pub advantage: AdvantageModel,
    /// Optional ratio clip bound; `None` leaves ratios unclipped.
    pub omega_max: Option<f64>,
}

/// Running min/max/mean of the likelihood ratios seen by one estimate.
#[derive(Debug, Clone, Copy)]
pub struct RatioStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    count: usize,
    sum: f64,
}

impl RatioStats {
    fn new() -> Self {
        RatioStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            mean: f64::NAN,
            count: 0,
            sum: 0.0,
        }
    }

    fn update(&mut self, w: f64) {
        self.min = self.min.min(w);
        self.max = self.max.max(w);
        self.sum += w;
        self.count += 1;
        self.mean = self.sum / self.count as f64;
    }
}

/// Gradient estimate, regularized Fisher matrix, natural direction, and
/// diagnostics for one iteration.
#[derive(Debug, Clone)]
pub struct NaturalGradReport {
    pub grad_hat: Array1<f64>,
    pub fim_hat: Array2<f64>,
    pub nat_dir: Array1<f64>,
    pub ratio_stats: RatioStats,
    pub solver_residual: f64,
}

/// Closed-form LQC advantage under the shift-Gaussian policy:
/// `A(s,a) = 1 + theta^2 - (s+a)^2`.
pub fn lqc_advantage(theta: f64, state: f64, action: f64) -> f64 {
    let z = state + action;
    1.0 + theta * theta - z * z
}

/// Annotate complete episodes with reward-to-go advantages.
///
/// The advantage of step t is the discounted reward-to-go within its episode
/// minus a baseline equal to the batch mean of reward-to-go over all
/// timesteps, so the advantages of a batch always average to zero. The
/// emitted samples carry discount weight gamma^t.
pub fn advantage_reward_to_go(
    episodes: &[Episode],
    gamma: f64,
) -> Result<Vec<Sample>, EstimatorError> {
    let total: usize = episodes.iter().map(|e| e.steps.len()).sum();
    if total == 0 {
        return Err(EstimatorError::EmptyBatch);
    }
    let mut rtg_all = Vec::with_capacity(total);
    for ep in episodes {
        let mut rtg = vec![0.0; ep.steps.len()];
        let mut acc = 0.0;
        for (t, step) in ep.steps.iter().enumerate().rev() {
            acc = step.reward + gamma * acc;
            rtg[t] = acc;
        }
        rtg_all.push(rtg);
    }
    let baseline =
        rtg_all.iter().flat_map(|r| r.iter()).sum::<f64>() / total as f64;

    let mut samples = Vec::with_capacity(total);
    for (ep, rtg) in episodes.iter().zip(rtg_all.iter()) {
        let mut weight = 1.0;
        for (step, &r) in ep.steps.iter().zip(rtg.iter()) {
            samples.push(Sample {
                state: step.state.clone(),
                action: step.action,
                behavior_logp: step.logp,
                advantage: r - baseline,
                discount_weight: weight,
            });
            weight *= gamma;
        }
    }
    Ok(samples)
}

/// Per-pair policy likelihood ratio
/// `exp(logp(theta_now; s, a) - behavior_logp)`, optionally clipped to
/// `[0, omega_max]`. An exponent above 700 without a clip bound is an error;
/// it signals policies too far apart for the weights to be meaningful.
pub fn likelihood_ratio_hat(
    policy_now: &PolicyParams,
    sample: &Sample,
    omega_max: Option<f64>,
) -> Result<f64, EstimatorError> {
    let exponent = policy_now.logp(&sample.state, sample.action) - sample.behavior_logp;
    if exponent > RATIO_EXP_LIMIT {
        return match omega_max {
            Some(cap) => Ok(cap),
            None => Err(EstimatorError::RatioOverflow {
                exponent,
                limit: RATIO_EXP_LIMIT,
                behavior_logp: sample.behavior_logp,
            }),
        };
    }
    let w = exponent.exp();
    Ok(match omega_max {
        Some(cap) => w.min(cap),
        None => w,
    })
}

fn advantage_of(sample: &Sample, policy_now: &PolicyParams, model: AdvantageModel) -> f64 {
    match model {
        AdvantageModel::Frozen => sample.advantage,
        AdvantageModel::LqcClosedForm => lqc_advantage(
            policy_now.shift(),
            sample.state[0],
            sample.action.continuous(),
        ),
    }
}

fn batch_norm(batch: &Batch, cfg: &EstimatorConfig) -> f64 {
    match cfg.mode {
        SamplingMode::Iid => 1.0 / ((1.0 - cfg.gamma) * batch.samples.len() as f64),
        SamplingMode::SinglePath => 1.0 / batch.episodes as f64,
    }
}

/// Reuse-based gradient estimate: the average over the `min(k_grad, len)`
/// most recent batches of the importance-weighted per-sample terms
/// `omega_hat * discount_weight * advantage * score`, with each batch
/// normalized per [`SamplingMode`]. Returns the estimate together with the
/// ratio statistics of the weights it used.
pub fn grad_estimate_reuse(
    window: &ReplayWindow,
    policy_now: &PolicyParams,
    k_grad: usize,
    cfg: &EstimatorConfig,
) -> Result<(Array1<f64>, RatioStats), EstimatorError> {
    if window.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let d = policy_now.dim();
    let mut acc = Array1::<f64>::zeros(d);
    let mut score = vec![0.0; d];
    let mut stats = RatioStats::new();
    let mut batches = 0usize;
    for batch in window.recent(k_grad) {
        let norm = batch_norm(batch, cfg);
        let mut batch_acc = Array1::<f64>::zeros(d);
        for sample in &batch.samples {
            let w = likelihood_ratio_hat(policy_now, sample, cfg.omega_max)?;
            stats.update(w);
            let adv = advantage_of(sample, policy_now, cfg.advantage);
            let coeff = w * sample.discount_weight * adv;
            policy_now.score_into(&sample.state, sample.action, &mut score);
            for (a, s) in batch_acc.iter_mut().zip(score.iter()) {
                *a += coeff * s;
            }
        }
        acc += &(batch_acc * norm);
        batches += 1;
    }
    acc /= batches as f64;
    Ok((acc, stats))
}

/// Reuse-based regularized Fisher estimate:
/// `epsilon * I + average of omega_hat-weighted score outer products` over
/// the `min(k_fim, len)` most recent batches. The average keeps the
/// occupancy-measure weighting: in single-path mode each outer product
/// carries its discount weight, self-normalized within the batch; i.i.d.
/// samples carry unit weight, reducing to the plain mean. The output is
/// exactly symmetric and positive definite by construction.
pub fn fim_estimate_reuse(
    window: &ReplayWindow,
    policy_now: &PolicyParams,
    k_fim: usize,
    epsilon: f64,
    cfg: &EstimatorConfig,
) -> Result<Array2<f64>, EstimatorError> {
    if window.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let d = policy_now.dim();
    let batches: Vec<&Batch> = window.recent(k_fim).collect();
    let k = batches.len() as f64;
    let total: usize = batches.iter().map(|b| b.samples.len()).sum();

    // Row-weighted score matrix: F - eps*I = A^T A with rows sqrt(c) * score.
    let mut rows = Array2::<f64>::zeros((total, d));
    let mut score = vec![0.0; d];
    let mut r = 0usize;
    for batch in &batches {
        let weight_sum: f64 = match cfg.mode {
            SamplingMode::Iid => batch.samples.len() as f64,
            SamplingMode::SinglePath => batch.samples.iter().map(|s| s.discount_weight).sum(),
        };
        for sample in &batch.samples {
            let w = likelihood_ratio_hat(policy_now, sample, cfg.omega_max)?;
            let c = w * sample.discount_weight / (weight_sum * k);
            policy_now.score_into(&sample.state, sample.action, &mut score);
            let root = c.sqrt();
            for (dst, s) in rows.row_mut(r).iter_mut().zip(score.iter()) {
                *dst = root * s;
            }
            r += 1;
        }
    }
    let mut fim = Array2::<f64>::zeros((d, d));
    ndarray::linalg::general_mat_mul(1.0, &rows.t(), &rows, 0.0, &mut fim);
    // Enforce exact symmetry and add the regularizer.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (fim[(i, j)] + fim[(j, i)]);
            fim[(i, j)] = v;
            fim[(j, i)] = v;
        }
        fim[(i, i)] += epsilon;
    }
    Ok(fim)
}

/// Natural direction: solve `fim_hat * x = grad_hat` by Cholesky
/// factorization, returning the direction and the solve residual
/// `||F x - g||_2`.
pub fn natural_direction(
    grad_hat: &Array1<f64>,
    fim_hat: &Array2<f64>,
) -> Result<(Array1<f64>, f64), EstimatorError> {
    let (x, res) = linalg::spd_solve(fim_hat.view(), grad_hat.view())?;
    Ok((x, res))
}

/// Gradient, Fisher matrix and natural direction for one iteration. The two
/// windows may alias (shared batches) or hold independently drawn batches.
pub fn natural_gradient_report(
    grad_window: &ReplayWindow,
    fim_window: &ReplayWindow,
    policy_now: &PolicyParams,
    k_grad: usize,
    k_fim: usize,
    epsilon: f64,
    cfg: &EstimatorConfig,
) -> Result<NaturalGradReport, EstimatorError> {
    let (grad_hat, ratio_stats) = grad_estimate_reuse(grad_window, policy_now, k_grad, cfg)?;
    let fim_hat = fim_estimate_reuse(fim_window, policy_now, k_fim, epsilon, cfg)?;
    let (nat_dir, solver_residual) = natural_direction(&grad_hat, &fim_hat)?;
    Ok(NaturalGradReport {
        grad_hat,
        fim_hat,
        nat_dir,
        ratio_stats,
        solver_residual,
    })
}

/// Importance-sampling estimate of the advantage surrogate
/// `E[omega_hat(theta) * A]` over the window, normalized like the gradient
/// estimate. Differences of this quantity between two parameters back the
/// trust-region line search without fresh rollouts.
pub fn surrogate_objective(
    window: &ReplayWindow,
    policy_at: &PolicyParams,
    k: usize,
    cfg: &EstimatorConfig,
) -> Result<f64, EstimatorError> {
    if window.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let mut acc = 0.0;
    let mut batches = 0usize;
    for batch in window.recent(k) {
        let norm = batch_norm(batch, cfg);
        let mut batch_acc = 0.0;
        for sample in &batch.samples {
            let w = likelihood_ratio_hat(policy_at, sample, cfg.omega_max)?;
            let adv = advantage_of(sample, policy_at, cfg.advantage);
            batch_acc += w * sample.discount_weight * adv;
        }
        acc += norm * batch_acc;
        batches += 1;
    }
    Ok(acc / batches as f64)
}
