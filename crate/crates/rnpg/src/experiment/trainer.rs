//! Single-replication training loop. Each replication is a single-threaded
//! state machine owning its rng streams, replay windows, and optimizer
//! state; macro-replications parallelize over reps, never within one.

use std::time::Instant;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Cartpole, Environment, Lqc, Sample};
use crate::estimators::{
    self, AdvantageModel, Batch, EstimatorConfig, ReplayWindow, SamplingMode,
};
use crate::optim::{self, AdamState, ProjectionBox, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::policy::PolicyParams;

use super::config::{Algo, EnvId, ExperimentConfig, FimBatch, SamplingId};

/// One row of metrics.csv.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rep: usize,
    pub iteration: usize,
    pub mean_reward: f64,
    pub theta_norm: f64,
    pub grad_norm: f64,
    pub ratio_max: f64,
    pub wall_ms: u64,
}

/// Everything one replication produces.
#[derive(Debug)]
pub struct RepResult {
    pub rep: usize,
    pub rows: Vec<RunRecord>,
    pub final_params: PolicyParams,
    pub failed: bool,
    pub wall_ms: u64,
}

// Rng stream channels within one replication.
const CHANNELS: u64 = 4;
const CH_INIT: u64 = 0;
const CH_GRAD: u64 = 1;
const CH_FIM: u64 = 2;
const CH_EVAL: u64 = 3;

/// ChaCha8 stream for (rep, channel) under a base seed. The generator and
/// this layout are part of the reproducibility contract: two builds of the
/// same version produce identical streams.
pub fn rep_rng(base_seed: u64, rep: usize, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(rep as u64 * CHANNELS + channel);
    rng
}

/// Derive an unrelated 64-bit seed for auxiliary Monte Carlo streams
/// (splitmix64 of base XOR tag), keeping them out of the training stream
/// family.
pub fn derive_seed(base_seed: u64, tag: u64) -> u64 {
    let mut z = (base_seed ^ tag).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn build_env(cfg: &ExperimentConfig) -> Box<dyn Environment> {
    match cfg.env {
        EnvId::Cartpole => Box::new(Cartpole::new(cfg.gamma)),
        EnvId::Lqc => Box::new(Lqc::new(cfg.gamma)),
    }
}

fn init_policy(cfg: &ExperimentConfig, init_rng: &mut ChaCha8Rng) -> PolicyParams {
    match cfg.env {
        EnvId::Cartpole => PolicyParams::softmax_mlp_he_init(4, 32, 2, init_rng),
        EnvId::Lqc => PolicyParams::gaussian_shift(cfg.theta0),
    }
}

fn estimator_config(cfg: &ExperimentConfig) -> EstimatorConfig {
    EstimatorConfig {
        gamma: cfg.gamma,
        mode: match cfg.sampling {
            SamplingId::Iid => SamplingMode::Iid,
            SamplingId::SinglePath => SamplingMode::SinglePath,
        },
        advantage: match cfg.env {
            EnvId::Lqc => AdvantageModel::LqcClosedForm,
            EnvId::Cartpole => AdvantageModel::Frozen,
        },
        omega_max: cfg.omega_max,
    }
}

/// Collect one batch at the current policy; returns the batch and the mean
/// undiscounted reward backing the metrics row (episode return in
/// single-path mode, immediate reward in i.i.d. mode).
fn collect_batch(
    env: &dyn Environment,
    policy: &PolicyParams,
    cfg: &ExperimentConfig,
    iteration: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Batch, f64), TrainerError> {
    match cfg.sampling {
        SamplingId::Iid => {
            let theta = policy.shift();
            let advantage_fn =
                move |s: &crate::env::State, a: crate::env::Action| {
                    estimators::lqc_advantage(theta, s[0], a.continuous())
                };
            let samples = crate::env::sample_occupancy_iid(
                env,
                policy,
                cfg.batch_size,
                &advantage_fn,
                rng,
            )?;
            let mean_reward = samples
                .iter()
                .map(|s: &Sample| env.reward(&s.state, s.action))
                .sum::<f64>()
                / samples.len() as f64;
            let episodes = samples.len();
            Ok((
                Batch {
                    samples,
                    theta_behavior: policy.clone(),
                    iteration,
                    episodes,
                },
                mean_reward,
            ))
        }
        SamplingId::SinglePath => {
            let episodes = crate::env::sample_single_path(env, policy, cfg.batch_size, rng)?;
            let mean_reward = episodes
                .iter()
                .map(|e| e.undiscounted_return())
                .sum::<f64>()
                / episodes.len() as f64;
            let samples = estimators::advantage_reward_to_go(&episodes, cfg.gamma)?;
            Ok((
                Batch {
                    samples,
                    theta_behavior: policy.clone(),
                    iteration,
                    episodes: episodes.len(),
                },
                mean_reward,
            ))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Estimator(#[from] crate::estimators::EstimatorError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// Fresh-rollout Monte Carlo estimate of the discounted return, used by the
/// trust-region step when `trpo_fresh_eval` is set.
fn fresh_discounted_return(
    env: &dyn Environment,
    policy: &PolicyParams,
    episodes: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let eps = match crate::env::sample_single_path(env, policy, episodes, rng) {
        Ok(e) => e,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut total = 0.0;
    for ep in &eps {
        let mut disc = 1.0;
        for step in &ep.steps {
            total += disc * step.reward;
            disc *= gamma;
        }
    }
    total / eps.len() as f64
}

/// Run one replication to completion. A non-finite parameter or an estimator
/// failure marks the replication failed (with a sentinel NaN metrics row)
/// without touching other replications.
pub fn run_rep(cfg: &ExperimentConfig, rep: usize) -> RepResult {
    let start = Instant::now();
    let env = build_env(cfg);
    let mut init_rng = rep_rng(cfg.base_seed, rep, CH_INIT);
    let mut grad_rng = rep_rng(cfg.base_seed, rep, CH_GRAD);
    let mut fim_rng = rep_rng(cfg.base_seed, rep, CH_FIM);
    let mut eval_rng = rep_rng(cfg.base_seed, rep, CH_EVAL);

    let mut policy = init_policy(cfg, &mut init_rng);
    let est_cfg = estimator_config(cfg);
    let schedule = cfg.step_schedule();
    let bounds = ProjectionBox {
        radius: cfg.box_radius,
    };
    let mut grad_window = ReplayWindow::new(cfg.k_grad);
    let mut fim_window = ReplayWindow::new(cfg.k_fim);
    let mut adam = AdamState::new(policy.dim());

    let mut rows = Vec::new();
    let mut failed = false;

    for n in 0..cfg.iterations {
        let iter_start = Instant::now();
        let step_outcome: Result<(f64, f64, f64), TrainerError> = (|| {
            let (batch, mean_reward) = collect_batch(env.as_ref(), &policy, cfg, n, &mut grad_rng)?;
            if cfg.algo.uses_fim() {
                let fim_batch = match cfg.fim_batch {
                    FimBatch::Shared => batch.clone(),
                    FimBatch::Independent => {
                        collect_batch(env.as_ref(), &policy, cfg, n, &mut fim_rng)?.0
                    }
                };
                fim_window.push(fim_batch)?;
            }
            grad_window.push(batch)?;

            let (grad_norm, ratio_max, next_theta) = match cfg.algo {
                Algo::Vpg | Algo::Rpg => {
                    let (grad, ratios) =
                        estimators::grad_estimate_reuse(&grad_window, &policy, cfg.k_grad, &est_cfg)?;
                    let grad_norm = grad.dot(&grad).sqrt();
                    let dir = if cfg.adam {
                        adam.precondition(&grad, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
                    } else {
                        grad
                    };
                    let next =
                        optim::update_step(policy.theta(), &dir, schedule, n + 1, bounds)?;
                    (grad_norm, ratios.max, next)
                }
                Algo::Vnpg | Algo::Rnpg => {
                    let report = estimators::natural_gradient_report(
                        &grad_window,
                        &fim_window,
                        &policy,
                        cfg.k_grad,
                        cfg.k_fim,
                        cfg.epsilon,
                        &est_cfg,
                    )?;
                    let grad_norm = report.grad_hat.dot(&report.grad_hat).sqrt();
                    let dir = if cfg.adam {
                        adam.precondition(&report.nat_dir, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
                    } else {
                        report.nat_dir
                    };
                    let next =
                        optim::update_step(policy.theta(), &dir, schedule, n + 1, bounds)?;
                    (grad_norm, report.ratio_stats.max, next)
                }
                Algo::TrpoReuse => {
                    let report = estimators::natural_gradient_report(
                        &grad_window,
                        &fim_window,
                        &policy,
                        cfg.k_grad,
                        cfg.k_fim,
                        cfg.epsilon,
                        &est_cfg,
                    )?;
                    let grad_norm = report.grad_hat.dot(&report.grad_hat).sqrt();
                    let current_surrogate = estimators::surrogate_objective(
                        &grad_window,
                        &policy,
                        cfg.k_grad,
                        &est_cfg,
                    )?;
                    let current_fresh = cfg.trpo_fresh_eval.then(|| {
                        fresh_discounted_return(
                            env.as_ref(),
                            &policy,
                            cfg.batch_size,
                            cfg.gamma,
                            &mut eval_rng,
                        )
                    });
                    let kind = policy.kind().clone();
                    let mut improvement = |candidate: &Array1<f64>| -> f64 {
                        let cand = match PolicyParams::from_vec(kind.clone(), candidate.clone()) {
                            Ok(p) => p,
                            Err(_) => return f64::NEG_INFINITY,
                        };
                        match (cfg.trpo_fresh_eval, current_fresh) {
                            (true, Some(base)) => {
                                fresh_discounted_return(
                                    env.as_ref(),
                                    &cand,
                                    cfg.batch_size,
                                    cfg.gamma,
                                    &mut eval_rng,
                                ) - base
                            }
                            _ => estimators::surrogate_objective(
                                &grad_window,
                                &cand,
                                cfg.k_grad,
                                &est_cfg,
                            )
                            .map(|s| s - current_surrogate)
                            .unwrap_or(f64::NEG_INFINITY),
                        }
                    };
                    let outcome = optim::trpo_step(
                        policy.theta(),
                        &report.grad_hat,
                        &report.fim_hat,
                        cfg.trpo_delta,
                        &mut improvement,
                    )?;
                    let mut next = outcome.theta;
                    bounds.clip(&mut next);
                    (grad_norm, report.ratio_stats.max, next)
                }
            };
            policy.set_theta(next_theta)?;
            Ok((mean_reward, grad_norm, ratio_max))
        })();

        let wall_ms = iter_start.elapsed().as_millis() as u64;
        match step_outcome {
            Ok((mean_reward, grad_norm, ratio_max)) => {
                let last = n + 1 == cfg.iterations;
                if n % cfg.record_every == 0 || last {
                    let theta = policy.theta();
                    rows.push(RunRecord {
                        rep,
                        iteration: n,
                        mean_reward,
                        theta_norm: theta.dot(theta).sqrt(),
                        grad_norm,
                        ratio_max,
                        wall_ms,
                    });
                }
            }
            Err(_) => {
                // Mark the replication failed with a sentinel row; other
                // replications are unaffected.
                rows.push(RunRecord {
                    rep,
                    iteration: n,
                    mean_reward: f64::NAN,
                    theta_norm: f64::NAN,
                    grad_norm: f64::NAN,
                    ratio_max: f64::NAN,
                    wall_ms,
                });
                failed = true;
                break;
            }
        }
    }

    RepResult {
        rep,
        rows,
        final_params: policy,
        failed,
        wall_ms: start.elapsed().as_millis() as u64,
    }
}
