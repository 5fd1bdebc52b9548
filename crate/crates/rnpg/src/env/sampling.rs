//! Trajectory sampling schemes.
//!
//! The strict-i.i.d. scheme draws, for each sample, a geometric horizon
//! T with success probability 1-gamma (so P(T=t) = gamma^t (1-gamma)),
//! rolls one fresh trajectory of length T, and keeps only the final
//! state-action pair. That pair is distributed according to the discounted
//! occupancy measure of the policy. Wasteful by design; single-path rollouts
//! are the sample-efficient alternative.

use rand::RngCore;
use rand_distr::{Distribution, Geometric};

use super::{Action, EnvError, Environment, Sample, State};
use crate::policy::PolicyParams;

/// Safety cap on the geometric horizon; exceeding it signals a discount
/// factor too close to 1 for restart-based sampling.
pub const HORIZON_CAP: u64 = 1_000_000;

/// Draw the geometric horizon T with P(T=t) = gamma^t (1-gamma), t >= 0.
pub fn draw_horizon(gamma: f64, rng: &mut dyn RngCore) -> Result<u64, EnvError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(EnvError::InvalidGamma(gamma));
    }
    let t = Geometric::new(1.0 - gamma)
        .expect("success probability in (0,1]")
        .sample(rng);
    if t > HORIZON_CAP {
        return Err(EnvError::HorizonCapExceeded { t, cap: HORIZON_CAP });
    }
    Ok(t)
}

/// Draw `count` independent samples from the discounted occupancy measure of
/// `policy`. Each sample restarts the environment, rolls a geometric-horizon
/// trajectory, and keeps only the final pair. If an episode terminates before
/// the horizon is reached, the rollout restarts from the start distribution
/// (termination treated as a transition back to the restart distribution).
///
/// `advantage_fn` fills the advantage field at collection time; the i.i.d.
/// scheme has no rollout tail to accumulate, so the caller supplies the
/// model (closed form for LQC).
pub fn sample_occupancy_iid(
    env: &dyn Environment,
    policy: &PolicyParams,
    count: usize,
    advantage_fn: &dyn Fn(&State, Action) -> f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<Sample>, EnvError> {
    if count == 0 {
        return Err(EnvError::EmptyRequest(count));
    }
    let gamma = env.spec().gamma;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let horizon = draw_horizon(gamma, rng)?;
        let mut state = env.initial_state(rng);
        let mut timestep = 0usize;
        let mut rolled = 0u64;
        while rolled < horizon {
            let action = policy.sample_action(&state, rng);
            let tr = env.step(&state, action, timestep, rng)?;
            if tr.terminal {
                state = env.initial_state(rng);
                timestep = 0;
            } else {
                state = tr.next_state;
                timestep += 1;
            }
            rolled += 1;
        }
        let action = policy.sample_action(&state, rng);
        let behavior_logp = policy.logp(&state, action);
        let advantage = advantage_fn(&state, action);
        samples.push(Sample {
            state,
            action,
            behavior_logp,
            advantage,
            discount_weight: 1.0,
        });
    }
    Ok(samples)
}

/// One recorded step of a single-path episode.
#[derive(Debug, Clone)]
pub struct EpisodeStep {
    pub state: State,
    pub action: Action,
    pub logp: f64,
    pub reward: f64,
}

/// A complete episode, terminated either by the environment or its step cap.
#[derive(Debug, Clone)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    pub fn undiscounted_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Roll `episodes` full episodes under `policy`, recording every step with
/// its behavior log-density. Advantages are filled afterwards by
/// `estimators::advantage_reward_to_go`, which needs the whole batch for its
/// baseline.
pub fn sample_single_path(
    env: &dyn Environment,
    policy: &PolicyParams,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Episode>, EnvError> {
    if episodes == 0 {
        return Err(EnvError::EmptyRequest(episodes));
    }
    let cap = env.spec().episode_cap;
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut steps = Vec::new();
        let mut state = env.initial_state(rng);
        for t in 0..cap {
            let action = policy.sample_action(&state, rng);
            let logp = policy.logp(&state, action);
            let tr = env.step(&state, action, t, rng)?;
            steps.push(EpisodeStep {
                state,
                action,
                logp,
                reward: tr.reward,
            });
            if tr.terminal {
                break;
            }
            state = tr.next_state;
        }
        out.push(Episode { steps });
    }
    Ok(out)
}
