//! One-dimensional linear quadratic control encoded as an RL problem:
//! deterministic transition s' = s + a, reward -(s+a)^2, standard-normal
//! start distribution. The control noise lives inside the stochastic policy,
//! so the transition itself draws nothing. Episodes never terminate; the
//! samplers truncate at the episode cap.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{Action, ActionKind, EnvError, EnvSpec, Environment, State, Transition};

pub struct Lqc {
    spec: EnvSpec,
}

impl Lqc {
    pub fn new(gamma: f64) -> Self {
        Lqc {
            spec: EnvSpec {
                state_dim: 1,
                action_kind: ActionKind::Continuous {
                    low: f64::NEG_INFINITY,
                    high: f64::INFINITY,
                },
                gamma,
                episode_cap: 200,
            },
        }
    }
}

impl Environment for Lqc {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> State {
        let mut s = State::new();
        s.push(StandardNormal.sample(rng));
        s
    }

    fn reward(&self, state: &State, action: Action) -> f64 {
        let z = state[0] + action.continuous();
        -(z * z)
    }

    fn step(
        &self,
        state: &State,
        action: Action,
        timestep: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Transition, EnvError> {
        let s = state[0];
        let a = action.continuous();
        if !s.is_finite() {
            return Err(EnvError::NonFiniteState(s));
        }
        if !a.is_finite() {
            return Err(EnvError::NonFiniteAction(a));
        }
        let mut next = State::new();
        next.push(s + a);
        Ok(Transition {
            state: state.clone(),
            action,
            reward: -((s + a) * (s + a)),
            next_state: next,
            terminal: false,
            timestep,
        })
    }
}
