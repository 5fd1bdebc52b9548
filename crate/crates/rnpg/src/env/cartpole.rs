//! Classic cartpole balancing task with the standard Barto-Sutton physics
//! constants, integrated by the explicit Euler scheme (position updated with
//! the old velocity). The agent receives a reward of one for every step
//! taken; episodes end when the cart leaves the track, the pole tips past
//! 12 degrees, or the step cap is reached.

use rand::Rng;
use rand::RngCore;

use super::{Action, ActionKind, EnvError, EnvSpec, Environment, State, Transition};

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
const INIT_RANGE: f64 = 0.05;

pub struct Cartpole {
    spec: EnvSpec,
}

impl Cartpole {
    pub fn new(gamma: f64) -> Self {
        Cartpole {
            spec: EnvSpec {
                state_dim: 4,
                action_kind: ActionKind::Discrete { n: 2 },
                gamma,
                episode_cap: 200,
            },
        }
    }
}

impl Environment for Cartpole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> State {
        let mut s = State::new();
        for _ in 0..4 {
            s.push(rng.gen_range(-INIT_RANGE..=INIT_RANGE));
        }
        s
    }

    fn reward(&self, _state: &State, _action: Action) -> f64 {
        1.0
    }

    fn step(
        &self,
        state: &State,
        action: Action,
        timestep: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Transition, EnvError> {
        for &v in state.iter() {
            if !v.is_finite() {
                return Err(EnvError::NonFiniteState(v));
            }
        }
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        // action 0 pushes left, action 1 pushes right
        let force = if action.discrete() == 1 {
            FORCE_MAG
        } else {
            -FORCE_MAG
        };

        let cos_t = theta.cos();
        let sin_t = theta.sin();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_t - cos_t * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t * cos_t / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS;

        let mut next = State::new();
        next.push(x + TAU * x_dot);
        next.push(x_dot + TAU * x_acc);
        next.push(theta + TAU * theta_dot);
        next.push(theta_dot + TAU * theta_acc);

        let terminal = next[0].abs() > X_LIMIT
            || next[2].abs() > THETA_LIMIT
            || timestep + 1 >= self.spec.episode_cap;

        Ok(Transition {
            state: state.clone(),
            action,
            reward: 1.0,
            next_state: next,
            terminal,
            timestep,
        })
    }
}
