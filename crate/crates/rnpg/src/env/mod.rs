//! Discounted-MDP environments behind one abstract interface, plus the two
//! trajectory-sampling schemes: strict-i.i.d. occupancy sampling (a fresh
//! geometric-horizon rollout per sample) and single-path episode rollouts.

mod cartpole;
mod lqc;
mod sampling;

pub use cartpole::Cartpole;
pub use lqc::Lqc;
pub use sampling::{
    draw_horizon, sample_occupancy_iid, sample_single_path, Episode, EpisodeStep, HORIZON_CAP,
};

use arrayvec::ArrayVec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Largest state dimension across the implemented environments.
pub const MAX_STATE_DIM: usize = 4;

/// Stack-allocated state vector; environments here have at most 4 dimensions.
pub type State = ArrayVec<f64, MAX_STATE_DIM>;

/// Build a [`State`] from a slice. Panics if the slice is longer than
/// [`MAX_STATE_DIM`].
pub fn state_from(values: &[f64]) -> State {
    let mut s = State::new();
    s.try_extend_from_slice(values)
        .expect("state dimension exceeds MAX_STATE_DIM");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    Discrete { n: usize },
    Continuous { low: f64, high: f64 },
}

/// A single action value, discrete index or continuous scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

impl Action {
    /// Continuous value, panicking on a discrete action. Used by scalar
    /// environments and the shift-Gaussian policy.
    pub fn continuous(self) -> f64 {
        match self {
            Action::Continuous(v) => v,
            Action::Discrete(_) => panic!("expected continuous action"),
        }
    }

    /// Discrete index, panicking on a continuous action.
    pub fn discrete(self) -> usize {
        match self {
            Action::Discrete(i) => i,
            Action::Continuous(_) => panic!("expected discrete action"),
        }
    }
}

/// Static description of an environment: dimensions, action set, discount
/// factor and the per-episode step cap.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_kind: ActionKind,
    pub gamma: f64,
    pub episode_cap: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EnvError::InvalidGamma(self.gamma));
        }
        if self.episode_cap < 1 {
            return Err(EnvError::InvalidEpisodeCap(self.episode_cap));
        }
        Ok(())
    }
}

/// One environment transition: the pair acted on, the reward, and where the
/// process went.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub next_state: State,
    pub terminal: bool,
    pub timestep: usize,
}

/// One state-action pair with the log-density it was drawn under and an
/// advantage estimate: the atom of all estimators.
///
/// `discount_weight` is `gamma^t` for single-path samples and `1` for
/// strict-i.i.d. occupancy samples.
#[derive(Debug, Clone)]
pub struct Sample {
    pub state: State,
    pub action: Action,
    pub behavior_logp: f64,
    pub advantage: f64,
    pub discount_weight: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("discount factor must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("episode cap must be at least 1, got {0}")]
    InvalidEpisodeCap(usize),
    #[error("non-finite state component {0}")]
    NonFiniteState(f64),
    #[error("non-finite action {0}")]
    NonFiniteAction(f64),
    #[error("geometric horizon {t} exceeded safety cap {cap}; gamma too close to 1")]
    HorizonCapExceeded { t: u64, cap: u64 },
    #[error("requested {0} samples; need at least 1")]
    EmptyRequest(usize),
}

/// A discounted MDP. Implementations are pure functions of
/// `(state, action, rng-draw)` and safe to use from many threads as long as
/// each thread owns its rng stream.
pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Draw an initial state from the start distribution.
    fn initial_state(&self, rng: &mut dyn RngCore) -> State;

    /// Immediate reward of acting in a state.
    fn reward(&self, state: &State, action: Action) -> f64;

    /// Take one step. `timestep` is the zero-based index of the step within
    /// its episode; the environment uses it to signal cap-induced
    /// termination.
    fn step(
        &self,
        state: &State,
        action: Action,
        timestep: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Transition, EnvError>;
}
