//! Parameterized stochastic policies with exact log-density, exact score
//! (the gradient of the log-density with respect to the parameters), and
//! sampling.
//!
//! Two parameterizations are implemented:
//! - `GaussianShift`: a scalar-parameter policy for the LQC problem with
//!   density pi_theta(a|s) = phi(a + s - theta), so that s + a ~ N(theta, 1)
//!   and the score is a + s - theta.
//! - `SoftmaxMlp`: a two-layer fully-connected network (ReLU hidden layer,
//!   softmax head) over discrete actions.

mod mlp;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, State};

const HALF_LN_2PI: f64 = 0.9189385332046727; // ln(2*pi)/2

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    GaussianShift,
    SoftmaxMlp {
        state_dim: usize,
        hidden: usize,
        actions: usize,
    },
}

impl PolicyKind {
    /// Flat parameter dimension.
    pub fn dim(&self) -> usize {
        match *self {
            PolicyKind::GaussianShift => 1,
            PolicyKind::SoftmaxMlp {
                state_dim,
                hidden,
                actions,
            } => hidden * state_dim + hidden + actions * hidden + actions,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("parameter vector length {got} does not match kind dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("non-finite parameter at index {0}")]
    NonFiniteParameter(usize),
    #[error("parameter file is malformed: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A policy: flat parameter vector plus its parameterization descriptor.
///
/// Parameter flattening for the MLP is layer-major, row-major:
/// `[W1 (hidden x state_dim), b1, W2 (actions x hidden), b2]`.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    kind: PolicyKind,
    theta: Array1<f64>,
}

impl PolicyParams {
    pub fn gaussian_shift(theta0: f64) -> Self {
        PolicyParams {
            kind: PolicyKind::GaussianShift,
            theta: Array1::from_elem(1, theta0),
        }
    }

    /// All-zero MLP weights; the softmax head is then uniform for any state.
    pub fn softmax_mlp_zeros(state_dim: usize, hidden: usize, actions: usize) -> Self {
        let kind = PolicyKind::SoftmaxMlp {
            state_dim,
            hidden,
            actions,
        };
        let d = kind.dim();
        PolicyParams {
            kind,
            theta: Array1::zeros(d),
        }
    }

    /// He-uniform initialized weights (limit sqrt(6/fan_in) per layer),
    /// biases zero. Draw order is W1 row-major, then W2 row-major.
    pub fn softmax_mlp_he_init(
        state_dim: usize,
        hidden: usize,
        actions: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let mut params = Self::softmax_mlp_zeros(state_dim, hidden, actions);
        let lim1 = (6.0 / state_dim as f64).sqrt();
        for i in 0..hidden * state_dim {
            params.theta[i] = rng.gen_range(-lim1..=lim1);
        }
        let lim2 = (6.0 / hidden as f64).sqrt();
        let w2_off = hidden * state_dim + hidden;
        for i in 0..actions * hidden {
            params.theta[w2_off + i] = rng.gen_range(-lim2..=lim2);
        }
        params
    }

    pub fn from_vec(kind: PolicyKind, theta: Array1<f64>) -> Result<Self, PolicyError> {
        if theta.len() != kind.dim() {
            return Err(PolicyError::DimensionMismatch {
                got: theta.len(),
                want: kind.dim(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteParameter(i));
        }
        Ok(PolicyParams { kind, theta })
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    /// Scalar parameter of the shift-Gaussian policy.
    pub fn shift(&self) -> f64 {
        debug_assert_eq!(self.kind, PolicyKind::GaussianShift);
        self.theta[0]
    }

    /// Replace the parameter vector, rejecting non-finite entries.
    pub fn set_theta(&mut self, theta: Array1<f64>) -> Result<(), PolicyError> {
        if theta.len() != self.kind.dim() {
            return Err(PolicyError::DimensionMismatch {
                got: theta.len(),
                want: self.kind.dim(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteParameter(i));
        }
        self.theta = theta;
        Ok(())
    }

    /// Exact log-density of `action` in `state`.
    pub fn logp(&self, state: &State, action: Action) -> f64 {
        match self.kind {
            PolicyKind::GaussianShift => {
                let z = action.continuous() + state[0] - self.theta[0];
                -0.5 * z * z - HALF_LN_2PI
            }
            PolicyKind::SoftmaxMlp {
                state_dim,
                hidden,
                actions,
            } => mlp::logp(
                self.theta.as_slice().unwrap(),
                state_dim,
                hidden,
                actions,
                state,
                action.discrete(),
            ),
        }
    }

    /// Exact score, written into `out` (length `dim()`).
    pub fn score_into(&self, state: &State, action: Action, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        match self.kind {
            PolicyKind::GaussianShift => {
                out[0] = action.continuous() + state[0] - self.theta[0];
            }
            PolicyKind::SoftmaxMlp {
                state_dim,
                hidden,
                actions,
            } => mlp::score_into(
                self.theta.as_slice().unwrap(),
                state_dim,
                hidden,
                actions,
                state,
                action.discrete(),
                out,
            ),
        }
    }

    pub fn score(&self, state: &State, action: Action) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        self.score_into(state, action, out.as_slice_mut().unwrap());
        out
    }

    /// Draw an action from the exact policy distribution.
    pub fn sample_action(&self, state: &State, rng: &mut dyn RngCore) -> Action {
        match self.kind {
            PolicyKind::GaussianShift => {
                let z: f64 = StandardNormal.sample(rng);
                Action::Continuous(self.theta[0] - state[0] + z)
            }
            PolicyKind::SoftmaxMlp {
                state_dim,
                hidden,
                actions,
            } => {
                let probs = mlp::action_probs(
                    self.theta.as_slice().unwrap(),
                    state_dim,
                    hidden,
                    actions,
                    state,
                );
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(actions - 1)
            }
        }
    }

    /// Softmax action probabilities (MLP policies only).
    pub fn action_probs(&self, state: &State) -> Vec<f64> {
        match self.kind {
            PolicyKind::SoftmaxMlp {
                state_dim,
                hidden,
                actions,
            } => mlp::action_probs(
                self.theta.as_slice().unwrap(),
                state_dim,
                hidden,
                actions,
                state,
            ),
            PolicyKind::GaussianShift => panic!("action_probs is defined for discrete policies"),
        }
    }

    /// Write the parameter vector as flat little-endian f64 plus a JSON
    /// descriptor of the parameterization.
    pub fn save(&self, bin_path: &Path, json_path: &Path) -> Result<(), PolicyError> {
        let mut bytes = Vec::with_capacity(self.theta.len() * 8);
        for v in self.theta.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(bin_path)?.write_all(&bytes)?;
        let descriptor = serde_json::json!({
            "kind": self.kind,
            "dim": self.dim(),
        });
        fs::write(json_path, serde_json::to_string_pretty(&descriptor)?.as_bytes())?;
        Ok(())
    }

    pub fn load(bin_path: &Path, json_path: &Path) -> Result<Self, PolicyError> {
        #[derive(Deserialize)]
        struct Descriptor {
            kind: PolicyKind,
            dim: usize,
        }
        let descriptor: Descriptor = serde_json::from_str(&fs::read_to_string(json_path)?)
            .map_err(|e| PolicyError::MalformedFile(e.to_string()))?;
        let mut bytes = Vec::new();
        fs::File::open(bin_path)?.read_to_end(&mut bytes)?;
        if bytes.len() != descriptor.dim * 8 || descriptor.dim != descriptor.kind.dim() {
            return Err(PolicyError::MalformedFile(format!(
                "expected {} parameters, file has {} bytes",
                descriptor.dim,
                bytes.len()
            )));
        }
        let theta: Array1<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_vec(descriptor.kind, theta)
    }
}

impl From<serde_json::Error> for PolicyError {
    fn from(e: serde_json::Error) -> Self {
        PolicyError::MalformedFile(e.to_string())
    }
}
