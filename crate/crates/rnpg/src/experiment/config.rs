//! Experiment configuration: a flat, JSON-serializable record of every knob
//! a run depends on. The resolved configuration is re-emitted verbatim into
//! each run directory for provenance.

use serde::{Deserialize, Serialize};

use crate::optim::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Cartpole,
    Lqc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Vanilla policy gradient: no reuse, identity direction.
    Vpg,
    /// Policy gradient with gradient reuse, identity direction.
    Rpg,
    /// Vanilla natural policy gradient (reuse sizes forced to 1).
    Vnpg,
    /// Natural policy gradient with reuse.
    Rnpg,
    /// Trust-region step on the reuse estimators.
    TrpoReuse,
}

impl Algo {
    pub fn uses_fim(self) -> bool {
        matches!(self, Algo::Vnpg | Algo::Rnpg | Algo::TrpoReuse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingId {
    Iid,
    SinglePath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Polynomial,
}

/// Whether the Fisher estimator gets its own independently drawn batches or
/// reads the gradient batches. Independent batches keep the gradient and
/// Fisher estimators conditionally independent, which the asymptotic
/// covariance of the LQC verification assumes; sharing halves the sampling
/// cost and is the practical choice for cartpole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FimBatch {
    Shared,
    Independent,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("batch size B must be at least 1")]
    InvalidBatchSize,
    #[error("reuse sizes must be at least 1 (K_grad {k_grad}, K_fim {k_fim})")]
    InvalidReuse { k_grad: usize, k_fim: usize },
    #[error("gamma must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("iterations must be at least 1")]
    InvalidIterations,
    #[error("macro_reps must be at least 1")]
    InvalidMacroReps,
    #[error("record_every must be at least 1")]
    InvalidRecordEvery,
    #[error("{algo:?} requires {field} = 1, got {got}")]
    AlgoReuseMismatch {
        algo: Algo,
        field: &'static str,
        got: usize,
    },
    #[error("omega_max must be positive when set, got {0}")]
    InvalidOmegaMax(f64),
    #[error("trpo_delta must be positive, got {0}")]
    InvalidTrpoDelta(f64),
    #[error("i.i.d. occupancy sampling needs a closed-form advantage; only the lqc env has one")]
    IidNeedsClosedForm,
    #[error("lqc-verify requires env = lqc")]
    VerifyNeedsLqc,
    #[error("lqc-verify assumes a current-batch Fisher estimator (K_fim = 1), got {0}")]
    VerifyNeedsKfimOne(usize),
    #[error("lqc-verify requires independent Fisher batches")]
    VerifyNeedsIndependentFim,
    #[error("step schedule: {0}")]
    Schedule(#[from] crate::optim::OptimError),
    #[error("config file: {0}")]
    Parse(String),
}

/// Complete description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub algo: Algo,
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(rename = "K_grad")]
    pub k_grad: usize,
    #[serde(rename = "K_fim")]
    pub k_fim: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub schedule: ScheduleKind,
    pub alpha: f64,
    /// Decay exponent of the polynomial schedule; ignored by the constant
    /// schedule.
    pub p: f64,
    pub adam: bool,
    pub iterations: usize,
    pub macro_reps: usize,
    pub base_seed: u64,
    pub omega_max: Option<f64>,
    pub box_radius: f64,
    pub sampling: SamplingId,
    /// Initial parameter of the shift-Gaussian policy; the MLP policy is
    /// He-initialized from the per-rep stream instead.
    pub theta0: f64,
    pub fim_batch: FimBatch,
    /// KL bound of the trust-region step.
    pub trpo_delta: f64,
    /// Estimate the trust-region improvement from fresh rollouts instead of
    /// the replay window.
    pub trpo_fresh_eval: bool,
    /// Record a metrics row every this many iterations (the final iteration
    /// is always recorded).
    pub record_every: usize,
    /// Monte Carlo replications for the theoretical covariance constants.
    pub mc_reps: usize,
    /// Fail fast when the replication count is below the Q-Q minimum.
    pub strict: bool,
}

impl ExperimentConfig {
    /// Paper-style defaults for each environment.
    pub fn defaults_for(env: EnvId) -> Self {
        match env {
            EnvId::Cartpole => ExperimentConfig {
                env,
                algo: Algo::Rnpg,
                batch_size: 4,
                k_grad: 10,
                k_fim: 1,
                gamma: 0.99,
                epsilon: 0.001,
                schedule: ScheduleKind::Constant,
                alpha: 0.01,
                p: 0.9,
                adam: true,
                iterations: 150,
                macro_reps: 50,
                base_seed: 2024,
                omega_max: None,
                box_radius: 1e6,
                sampling: SamplingId::SinglePath,
                theta0: 2.0,
                fim_batch: FimBatch::Shared,
                trpo_delta: 0.01,
                trpo_fresh_eval: false,
                record_every: 1,
                mc_reps: 10_000_000,
                strict: false,
            },
            EnvId::Lqc => ExperimentConfig {
                env,
                algo: Algo::Rnpg,
                batch_size: 5,
                k_grad: 5,
                k_fim: 1,
                gamma: 0.5,
                epsilon: 0.01,
                schedule: ScheduleKind::Polynomial,
                alpha: 1.0,
                p: 0.9,
                adam: false,
                iterations: 50_000,
                macro_reps: 500,
                base_seed: 2024,
                omega_max: None,
                box_radius: 1e6,
                sampling: SamplingId::Iid,
                theta0: 2.0,
                fim_batch: FimBatch::Independent,
                trpo_delta: 0.01,
                trpo_fresh_eval: false,
                record_every: 500,
                mc_reps: 10_000_000,
                strict: false,
            },
        }
    }

    pub fn step_schedule(&self) -> StepSchedule {
        match self.schedule {
            ScheduleKind::Constant => StepSchedule::Constant { alpha: self.alpha },
            ScheduleKind::Polynomial => StepSchedule::Polynomial {
                alpha: self.alpha,
                p: self.p,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size < 1 {
            return Err(ConfigError::InvalidBatchSize);
        }
        if self.k_grad < 1 || self.k_fim < 1 {
            return Err(ConfigError::InvalidReuse {
                k_grad: self.k_grad,
                k_fim: self.k_fim,
            });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ConfigError::InvalidGamma(self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ConfigError::InvalidEpsilon(self.epsilon));
        }
        if self.iterations < 1 {
            return Err(ConfigError::InvalidIterations);
        }
        if self.macro_reps < 1 {
            return Err(ConfigError::InvalidMacroReps);
        }
        if self.record_every < 1 {
            return Err(ConfigError::InvalidRecordEvery);
        }
        self.step_schedule().validate()?;
        crate::optim::ProjectionBox {
            radius: self.box_radius,
        }
        .validate()?;
        if let Some(w) = self.omega_max {
            if !(w > 0.0) {
                return Err(ConfigError::InvalidOmegaMax(w));
            }
        }
        if !(self.trpo_delta > 0.0) {
            return Err(ConfigError::InvalidTrpoDelta(self.trpo_delta));
        }
        match self.algo {
            Algo::Vpg => {
                if self.k_grad != 1 {
                    return Err(ConfigError::AlgoReuseMismatch {
                        algo: self.algo,
                        field: "K_grad",
                        got: self.k_grad,
                    });
                }
            }
            Algo::Vnpg => {
                if self.k_grad != 1 {
                    return Err(ConfigError::AlgoReuseMismatch {
                        algo: self.algo,
                        field: "K_grad",
                        got: self.k_grad,
                    });
                }
                if self.k_fim != 1 {
                    return Err(ConfigError::AlgoReuseMismatch {
                        algo: self.algo,
                        field: "K_fim",
                        got: self.k_fim,
                    });
                }
            }
            Algo::Rpg => {
                if self.k_fim != 1 {
                    return Err(ConfigError::AlgoReuseMismatch {
                        algo: self.algo,
                        field: "K_fim",
                        got: self.k_fim,
                    });
                }
            }
            Algo::Rnpg | Algo::TrpoReuse => {}
        }
        if self.sampling == SamplingId::Iid && self.env != EnvId::Lqc {
            return Err(ConfigError::IidNeedsClosedForm);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::defaults_for(EnvId::Cartpole).validate().unwrap();
        ExperimentConfig::defaults_for(EnvId::Lqc).validate().unwrap();
    }

    #[test]
    fn vnpg_requires_unit_reuse() {
        let mut cfg = ExperimentConfig::defaults_for(EnvId::Lqc);
        cfg.algo = Algo::Vnpg;
        cfg.k_grad = 5;
        cfg.k_fim = 1;
        assert!(cfg.validate().is_err());
        cfg.k_grad = 1;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn iid_cartpole_rejected() {
        let mut cfg = ExperimentConfig::defaults_for(EnvId::Cartpole);
        cfg.sampling = SamplingId::Iid;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_flat() {
        let cfg = ExperimentConfig::defaults_for(EnvId::Lqc);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(text.contains("\"B\": 5"));
        assert!(text.contains("\"K_grad\": 5"));
        assert!(text.contains("\"schedule\": \"polynomial\""));
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.batch_size, cfg.batch_size);
        assert_eq!(back.env, cfg.env);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"env":"lqc","typo_field":1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }
}
