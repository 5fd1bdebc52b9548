//! FIFO window of the most recent batches, tagged with the policy that
//! generated them, with a packed checkpoint format (JSON header plus
//! little-endian sample arrays).

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Sample, State};
use crate::policy::{PolicyKind, PolicyParams};

use super::EstimatorError;

/// One batch of samples, all generated under `theta_behavior` at a single
/// iteration. `episodes` is the number of rollouts the batch came from
/// (equal to the sample count in i.i.d. mode); it fixes the normalization of
/// single-path estimators.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<Sample>,
    pub theta_behavior: PolicyParams,
    pub iteration: usize,
    pub episodes: usize,
}

/// FIFO of the last `capacity` batches; pushing onto a full window evicts
/// the oldest batch. Iterations must be strictly increasing.
#[derive(Debug, Clone)]
pub struct ReplayWindow {
    batches: VecDeque<Batch>,
    capacity: usize,
}

impl ReplayWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be at least 1");
        ReplayWindow {
            batches: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn push(&mut self, batch: Batch) -> Result<(), EstimatorError> {
        if batch.samples.is_empty() {
            return Err(EstimatorError::EmptyBatch);
        }
        if let Some(last) = self.batches.back() {
            if batch.iteration <= last.iteration {
                return Err(EstimatorError::NonIncreasingIteration {
                    last: last.iteration,
                    next: batch.iteration,
                });
            }
        }
        if self.batches.len() == self.capacity {
            self.batches.pop_front();
        }
        self.batches.push_back(batch);
        Ok(())
    }

    /// The `min(k, len)` most recent batches in chronological order. The
    /// accumulation order over the window is fixed (batch-major,
    /// sample-major) so estimator results are bit-deterministic.
    pub fn recent(&self, k: usize) -> impl Iterator<Item = &Batch> {
        let take = k.min(self.batches.len());
        let skip = self.batches.len() - take;
        self.batches.iter().skip(skip)
    }

    /// Checkpoint. Format: one JSON header line, then per batch the behavior
    /// parameter vector followed by packed per-sample arrays, all
    /// little-endian f64. Discrete actions are stored as their index.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EstimatorError> {
        #[derive(Serialize)]
        struct BatchHeader<'a> {
            iteration: usize,
            episodes: usize,
            n_samples: usize,
            state_dim: usize,
            theta_kind: &'a PolicyKind,
        }
        #[derive(Serialize)]
        struct Header<'a> {
            version: u32,
            capacity: usize,
            batches: Vec<BatchHeader<'a>>,
        }
        let header = Header {
            version: 1,
            capacity: self.capacity,
            batches: self
                .batches
                .iter()
                .map(|b| BatchHeader {
                    iteration: b.iteration,
                    episodes: b.episodes,
                    n_samples: b.samples.len(),
                    state_dim: b.samples[0].state.len(),
                    theta_kind: b.theta_behavior.kind(),
                })
                .collect(),
        };
        let mut line = serde_json::to_string(&header).map_err(EstimatorError::serde)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;

        let mut put = |v: f64| -> std::io::Result<()> { w.write_all(&v.to_le_bytes()) };
        for b in &self.batches {
            for t in b.theta_behavior.theta().iter() {
                put(*t)?;
            }
            for s in &b.samples {
                for x in s.state.iter() {
                    put(*x)?;
                }
                put(match s.action {
                    Action::Discrete(i) => i as f64,
                    Action::Continuous(v) => v,
                })?;
                put(s.behavior_logp)?;
                put(s.advantage)?;
                put(s.discount_weight)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, EstimatorError> {
        #[derive(Deserialize)]
        struct BatchHeader {
            iteration: usize,
            episodes: usize,
            n_samples: usize,
            state_dim: usize,
            theta_kind: PolicyKind,
        }
        #[derive(Deserialize)]
        struct Header {
            version: u32,
            capacity: usize,
            batches: Vec<BatchHeader>,
        }
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: Header = serde_json::from_str(&line).map_err(EstimatorError::serde)?;
        if header.version != 1 {
            return Err(EstimatorError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        let mut get = || -> Result<f64, EstimatorError> {
            let mut buf = [0u8; 8];
            reader.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        let mut window = ReplayWindow::new(header.capacity);
        for bh in header.batches {
            let d = bh.theta_kind.dim();
            let mut theta = Array1::zeros(d);
            for i in 0..d {
                theta[i] = get()?;
            }
            let theta_behavior = PolicyParams::from_vec(bh.theta_kind.clone(), theta)
                .map_err(|e| EstimatorError::Checkpoint(e.to_string()))?;
            let discrete = matches!(bh.theta_kind, PolicyKind::SoftmaxMlp { .. });
            let mut samples = Vec::with_capacity(bh.n_samples);
            for _ in 0..bh.n_samples {
                let mut state = State::new();
                for _ in 0..bh.state_dim {
                    state.push(get()?);
                }
                let a_raw = get()?;
                let action = if discrete {
                    Action::Discrete(a_raw as usize)
                } else {
                    Action::Continuous(a_raw)
                };
                samples.push(Sample {
                    state,
                    action,
                    behavior_logp: get()?,
                    advantage: get()?,
                    discount_weight: get()?,
                });
            }
            window.push(Batch {
                samples,
                theta_behavior,
                iteration: bh.iteration,
                episodes: bh.episodes,
            })?;
        }
        Ok(window)
    }
}
