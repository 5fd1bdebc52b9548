//! Closed-form LQC quantities and the theoretical asymptotic covariance of
//! the normalized error, computed independently of the training code.
//!
//! For the one-dimensional problem with shift-Gaussian policy the objective
//! is eta(theta) = -(1 + theta^2)/(1 - gamma) with maximizer theta_bar = 0,
//! and the stationary covariance of the normalized error
//! E_n = (theta_n - theta_bar)/sqrt(alpha_n) is
//!
//!   Sigma_inf = -Sigma_hat / (2 G),
//!   Sigma_hat = Sigma_1 / B + Sigma_2 / (K B),
//!   Sigma_1   = Fbar_inv^2 * Sigma_eta,     Sigma_2 = Sigma_2' - Sigma_1,
//!   Sigma_2'  = Sigma_eta * E[(eps + mean(X_i^2))^-2],
//!   Fbar_inv  = E[(eps + mean(X_i^2))^-1],  G = -2 Fbar_inv / (1 - gamma),
//!   Sigma_eta = 10 / (1 - gamma)^2,
//!
//! with X_1..X_B i.i.d. standard normal. The two expectations have no closed
//! form and are evaluated by Monte Carlo on a dedicated rng stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("discount factor must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("Monte Carlo replication count {got} below the minimum {min}")]
    TooFewReplications { got: usize, min: usize },
    #[error("batch size must be at least {min}, got {got}")]
    BatchTooSmall { got: usize, min: usize },
    #[error("reuse size must be at least 1")]
    InvalidReuse,
    #[error("regularizer must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("trace list length {got} must equal the reuse size {want}")]
    TraceLengthMismatch { got: usize, want: usize },
    #[error("confidence parameter delta must lie in (0,1), got {0}")]
    InvalidDelta(f64),
    #[error("bound constant C must be positive, got {0}")]
    InvalidConstant(f64),
    #[error("Sigma_2 came out negative ({0}); Monte Carlo inconsistent")]
    NegativeSigma2(f64),
}

/// Minimum Monte Carlo replication count accepted by `theoretical_sigma`.
pub const MIN_MC_REPS: usize = 100_000;

/// Expected discounted return of the shift-Gaussian policy:
/// `-(1 + theta^2)/(1 - gamma)`.
pub fn lqc_eta(theta: f64, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0 && gamma < 1.0);
    -(1.0 + theta * theta) / (1.0 - gamma)
}

/// Exact objective gradient `-2 theta / (1 - gamma)`.
pub fn lqc_grad(theta: f64, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0 && gamma < 1.0);
    -2.0 * theta / (1.0 - gamma)
}

/// Normalized error `(theta_n - theta_bar) / sqrt(alpha_n)`.
pub fn normalized_error(theta_n: f64, theta_bar: f64, alpha_n: f64) -> f64 {
    assert!(alpha_n > 0.0, "step size must be positive");
    (theta_n - theta_bar) / alpha_n.sqrt()
}

/// All theoretical constants for one (gamma, B, K, epsilon) cell, with the
/// Monte Carlo standard errors of the two simulated expectations.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticTheory {
    pub sigma_eta: f64,
    pub fbar_inv: f64,
    pub fbar_inv_se: f64,
    pub sigma1: f64,
    pub sigma2_prime: f64,
    pub sigma2_prime_se: f64,
    pub sigma2: f64,
    pub sigma_hat: f64,
    pub g_matrix: f64,
    pub sigma_inf: f64,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub mc_reps: usize,
}

/// Number of Monte Carlo chunks; fixed so the reduction order, and hence the
/// result, is deterministic for a given seed.
const MC_CHUNKS: u64 = 256;

/// Compute the asymptotic covariance constants for one cell by Monte Carlo
/// with `mc_reps` replications on a dedicated ChaCha8 stream family derived
/// from `seed` (streams `0..256`).
pub fn theoretical_sigma(
    gamma: f64,
    b: usize,
    k: usize,
    epsilon: f64,
    mc_reps: usize,
    seed: u64,
) -> Result<AsymptoticTheory, OracleError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OracleError::InvalidGamma(gamma));
    }
    if b < 1 {
        return Err(OracleError::BatchTooSmall { got: b, min: 1 });
    }
    if k < 1 {
        return Err(OracleError::InvalidReuse);
    }
    if !(epsilon > 0.0) {
        return Err(OracleError::InvalidEpsilon(epsilon));
    }
    if mc_reps < MIN_MC_REPS {
        return Err(OracleError::TooFewReplications {
            got: mc_reps,
            min: MIN_MC_REPS,
        });
    }

    // Per-chunk sums of (eps + mean X_i^2)^-1 and its square, and the same
    // for the inverse square.
    let chunk_sums: Vec<[f64; 4]> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let reps = mc_reps as u64 / MC_CHUNKS
                + if chunk < mc_reps as u64 % MC_CHUNKS { 1 } else { 0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let mut sums = [0.0f64; 4];
            for _ in 0..reps {
                let mut mean_sq = 0.0;
                for _ in 0..b {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    mean_sq += x * x;
                }
                mean_sq /= b as f64;
                let inv = 1.0 / (epsilon + mean_sq);
                let inv2 = inv * inv;
                sums[0] += inv;
                sums[1] += inv * inv;
                sums[2] += inv2;
                sums[3] += inv2 * inv2;
            }
            sums
        })
        .collect();

    let mut total = [0.0f64; 4];
    for s in &chunk_sums {
        for (t, v) in total.iter_mut().zip(s.iter()) {
            *t += v;
        }
    }
    let n = mc_reps as f64;
    let mean_of = |sum: f64| sum / n;
    let se_of = |sum: f64, sum_sq: f64| {
        let m = sum / n;
        ((sum_sq / n - m * m).max(0.0) / (n - 1.0)).sqrt()
    };

    let sigma_eta = 10.0 / ((1.0 - gamma) * (1.0 - gamma));
    let fbar_inv = mean_of(total[0]);
    let fbar_inv_se = se_of(total[0], total[1]);
    let sigma2_prime = sigma_eta * mean_of(total[2]);
    let sigma2_prime_se = sigma_eta * se_of(total[2], total[3]);
    let sigma1 = fbar_inv * fbar_inv * sigma_eta;
    let sigma2 = sigma2_prime - sigma1;
    if sigma2 < 0.0 {
        return Err(OracleError::NegativeSigma2(sigma2));
    }
    let sigma_hat = sigma1 / b as f64 + sigma2 / (k as f64 * b as f64);
    let g_matrix = -2.0 / (1.0 - gamma) * fbar_inv;
    let sigma_inf = -sigma_hat / (2.0 * g_matrix);

    Ok(AsymptoticTheory {
        sigma_eta,
        fbar_inv,
        fbar_inv_se,
        sigma1,
        sigma2_prime,
        sigma2_prime_se,
        sigma2,
        sigma_hat,
        g_matrix,
        sigma_inf,
        b,
        k,
        gamma,
        epsilon,
        mc_reps,
    })
}

/// Value of the high-probability gradient-error bound, with its pieces
/// exposed for diagnostics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Theorem3Bound {
    pub value: f64,
    pub beta_n: f64,
    /// The shared factor `log(pi^2 n^2 (d+1) / (3 delta))`.
    pub log_factor: f64,
}

/// Evaluate the deviation bound
/// `sqrt(2 beta_n L) + (2C/K) L` with
/// `beta_n = sqrt(C^2 L / (K^3 B (B-1))) + sum(trace_vars) / (K^2 B)` and
/// `L = log(pi^2 n^2 (d+1) / (3 delta))`.
///
/// `trace_vars` holds the trace of the sample covariance of the vanilla
/// gradient estimator for each of the K reused iterations.
pub fn theorem3_bound(
    c: f64,
    k: usize,
    b: usize,
    n: usize,
    delta: f64,
    trace_vars: &[f64],
    d: usize,
) -> Result<Theorem3Bound, OracleError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(OracleError::InvalidConstant(c));
    }
    if b < 2 {
        return Err(OracleError::BatchTooSmall { got: b, min: 2 });
    }
    if k < 1 {
        return Err(OracleError::InvalidReuse);
    }
    if trace_vars.len() != k {
        return Err(OracleError::TraceLengthMismatch {
            got: trace_vars.len(),
            want: k,
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(OracleError::InvalidDelta(delta));
    }
    let kf = k as f64;
    let bf = b as f64;
    let nf = n as f64;
    let log_factor =
        (std::f64::consts::PI.powi(2) * nf * nf * (d as f64 + 1.0) / (3.0 * delta)).ln();
    let trace_sum: f64 = trace_vars.iter().sum();
    let beta_n =
        (c * c / (kf.powi(3) * bf * (bf - 1.0)) * log_factor).sqrt() + trace_sum / (kf * kf * bf);
    let value = (2.0 * beta_n * log_factor).sqrt() + 2.0 * c / kf * log_factor;
    Ok(Theorem3Bound {
        value,
        beta_n,
        log_factor,
    })
}
