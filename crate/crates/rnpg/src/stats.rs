//! Statistical utilities for the verification harness: sample moments,
//! the standard normal quantile function, and the Q-Q comparison of
//! normalized training errors against their theoretical limit law.

use std::io::Write;

use ndarray::{Array1, Array2};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {min} observations, got {got}")]
    TooFewObservations { got: usize, min: usize },
    #[error("quantile probability must lie in (0,1), got {0}")]
    InvalidProbability(f64),
    #[error("theoretical variance must be positive, got {0}")]
    InvalidVariance(f64),
    #[error("degenerate input: all observations identical, correlation undefined")]
    DegenerateInput,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sample mean and unbiased (n-1) covariance of a set of equal-length
/// vectors.
pub fn sample_mean_cov(vectors: &[Array1<f64>]) -> Result<(Array1<f64>, Array2<f64>), StatsError> {
    let n = vectors.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { got: n, min: 2 });
    }
    let d = vectors[0].len();
    let mut mean = Array1::<f64>::zeros(d);
    for v in vectors {
        mean += v;
    }
    mean /= n as f64;
    let mut cov = Array2::<f64>::zeros((d, d));
    for v in vectors {
        let c = v - &mean;
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    cov /= n as f64 - 1.0;
    Ok((mean, cov))
}

/// Scalar convenience: sample mean and unbiased variance.
pub fn sample_mean_var(xs: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { got: n, min: 2 });
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, var))
}

/// Standard normal density.
pub fn standard_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Coefficients of Acklam's rational approximation to the standard normal
// quantile (relative error below 1.15e-9 over (0,1)).
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const ACKLAM_P_LOW: f64 = 0.02425;

/// Inverse standard normal CDF by Acklam's rational approximation; absolute
/// error below 1e-8 over the probabilities exercised here.
pub fn normal_quantile(p: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidProbability(p));
    }
    let x = if p < ACKLAM_P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACKLAM_C[0] * q + ACKLAM_C[1]) * q + ACKLAM_C[2]) * q + ACKLAM_C[3]) * q
            + ACKLAM_C[4])
            * q
            + ACKLAM_C[5])
            / ((((ACKLAM_D[0] * q + ACKLAM_D[1]) * q + ACKLAM_D[2]) * q + ACKLAM_D[3]) * q + 1.0)
    } else if p <= 1.0 - ACKLAM_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((ACKLAM_A[0] * r + ACKLAM_A[1]) * r + ACKLAM_A[2]) * r + ACKLAM_A[3]) * r
            + ACKLAM_A[4])
            * r
            + ACKLAM_A[5])
            * q
            / (((((ACKLAM_B[0] * r + ACKLAM_B[1]) * r + ACKLAM_B[2]) * r + ACKLAM_B[3]) * r
                + ACKLAM_B[4])
                * r
                + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((ACKLAM_C[0] * q + ACKLAM_C[1]) * q + ACKLAM_C[2]) * q + ACKLAM_C[3]) * q
            + ACKLAM_C[4])
            * q
            + ACKLAM_C[5])
            / ((((ACKLAM_D[0] * q + ACKLAM_D[1]) * q + ACKLAM_D[2]) * q + ACKLAM_D[3]) * q + 1.0))
    };
    Ok(x)
}

/// Comparison of empirical error quantiles against the centered normal law
/// with variance `sigma_inf`.
#[derive(Debug, Clone, Serialize)]
pub struct QQReport {
    pub empirical_quantiles: Vec<f64>,
    pub theoretical_quantiles: Vec<f64>,
    pub correlation: f64,
    /// Empirical variance divided by sigma_inf.
    pub var_ratio: f64,
    pub n_reps: usize,
}

/// Minimum replication count for a statistically meaningful Q-Q comparison.
pub const MIN_QQ_REPS: usize = 100;

/// Build the Q-Q comparison at plotting positions p_i = (i - 0.5)/n. The
/// theoretical quantiles are `sqrt(sigma_inf) * Phi^-1(p_i)`.
pub fn qq_report(errors: &[f64], sigma_inf: f64) -> Result<QQReport, StatsError> {
    let n = errors.len();
    if n < MIN_QQ_REPS {
        return Err(StatsError::TooFewObservations {
            got: n,
            min: MIN_QQ_REPS,
        });
    }
    if !(sigma_inf > 0.0 && sigma_inf.is_finite()) {
        return Err(StatsError::InvalidVariance(sigma_inf));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite error value"));
    let sd = sigma_inf.sqrt();
    let mut theoretical = Vec::with_capacity(n);
    for i in 0..n {
        let p = (i as f64 + 0.5) / n as f64;
        theoretical.push(sd * normal_quantile(p)?);
    }
    let correlation = pearson(&sorted, &theoretical)?;
    let (_, var) = sample_mean_var(errors)?;
    Ok(QQReport {
        empirical_quantiles: sorted,
        theoretical_quantiles: theoretical,
        correlation,
        var_ratio: var / sigma_inf,
        n_reps: n,
    })
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Histogram of the errors on a fixed 40-bin grid over
/// `[-4 sqrt(sigma_inf), 4 sqrt(sigma_inf)]` next to the theoretical normal
/// density, as CSV with header `bin_center,empirical_density,theoretical_density`.
pub fn write_density_csv<W: Write>(
    mut w: W,
    errors: &[f64],
    sigma_inf: f64,
) -> Result<(), StatsError> {
    if !(sigma_inf > 0.0 && sigma_inf.is_finite()) {
        return Err(StatsError::InvalidVariance(sigma_inf));
    }
    const BINS: usize = 40;
    let sd = sigma_inf.sqrt();
    let lo = -4.0 * sd;
    let width = 8.0 * sd / BINS as f64;
    let mut counts = [0usize; BINS];
    for &e in errors {
        let idx = ((e - lo) / width).floor();
        if idx >= 0.0 && (idx as usize) < BINS {
            counts[idx as usize] += 1;
        }
    }
    let n = errors.len() as f64;
    writeln!(w, "bin_center,empirical_density,theoretical_density")?;
    for (i, &c) in counts.iter().enumerate() {
        let center = lo + (i as f64 + 0.5) * width;
        let emp = c as f64 / (n * width);
        let theo = standard_normal_pdf(center / sd) / sd;
        writeln!(w, "{center},{emp},{theo}")?;
    }
    Ok(())
}

/// Q-Q table as CSV with header `p,empirical_q,theoretical_q`.
pub fn write_qq_csv<W: Write>(mut w: W, report: &QQReport) -> Result<(), StatsError> {
    writeln!(w, "p,empirical_q,theoretical_q")?;
    let n = report.n_reps;
    for i in 0..n {
        let p = (i as f64 + 0.5) / n as f64;
        writeln!(
            w,
            "{p},{},{}",
            report.empirical_quantiles[i], report.theoretical_quantiles[i]
        )?;
    }
    Ok(())
}
