//! Experiment orchestration: macro-replications, reuse-size sweeps, the LQC
//! normality verification, and artifact emission.
//!
//! Every run directory receives the resolved `config.json`, a `metrics.csv`
//! with the fixed header `rep,iteration,mean_reward,theta_norm,grad_norm,
//! ratio_max,wall_ms`, and the final policy parameters of each replication.
//! All outputs are byte-deterministic in `(config, base_seed)` except the
//! wall-clock columns.

pub mod config;
mod trainer;

pub use trainer::{derive_seed, rep_rng, run_rep, RepResult, RunRecord};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::lqc_oracle;
use crate::stats;

use config::{Algo, EnvId, ExperimentConfig, FimBatch};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(#[from] config::ConfigError),
    #[error("all {0} replications failed")]
    AllRepsFailed(usize),
    #[error("lqc-verify: {got} replications below the Q-Q minimum {min} (strict mode)")]
    InsufficientReplications { got: usize, min: usize },
    #[error(transparent)]
    Oracle(#[from] lqc_oracle::OracleError),
    #[error("statistics: {0}")]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// In-memory result of a full experiment, alongside the on-disk artifacts.
pub struct RunOutput {
    pub reps: Vec<RepResult>,
    pub wall_ms: u64,
}

impl RunOutput {
    /// Mean over successful replications of the final recorded reward.
    pub fn final_mean_reward(&self) -> f64 {
        let finals: Vec<f64> = self
            .reps
            .iter()
            .filter(|r| !r.failed)
            .filter_map(|r| r.rows.last().map(|row| row.mean_reward))
            .collect();
        finals.iter().sum::<f64>() / finals.len() as f64
    }
}

fn thread_pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool construction")
}

/// Metrics CSV header; the schema is stable.
pub const METRICS_HEADER: &str = "rep,iteration,mean_reward,theta_norm,grad_norm,ratio_max,wall_ms";

fn write_metrics(path: &Path, reps: &[RepResult]) -> Result<(), ExperimentError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for rep in reps {
        for r in &rep.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.rep, r.iteration, r.mean_reward, r.theta_norm, r.grad_norm, r.ratio_max, r.wall_ms
            )?;
        }
    }
    Ok(())
}

fn write_config(path: &Path, cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    fs::write(path, serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

fn write_final_params(dir: &Path, reps: &[RepResult]) -> Result<(), ExperimentError> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir)?;
    for rep in reps {
        let bin = params_dir.join(format!("rep_{:03}.bin", rep.rep));
        let json = params_dir.join(format!("rep_{:03}.json", rep.rep));
        rep.final_params
            .save(&bin, &json)
            .map_err(|e| ExperimentError::Io(std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

/// Run `macro_reps` independent replications of one configuration (rep seed
/// = base_seed stream family, see [`rep_rng`]) and write `config.json`,
/// `metrics.csv`, and per-rep final parameters into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    write_config(&out_dir.join("config.json"), cfg)?;

    let start = Instant::now();
    let pool = thread_pool(jobs);
    let reps: Vec<RepResult> =
        pool.install(|| (0..cfg.macro_reps).into_par_iter().map(|r| run_rep(cfg, r)).collect());
    let wall_ms = start.elapsed().as_millis() as u64;

    write_metrics(&out_dir.join("metrics.csv"), &reps)?;
    write_final_params(out_dir, &reps)?;

    if reps.iter().all(|r| r.failed) {
        return Err(ExperimentError::AllRepsFailed(reps.len()));
    }
    Ok(RunOutput { reps, wall_ms })
}

/// One row of a sweep summary.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub k_grad: usize,
    pub k_fim: usize,
    pub final_mean_reward: f64,
    pub mean_stderr: f64,
    pub wall_ms: u64,
}

/// Mean over recorded iterations of the across-rep standard error of the
/// reward.
fn mean_reward_stderr(reps: &[RepResult]) -> f64 {
    let ok: Vec<&RepResult> = reps.iter().filter(|r| !r.failed).collect();
    if ok.len() < 2 {
        return f64::NAN;
    }
    let iters = ok[0].rows.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..iters {
        let vals: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.rows.get(i).map(|row| row.mean_reward))
            .collect();
        if vals.len() < 2 {
            continue;
        }
        if let Ok((_, var)) = stats::sample_mean_var(&vals) {
            total += (var / vals.len() as f64).sqrt();
            count += 1;
        }
    }
    total / count as f64
}

/// Run one experiment per (K_grad, K_fim) combination and write
/// `summary.csv` (`K_grad,K_fim,final_mean_reward,mean_stderr,wall_ms`)
/// plus one run directory per combination.
pub fn sweep_reuse(
    base: &ExperimentConfig,
    k_list: &[usize],
    k_fim_list: &[usize],
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<SweepRow>, ExperimentError> {
    assert!(!k_list.is_empty() && !k_fim_list.is_empty(), "sweep lists must be non-empty");
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for &k_grad in k_list {
        for &k_fim in k_fim_list {
            let mut cfg = base.clone();
            cfg.k_grad = k_grad;
            cfg.k_fim = k_fim;
            // K = 1 in both estimators is exactly the vanilla algorithm.
            cfg.algo = if k_grad == 1 && k_fim == 1 {
                match base.algo {
                    Algo::Vpg | Algo::Rpg => Algo::Vpg,
                    _ => Algo::Vnpg,
                }
            } else {
                base.algo
            };
            let sub = out_dir.join(format!("K{k_grad}_Kf{k_fim}"));
            let out = run_experiment(&cfg, &sub, jobs)?;
            rows.push(SweepRow {
                k_grad,
                k_fim,
                final_mean_reward: out.final_mean_reward(),
                mean_stderr: mean_reward_stderr(&out.reps),
                wall_ms: out.wall_ms,
            });
        }
    }
    // Wall time should not decrease in K_fim at fixed K_grad (the Fisher
    // solve dominates); surfaced as a warning, not a failure.
    for &k_grad in k_list {
        let mut prev: Option<(usize, u64)> = None;
        for row in rows.iter().filter(|r| r.k_grad == k_grad) {
            if let Some((pk, pw)) = prev {
                if row.wall_ms < pw {
                    eprintln!(
                        "warning: wall time decreased from K_fim={pk} ({pw} ms) to K_fim={} ({} ms) at K_grad={k_grad}",
                        row.k_fim, row.wall_ms
                    );
                }
            }
            prev = Some((row.k_fim, row.wall_ms));
        }
    }

    let mut w = std::io::BufWriter::new(fs::File::create(out_dir.join("summary.csv"))?);
    writeln!(w, "K_grad,K_fim,final_mean_reward,mean_stderr,wall_ms")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.k_grad, r.k_fim, r.final_mean_reward, r.mean_stderr, r.wall_ms
        )?;
    }
    Ok(rows)
}

/// Verdict of the asymptotic-normality verification.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub correlation: f64,
    pub var_ratio: f64,
    pub pass: bool,
    pub n_reps: usize,
    pub corr_threshold: f64,
    pub var_ratio_low: f64,
    pub var_ratio_high: f64,
}

/// Q-Q acceptance thresholds, calibrated on the simulated null at 500
/// replications.
pub const QQ_CORR_THRESHOLD: f64 = 0.99;
pub const VAR_RATIO_LOW: f64 = 0.8;
pub const VAR_RATIO_HIGH: f64 = 1.2;

pub struct VerifyOutput {
    pub verdict: Verdict,
    pub theory: lqc_oracle::AsymptoticTheory,
    pub errors: Vec<f64>,
}

/// Train `macro_reps` LQC replications, normalize the final iterates by the
/// final step size, and compare their empirical law against the theoretical
/// stationary covariance. Emits `theory.json`, `density.csv`, `qq.csv` and
/// `verdict.json` next to the usual run artifacts.
pub fn lqc_verify(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<VerifyOutput, ExperimentError> {
    if cfg.env != EnvId::Lqc {
        return Err(config::ConfigError::VerifyNeedsLqc.into());
    }
    // The covariance theory takes the Fisher estimator from the current
    // batch only, drawn independently of the gradient batch.
    if cfg.k_fim != 1 {
        return Err(config::ConfigError::VerifyNeedsKfimOne(cfg.k_fim).into());
    }
    if cfg.fim_batch != FimBatch::Independent {
        return Err(config::ConfigError::VerifyNeedsIndependentFim.into());
    }
    if cfg.strict && cfg.macro_reps < stats::MIN_QQ_REPS {
        return Err(ExperimentError::InsufficientReplications {
            got: cfg.macro_reps,
            min: stats::MIN_QQ_REPS,
        });
    }

    let out = run_experiment(cfg, out_dir, jobs)?;

    let alpha_n = cfg.step_schedule().at(cfg.iterations);
    let errors: Vec<f64> = out
        .reps
        .iter()
        .filter(|r| !r.failed)
        .map(|r| lqc_oracle::normalized_error(r.final_params.shift(), 0.0, alpha_n))
        .collect();

    let theory = lqc_oracle::theoretical_sigma(
        cfg.gamma,
        cfg.batch_size,
        cfg.k_grad,
        cfg.epsilon,
        cfg.mc_reps,
        derive_seed(cfg.base_seed, 0x7468_656f_7279), // "theory"
    )?;
    fs::write(
        out_dir.join("theory.json"),
        serde_json::to_string_pretty(&theory)?,
    )?;

    let report = stats::qq_report(&errors, theory.sigma_inf)?;
    let mut density = Vec::new();
    stats::write_density_csv(&mut density, &errors, theory.sigma_inf)?;
    fs::write(out_dir.join("density.csv"), density)?;
    let mut qq = Vec::new();
    stats::write_qq_csv(&mut qq, &report)?;
    fs::write(out_dir.join("qq.csv"), qq)?;

    let verdict = Verdict {
        correlation: report.correlation,
        var_ratio: report.var_ratio,
        pass: report.correlation >= QQ_CORR_THRESHOLD
            && report.var_ratio >= VAR_RATIO_LOW
            && report.var_ratio <= VAR_RATIO_HIGH,
        n_reps: report.n_reps,
        corr_threshold: QQ_CORR_THRESHOLD,
        var_ratio_low: VAR_RATIO_LOW,
        var_ratio_high: VAR_RATIO_HIGH,
    };
    fs::write(
        out_dir.join("verdict.json"),
        serde_json::to_string_pretty(&verdict)?,
    )?;

    Ok(VerifyOutput {
        verdict,
        theory,
        errors,
    })
}

/// Compute and write the theoretical covariance constants alone.
pub fn emit_theory(
    gamma: f64,
    b: usize,
    k: usize,
    epsilon: f64,
    mc_reps: usize,
    seed: u64,
    out_path: Option<&PathBuf>,
) -> Result<lqc_oracle::AsymptoticTheory, ExperimentError> {
    let theory = lqc_oracle::theoretical_sigma(gamma, b, k, epsilon, mc_reps, seed)?;
    if let Some(path) = out_path {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, serde_json::to_string_pretty(&theory)?)?;
    }
    Ok(theory)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_config_is_rejected_before_running() {
        let mut cfg = ExperimentConfig::defaults_for(EnvId::Lqc);
        cfg.gamma = 1.5;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_experiment(&cfg, dir.path(), 1),
            Err(ExperimentError::Config(_))
        ));
    }

    #[test]
    fn strict_verify_rejects_small_rep_counts() {
        let mut cfg = ExperimentConfig::defaults_for(EnvId::Lqc);
        cfg.macro_reps = 50;
        cfg.strict = true;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            lqc_verify(&cfg, dir.path(), 1),
            Err(ExperimentError::InsufficientReplications { .. })
        ));
    }

    #[test]
    fn verify_requires_lqc_and_unit_k_fim() {
        let cfg = ExperimentConfig::defaults_for(EnvId::Cartpole);
        let dir = tempfile::tempdir().unwrap();
        assert!(lqc_verify(&cfg, dir.path(), 1).is_err());

        let mut cfg = ExperimentConfig::defaults_for(EnvId::Lqc);
        cfg.k_fim = 5;
        assert!(lqc_verify(&cfg, dir.path(), 1).is_err());
    }
}
