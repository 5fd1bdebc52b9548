//! Experiment runner CLI.
//!
//! Subcommands: `run` (one configuration, many macro-replications), `sweep`
//! (grid over reuse sizes), `lqc-verify` (asymptotic-normality check), and
//! `theory` (theoretical covariance constants only).
//!
//! Configuration comes from a flat JSON file (`--config`) with command-line
//! overrides; the resolved configuration is re-emitted into the run
//! directory. Exit codes: 0 ok, 1 config error, 2 runtime failure in all
//! replications.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rnpg::experiment::config::{Algo, EnvId, ExperimentConfig, FimBatch, SamplingId, ScheduleKind};
use rnpg::experiment::{self, ExperimentError};

#[derive(Parser)]
#[command(name = "rnpg", version, about = "Policy-gradient experiments with trajectory reuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Run(RunArgs),
    /// Run one experiment per reuse-size combination and summarize.
    Sweep(SweepArgs),
    /// Verify asymptotic normality of the normalized error on the LQC
    /// problem.
    LqcVerify(VerifyArgs),
    /// Compute the theoretical covariance constants only.
    Theory(TheoryArgs),
}

#[derive(Args)]
struct ConfigFlags {
    /// Flat JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    /// Mini-batch size (samples or episodes per iteration).
    #[arg(long = "B")]
    batch_size: Option<usize>,
    #[arg(long = "K-grad")]
    k_grad: Option<usize>,
    #[arg(long = "K-fim")]
    k_fim: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Step schedule kind: constant | polynomial.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Polynomial decay exponent.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    adam: Option<bool>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long = "macro-reps")]
    macro_reps: Option<usize>,
    #[arg(long = "base-seed")]
    base_seed: Option<u64>,
    #[arg(long = "omega-max")]
    omega_max: Option<f64>,
    #[arg(long = "box-radius")]
    box_radius: Option<f64>,
    /// Sampling scheme: iid | single_path.
    #[arg(long)]
    sampling: Option<String>,
    #[arg(long)]
    theta0: Option<f64>,
    /// Fisher batches: shared | independent.
    #[arg(long = "fim-batch")]
    fim_batch: Option<String>,
    #[arg(long = "trpo-delta")]
    trpo_delta: Option<f64>,
    #[arg(long = "trpo-fresh-eval")]
    trpo_fresh_eval: Option<bool>,
    #[arg(long = "record-every")]
    record_every: Option<usize>,
    #[arg(long = "mc-reps")]
    mc_reps: Option<usize>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigFlags,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Parallel replications (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigFlags,
    /// Comma-separated gradient reuse sizes, e.g. 1,10,50.
    #[arg(long = "K-list", value_delimiter = ',')]
    k_list: Vec<usize>,
    /// Comma-separated Fisher reuse sizes; defaults to the config value.
    #[arg(long = "K-fim-list", value_delimiter = ',')]
    k_fim_list: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    config: ConfigFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long = "B", default_value_t = 5)]
    batch_size: usize,
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long = "mc-reps", default_value_t = 10_000_000)]
    mc_reps: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Optional path for theory.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_enum<T>(name: &str, value: &str) -> anyhow::Result<T>
where
    T: serde::de::DeserializeOwned,
{
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| anyhow::anyhow!("invalid {name}: {value:?}"))
}

fn resolve_config(flags: &ConfigFlags) -> anyhow::Result<ExperimentConfig> {
    // Environment decides the defaults; it may come from the flag, the file,
    // or fall back to cartpole.
    let file_value: Option<serde_json::Value> = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read config {path:?}: {e}"))?;
            Some(serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config parse: {e}"))?)
        }
        None => None,
    };
    let env: EnvId = if let Some(e) = &flags.env {
        parse_enum("env", e)?
    } else if let Some(v) = file_value.as_ref().and_then(|v| v.get("env")) {
        serde_json::from_value(v.clone()).map_err(|e| anyhow::anyhow!("config env: {e}"))?
    } else {
        EnvId::Cartpole
    };

    let mut cfg = ExperimentConfig::defaults_for(env);
    if let Some(file) = file_value {
        // Overlay the defaults with the file fields, rejecting unknown keys.
        let mut base = serde_json::to_value(&cfg)?;
        let obj = file
            .as_object()
            .ok_or_else(|| anyhow::anyhow!("config file must be a JSON object"))?;
        let known = base.as_object().unwrap().clone();
        for (k, v) in obj {
            if !known.contains_key(k.as_str()) {
                anyhow::bail!("unknown config field {k:?}");
            }
            base[k.as_str()] = v.clone();
        }
        cfg = serde_json::from_value(base).map_err(|e| anyhow::anyhow!("config: {e}"))?;
    }

    if let Some(v) = &flags.algo {
        cfg.algo = parse_enum::<Algo>("algo", v)?;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.k_grad {
        cfg.k_grad = v;
    }
    if let Some(v) = flags.k_fim {
        cfg.k_fim = v;
    }
    if let Some(v) = flags.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = flags.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = &flags.schedule {
        cfg.schedule = parse_enum::<ScheduleKind>("schedule", v)?;
    }
    if let Some(v) = flags.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = flags.p {
        cfg.p = v;
    }
    if let Some(v) = flags.adam {
        cfg.adam = v;
    }
    if let Some(v) = flags.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = flags.macro_reps {
        cfg.macro_reps = v;
    }
    if let Some(v) = flags.base_seed {
        cfg.base_seed = v;
    }
    if let Some(v) = flags.omega_max {
        cfg.omega_max = Some(v);
    }
    if let Some(v) = flags.box_radius {
        cfg.box_radius = v;
    }
    if let Some(v) = &flags.sampling {
        cfg.sampling = parse_enum::<SamplingId>("sampling", v)?;
    }
    if let Some(v) = flags.theta0 {
        cfg.theta0 = v;
    }
    if let Some(v) = &flags.fim_batch {
        cfg.fim_batch = parse_enum::<FimBatch>("fim_batch", v)?;
    }
    if let Some(v) = flags.trpo_delta {
        cfg.trpo_delta = v;
    }
    if let Some(v) = flags.trpo_fresh_eval {
        cfg.trpo_fresh_eval = v;
    }
    if let Some(v) = flags.record_every {
        cfg.record_every = v;
    }
    if let Some(v) = flags.mc_reps {
        cfg.mc_reps = v;
    }
    if flags.strict {
        cfg.strict = true;
    }
    Ok(cfg)
}

fn exit_code_for(err: &ExperimentError) -> u8 {
    match err {
        ExperimentError::Config(_) | ExperimentError::InsufficientReplications { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage problems are configuration errors.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };

    let outcome: Result<(), (String, u8)> = match cli.command {
        Command::Run(args) => (|| {
            let cfg = resolve_config(&args.config).map_err(|e| (e.to_string(), 1u8))?;
            let out = experiment::run_experiment(&cfg, &args.out, args.jobs)
                .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
            let failed = out.reps.iter().filter(|r| r.failed).count();
            println!(
                "run complete: {} reps ({failed} failed), final mean reward {:.4}, {} ms",
                out.reps.len(),
                out.final_mean_reward(),
                out.wall_ms
            );
            Ok(())
        })(),
        Command::Sweep(args) => (|| {
            let cfg = resolve_config(&args.config).map_err(|e| (e.to_string(), 1u8))?;
            if args.k_list.is_empty() {
                return Err(("--K-list must be non-empty".to_string(), 1));
            }
            let k_fim_list = if args.k_fim_list.is_empty() {
                vec![cfg.k_fim]
            } else {
                args.k_fim_list.clone()
            };
            let rows = experiment::sweep_reuse(&cfg, &args.k_list, &k_fim_list, &args.out, args.jobs)
                .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
            for r in &rows {
                println!(
                    "K_grad={} K_fim={}: final mean reward {:.4}, stderr {:.4}, {} ms",
                    r.k_grad, r.k_fim, r.final_mean_reward, r.mean_stderr, r.wall_ms
                );
            }
            Ok(())
        })(),
        Command::LqcVerify(args) => (|| {
            let mut flags = args.config;
            if flags.env.is_none() {
                flags.env = Some("lqc".to_string());
            }
            let cfg = resolve_config(&flags).map_err(|e| (e.to_string(), 1u8))?;
            let out = experiment::lqc_verify(&cfg, &args.out, args.jobs)
                .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
            println!(
                "lqc-verify: correlation {:.5}, var_ratio {:.4}, pass = {}",
                out.verdict.correlation, out.verdict.var_ratio, out.verdict.pass
            );
            Ok(())
        })(),
        Command::Theory(args) => (|| {
            let theory = experiment::emit_theory(
                args.gamma,
                args.batch_size,
                args.k,
                args.epsilon,
                args.mc_reps,
                args.seed,
                args.out.as_ref(),
            )
            .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&theory).expect("theory serializes")
            );
            Ok(())
        })(),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
