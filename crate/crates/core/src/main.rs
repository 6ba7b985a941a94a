use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use tvkb::config::{ConfigError, ExperimentConfig};
use tvkb::harness::{
    block_inequality_audit, coverage_test, identity_suite, infogain_suite, mean_stderr, run_many,
    sweep, GammaOracle, SweepAxis,
};
use tvkb::infogain::{analytic_bound, exhaustive_feasible, exhaustive_max_info_gain, greedy_curve};
use tvkb::policies::PolicyVariant;

#[derive(Parser)]
#[command(
    name = "tvkb",
    version,
    about = "Time-varying kernelized bandit simulator"
)]
struct Cli {
    /// Experiment file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `policy.H=auto`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for parallel episodes.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; defaults to `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the normalized config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode per seed and write per-step CSV and JSON summaries.
    Run,
    /// Mean regret over seeds for each value of one parameter.
    Sweep {
        /// One of H, w, P_T, T.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; `T` stands for the horizon.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run a validation suite: identities, coverage, infogain or blocks.
    Validate { suite: String },
    /// Print information-gain curves as CSV (t,gamma,method).
    Infogain {
        /// Largest t; defaults to run.T.
        #[arg(long)]
        t_max: Option<usize>,
        /// greedy, exhaustive, analytic or all.
        #[arg(long, default_value = "greedy")]
        method: String,
    },
}

enum Failure {
    Usage { field: String, message: String },
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage {
            field: e.field,
            message: e.message,
        }
    }
}

impl From<tvkb::Error> for Failure {
    fn from(e: tvkb::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(field: &str, message: impl Into<String>) -> Failure {
    Failure::Usage {
        field: field.to_string(),
        message: message.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(Failure::Usage { field, message }) => {
            if field.is_empty() {
                eprintln!("error: {message}");
            } else {
                eprintln!("error: {field}: {message}");
            }
            eprintln!(
                "{}",
                json!({ "status": "error", "kind": "config", "field": field, "message": message })
            );
            ExitCode::from(2)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            eprintln!(
                "{}",
                json!({ "status": "error", "kind": "runtime", "message": message })
            );
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut overrides = cli.overrides.clone();
    if let Ok(raw) = std::env::var("TVKB_SEED") {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| usage("TVKB_SEED", format!("not an unsigned integer: {raw:?}")))?;
        overrides.push(format!("run.master_seed={seed}"));
    }
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::parse(&ExperimentConfig::default().to_toml(), &overrides)?,
    };
    Ok(config)
}

fn execute(cli: Cli) -> Result<ExitCode, Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let config = load_config(&cli)?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.run.out));
    match cli.command {
        None => Err(usage("", "no subcommand given; try --help")),
        Some(Command::Run) => cmd_run(&config, &out),
        Some(Command::Sweep { axis, values }) => cmd_sweep(&config, &out, &axis, &values),
        Some(Command::Validate { suite }) => cmd_validate(&config, &out, &suite),
        Some(Command::Infogain { t_max, method }) => cmd_infogain(&config, &out, t_max, &method),
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    tmp.write_all(contents.as_bytes())
        .and_then(|_| tmp.flush())
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    tmp.persist(path)
        .map_err(|e| Failure::Runtime(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<ExitCode, Failure> {
    let experiment = config.to_experiment()?;
    let prepared = experiment.prepare()?;
    let seeds = config.episode_seeds();
    let records = run_many(&prepared, &seeds)?;
    // Render everything before touching the output directory.
    let mut files = Vec::new();
    for r in &records {
        files.push((out.join(format!("run_seed{}.csv", r.seed)), r.to_csv()));
        files.push((
            out.join(format!("run_seed{}.json", r.seed)),
            pretty(&r.summary_json()),
        ));
    }
    let regrets: Vec<f64> = records.iter().map(|r| r.regret_total).collect();
    let (mean, stderr) = mean_stderr(&regrets);
    let (window_key, window) = match prepared.config.variant {
        PolicyVariant::Stationary => ("H", None),
        PolicyVariant::Restart { h } => ("H", Some(h)),
        PolicyVariant::SlidingWindow { w } => ("w", Some(w)),
    };
    let mut summary = json!({
        "fingerprint": prepared.fingerprint,
        "policy": prepared.config.variant.name(),
        "T": experiment.horizon,
        "gamma_T": prepared.gamma_t,
        "seeds": seeds,
        "regret_T": regrets,
        "mean_regret_T": mean,
        "stderr_regret_T": stderr,
    });
    summary[window_key] = json!(window);
    files.push((out.join("run_summary.json"), pretty(&summary)));
    for (path, contents) in &files {
        write_atomic(path, contents)?;
    }
    println!(
        "{}",
        serde_json::to_string(&summary).expect("json serializes")
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    config: &ExperimentConfig,
    out: &Path,
    axis: &str,
    values: &[String],
) -> Result<ExitCode, Failure> {
    let axis = SweepAxis::parse(axis).ok_or_else(|| {
        usage(
            "--axis",
            format!("unknown axis {axis:?}; expected H, w, P_T or T"),
        )
    })?;
    let experiment = config.to_experiment()?;
    let values: Vec<f64> = values
        .iter()
        .map(|v| match v.trim() {
            "T" => Ok(experiment.horizon as f64),
            s => s
                .parse::<f64>()
                .map_err(|_| usage("--values", format!("not a number: {s:?}"))),
        })
        .collect::<Result<_, _>>()?;
    if axis != SweepAxis::PT && values.iter().any(|v| !(v.fract() == 0.0 && *v >= 1.0)) {
        return Err(usage(
            "--values",
            format!("{} values must be positive integers", axis.as_str()),
        ));
    }
    let seeds = config.episode_seeds();
    if seeds.len() < 3 {
        log::warn!(
            "sweep with {} seed(s); stderr is not meaningful below 3",
            seeds.len()
        );
    }
    let table = sweep(&experiment, axis, &values, &seeds)?;
    let name = format!("sweep_{}", axis.as_str());
    let summary = json!({
        "fingerprint": experiment.fingerprint(),
        "axis": axis.as_str(),
        "cells": table.cells,
    });
    write_atomic(&out.join(format!("{name}.csv")), &table.to_csv())?;
    write_atomic(&out.join(format!("{name}.json")), &pretty(&summary))?;
    print!("{}", table.to_csv());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(config: &ExperimentConfig, out: &Path, suite: &str) -> Result<ExitCode, Failure> {
    let seed = config.run.master_seed;
    let (passed, report) =
        match suite {
            "identities" => {
                let r = identity_suite(100, seed, 1e-8)?;
                (r.passes(), json!(r))
            }
            "infogain" => {
                let kernel = config.build_kernel()?;
                let r = infogain_suite(&kernel, config.domain.lower.len(), 100, seed)?;
                (r.passes(), json!(r))
            }
            "coverage" => {
                let experiment = config.to_experiment()?;
                let v = &config.validate;
                let r = coverage_test(&experiment, v.delta, v.n_runs, v.drift_mode, seed)?;
                let summary = json!({
                    "n_runs": r.n_runs,
                    "delta": r.delta,
                    "drift_mode": r.drift_mode,
                    "drift_term": r.drift_term,
                    "prefactor": r.prefactor,
                    "violation_rate": r.violation_rate,
                    "violation_rate_without_drift": r.violation_rate_without_drift,
                    "tolerance": r.tolerance,
                    "max_ratio": r.max_ratio,
                });
                (r.passes(), summary)
            }
            "blocks" => {
                let experiment = config.to_experiment()?;
                let prepared = experiment.prepare()?;
                if !matches!(prepared.config.variant, PolicyVariant::Restart { .. }) {
                    return Err(usage(
                        "policy.variant",
                        "the blocks suite needs a restart policy",
                    ));
                }
                let records = run_many(&prepared, &config.episode_seeds())?;
                let mut audits = Vec::with_capacity(records.len());
                for r in &records {
                    audits.push(block_inequality_audit(
                        r,
                        &experiment.candidates,
                        GammaOracle::BestAvailable,
                    )?);
                }
                let violations: usize = audits.iter().map(|a| a.violations).sum();
                let summary = json!({
                    "runs": audits.len(),
                    "violations": violations,
                    "gamma_H": audits.first().map(|a| a.gamma_oracle),
                    "gamma_method": audits.first().map(|a| a.gamma_method.clone()),
                    "sum_bound_applicable": audits.first().map(|a| a.sum_bound_applicable),
                    "audits": audits,
                });
                (violations == 0, summary)
            }
            other => return Err(usage(
                "suite",
                format!(
                    "unknown suite {other:?}; expected identities, coverage, infogain or blocks"
                ),
            )),
        };
    let report = json!({ "suite": suite, "passed": passed, "report": report });
    write_atomic(
        &out.join(format!("validate_{suite}.json")),
        &pretty(&report),
    )?;
    println!(
        "{}",
        serde_json::to_string(&report).expect("json serializes")
    );
    Ok(if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_infogain(
    config: &ExperimentConfig,
    out: &Path,
    t_max: Option<usize>,
    method: &str,
) -> Result<ExitCode, Failure> {
    let methods: &[&str] = match method {
        "greedy" => &["greedy"],
        "exhaustive" => &["exhaustive"],
        "analytic" => &["analytic"],
        "all" => &["greedy", "exhaustive", "analytic"],
        other => return Err(usage("--method", format!("unknown method {other:?}"))),
    };
    let experiment = config.to_experiment()?;
    let cands = &experiment.candidates;
    let lambda = config.policy.lambda;
    let t_max = t_max.unwrap_or(experiment.horizon);
    let mut csv = String::from("t,gamma,method\n");
    for &m in methods {
        match m {
            "greedy" => {
                for (t, g) in greedy_curve(cands, t_max, lambda)?
                    .iter()
                    .enumerate()
                    .skip(1)
                {
                    csv.push_str(&format!("{t},{g},greedy\n"));
                }
            }
            "exhaustive" => {
                for t in (1..=t_max).take_while(|&t| exhaustive_feasible(cands.len(), t)) {
                    let g = exhaustive_max_info_gain(cands, t, lambda)?.value;
                    csv.push_str(&format!("{t},{g},exhaustive\n"));
                }
            }
            _ => {
                for t in 1..=t_max {
                    let est = analytic_bound(cands.kernel(), cands.dim(), t, lambda)?;
                    csv.push_str(&format!("{t},{},{}\n", est.value, est.method.as_str()));
                }
            }
        }
    }
    write_atomic(&out.join("infogain.csv"), &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}
