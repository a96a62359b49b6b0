use std::path::{Path, PathBuf};
use std::process::{Command as Process, ExitCode};

use clap::{Parser, Subcommand};
use hyperdyna_core::checkpoint;
use hyperdyna_core::config::ExperimentConfig;
use hyperdyna_core::experiment::{self, Manifest};
use hyperdyna_core::plot;
use hyperdyna_core::{Error, Scenario, Variant};

#[derive(Parser)]
#[command(
    name = "hyperdyna",
    version,
    about = "Continual model-based HVAC control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured variant and scenario.
    Run {
        config: PathBuf,
        /// Run each (variant, scenario) pair in its own process.
        #[arg(long)]
        parallel: bool,
        /// Run a single pair, e.g. `mbrl/january_like` (used by --parallel).
        #[arg(long, value_name = "VARIANT/SCENARIO")]
        only: Option<String>,
    },
    /// Roll out the checkpointed policy deterministically.
    Evaluate {
        checkpoint: PathBuf,
        #[arg(long, default_value = "january_like")]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Draw learning curves from a metrics file into a directory of SVGs.
    Plot { metrics: PathBuf, output: PathBuf },
    /// Describe the contents of a checkpoint.
    InspectCheckpoint { checkpoint: PathBuf },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { path, source } => {
            Failure::Usage(format!("cannot read config {}: {source}", path.display()))
        }
        other => Failure::Usage(other.to_string()),
    })
}

fn parse_pair(s: &str) -> Result<(Variant, Scenario), Failure> {
    let (v, sc) = s
        .split_once('/')
        .ok_or_else(|| Failure::Usage(format!("--only expects VARIANT/SCENARIO, got {s:?}")))?;
    let v = v
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let sc = sc
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    Ok((v, sc))
}

fn run(config: &Path, parallel: bool, only: Option<&str>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let out = experiment::output_dir(&cfg);
    if let Some(pair) = only {
        let (variant, scenario) = parse_pair(pair)?;
        experiment::run_one(&cfg, variant, scenario, &out)?;
        return Ok(());
    }
    std::fs::create_dir_all(&out).map_err(|e| Failure::from(Error::io(&out, e)))?;
    Manifest::new(&cfg).write(&out)?;
    if parallel {
        let exe = std::env::current_exe().map_err(|e| Failure::Runtime(e.to_string()))?;
        let mut children = Vec::new();
        for &variant in &cfg.variants {
            for &scenario in &cfg.scenarios {
                let child = Process::new(&exe)
                    .arg("run")
                    .arg(config)
                    .arg("--only")
                    .arg(format!("{variant}/{scenario}"))
                    .env(experiment::OUTPUT_DIR_ENV, &out)
                    .spawn()
                    .map_err(|e| Failure::Runtime(format!("spawning {variant}/{scenario}: {e}")))?;
                children.push((variant, scenario, child));
            }
        }
        let mut failed = Vec::new();
        for (variant, scenario, mut child) in children {
            let status = child.wait().map_err(|e| Failure::Runtime(e.to_string()))?;
            if !status.success() {
                failed.push(format!("{variant}/{scenario}"));
            }
        }
        if !failed.is_empty() {
            return Err(Failure::Runtime(format!(
                "runs failed: {}",
                failed.join(", ")
            )));
        }
    } else {
        for &variant in &cfg.variants {
            for &scenario in &cfg.scenarios {
                eprintln!("running {variant}/{scenario}");
                for r in experiment::run_one(&cfg, variant, scenario, &out)? {
                    let last = r.episode_returns.last().copied().unwrap_or(f64::NAN);
                    eprintln!(
                        "  task {}: {} episodes, final return {last:.3}",
                        r.task_id,
                        r.episodes()
                    );
                }
            }
        }
    }
    let merged = experiment::merge_metrics(&cfg, &out)?;
    println!("{}", merged.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            parallel,
            only,
        } => run(&config, parallel, only.as_deref()),
        Command::Evaluate {
            checkpoint,
            scenario,
            episodes,
        } => {
            let s = experiment::evaluate(&checkpoint, scenario, episodes)?;
            println!(
                "task {} on {}: {} episodes",
                s.task_id,
                s.scenario,
                s.returns.len()
            );
            match (s.mean, s.std) {
                (Some(m), Some(sd)) => println!("mean {m:.4} std {sd:.4}"),
                _ => println!("no episodes evaluated"),
            }
            Ok(())
        }
        Command::Plot { metrics, output } => {
            for path in plot::plot_file(&metrics, &output)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::InspectCheckpoint { checkpoint: path } => {
            print!("{}", checkpoint::inspect(&path)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
