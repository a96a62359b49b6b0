//! End-to-end experiment driver used by the command-line front end.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/manifest.toml                  config copy, master seed, code version
//! <out>/metrics.csv                    every run, in config order
//! <out>/<variant>_<scenario>/metrics.csv
//! <out>/<variant>_<scenario>/task<k>.ckpt   saved when task k finishes
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::dyna::{ContinualRun, StageReport, Variant};
use crate::envsim::{Scenario, TaskSpec, ZoneEnv};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsWriter};
use crate::sac::{ActionGrid, ActionMode, Agent};
use crate::seeding::derive_seed;

pub const OUTPUT_DIR_ENV: &str = "HYPERDYNA_OUTPUT_DIR";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output directory, honouring the environment override.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output_dir.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            code_version: CODE_VERSION.to_string(),
            master_seed: cfg.master_seed,
            config: cfg.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn run_dir(out: &Path, variant: Variant, scenario: Scenario) -> PathBuf {
    out.join(format!("{variant}_{scenario}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// One continual run; writes its metrics and a checkpoint per finished task
/// under [`run_dir`].
pub fn run_one(
    cfg: &ExperimentConfig,
    variant: Variant,
    scenario: Scenario,
    out: &Path,
) -> Result<Vec<StageReport>> {
    let dir = run_dir(out, variant, scenario);
    create_dir(&dir)?;
    let mut writer = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let mut run = ContinualRun::new(cfg.clone(), variant, scenario)?;
    let mut saved = 0;
    while !run.is_finished() {
        let rows = run.step();
        let rows = match rows {
            Ok(rows) => rows,
            Err(e) => {
                writer.finish()?;
                return Err(e);
            }
        };
        for row in &rows {
            writer.append(row)?;
        }
        if run.reports().len() > saved {
            saved = run.reports().len();
            let task = run.reports()[saved - 1].task_id;
            checkpoint::save(&dir.join(format!("task{task}.ckpt")), &run)?;
        }
    }
    writer.finish()?;
    Ok(run.reports().to_vec())
}

/// Concatenates the per-run metrics files into `<out>/metrics.csv`, variants
/// outermost, in config order.
pub fn merge_metrics(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut text = String::from(metrics::HEADER);
    text.push('\n');
    for &variant in &cfg.variants {
        for &scenario in &cfg.scenarios {
            let path = run_dir(out, variant, scenario).join("metrics.csv");
            let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut lines = body.lines();
            if lines.next() != Some(metrics::HEADER) {
                return Err(Error::Metrics {
                    line: 1,
                    detail: format!("{}: unexpected header", path.display()),
                });
            }
            for line in lines {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    let path = out.join("metrics.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Every (variant, scenario) run in sequence, then the merged metrics file.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    Manifest::new(cfg).write(out)?;
    for &variant in &cfg.variants {
        for &scenario in &cfg.scenarios {
            run_one(cfg, variant, scenario, out)?;
        }
    }
    merge_metrics(cfg, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task_id: u8,
    pub scenario: Scenario,
    pub returns: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl EvalSummary {
    pub fn from_returns(task_id: u8, scenario: Scenario, returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / n);
        let std = mean.map(|m| (returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).sqrt());
        Self {
            task_id,
            scenario,
            returns,
            mean,
            std,
        }
    }
}

/// Episodic returns of the deterministic policy; no learning happens.
pub fn evaluate_agent(
    agent: &Agent,
    task: TaskSpec,
    env: &ZoneEnv,
    grid: &ActionGrid,
    scenario: Scenario,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    // Deterministic mode never draws; the generator only satisfies the signature.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    (0..episodes)
        .map(|i| {
            let (mut state, mut obs) = env.reset(scenario, derive_seed(seed, &format!("eval/{i}")));
            let mut ret = 0.0;
            while !env.is_done(&state) {
                let a =
                    agent.select_action(&obs.features(), ActionMode::Deterministic, &mut unused)?;
                let out = env.step(&state, task.apply_defaults(&grid.discretize(&a))?)?;
                ret += out.reward;
                state = out.state;
                obs = out.obs;
            }
            Ok(ret)
        })
        .collect()
}

/// Loads a checkpoint and evaluates its most recent agent.
pub fn evaluate(
    checkpoint_path: &Path,
    scenario: Scenario,
    episodes: usize,
) -> Result<EvalSummary> {
    let run = checkpoint::load(checkpoint_path)?;
    let (task, agent) = run
        .agent()
        .ok_or_else(|| Error::CorruptCheckpoint("checkpoint holds no agent".into()))?;
    let cfg = run.config();
    let seed = derive_seed(cfg.master_seed, &format!("evaluate/{scenario}"));
    let returns = evaluate_agent(
        agent,
        task,
        run.env(),
        &cfg.sac.action_levels,
        scenario,
        episodes,
        seed,
    )?;
    Ok(EvalSummary::from_returns(task.id(), scenario, returns))
}
