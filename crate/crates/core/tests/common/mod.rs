#![allow(dead_code)]

use hyperdyna_core::config::ExperimentConfig;
use hyperdyna_core::dyna::ContinualRun;
use hyperdyna_core::metrics::MetricsRow;
use hyperdyna_core::{Scenario, Variant};

/// A configuration small enough to run every stage in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.master_seed = 7;
    cfg.episodes.task1 = 2;
    cfg.episodes.task2 = 1;
    cfg.episodes.task3 = 1;
    let t = &mut cfg.training;
    t.steps_per_episode = 48;
    t.batch_size = 16;
    t.ensemble_models = 3;
    t.real_buffer_size = 500;
    t.synthetic_buffer_size = 300;
    t.hypernet_buffer_size = 64;
    cfg.sac.hidden = vec![16, 16];
    cfg.model.hypernet_hidden = vec![16];
    cfg.model.target_hidden = vec![8];
    cfg.metrics.log_interval = 16;
    cfg
}

pub fn run_rows(
    cfg: &ExperimentConfig,
    variant: Variant,
    scenario: Scenario,
) -> (ContinualRun, Vec<MetricsRow>) {
    let mut run = ContinualRun::new(cfg.clone(), variant, scenario).unwrap();
    let mut rows = Vec::new();
    run.run_to_end(|r| {
        rows.push(r.clone());
        Ok(())
    })
    .unwrap();
    (run, rows)
}
