//! Replay memories and the continual Dyna-style training loop.
//!
//! Each environment step of a model-based stage does, in order:
//!
//! 1. act in the real zone with the stochastic policy and store the
//!    transition in the real memory and the model-training memory;
//! 2. once the model memory holds a full batch, take one hypernet training
//!    step on a batch drawn from it;
//! 3. generate `synthetic_per_step` one-step model rollouts from real start
//!    states and store them in the synthetic memory;
//! 4. on gated steps, update SAC on a batch mixing real and synthetic data.
//!
//! The model-free variant skips steps 2 and 3 and trains SAC on real data
//! only. Tasks run in the order 1, 2, 3; the SAC agent and the memories are
//! rebuilt for every task while the hypernet carries over, and its canonical
//! parameters are snapshotted at every task boundary.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::envsim::{EnvState, Observation, Scenario, TaskSpec, Transition, ZoneEnv};
use crate::error::{Error, Result};
use crate::hyperworld::{synthetic_rollouts, Hypernet, HypernetLoss, RegularizationSnapshot};
use crate::metrics::MetricsRow;
use crate::sac::{policy_update_gate, ActionMode, Agent};
use crate::seeding::{derive_seed, rng_for};

pub const TASK_ORDER: [u8; 3] = [1, 2, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Model-based: hypernet world model plus synthetic rollouts.
    Mbrl,
    /// Model-free baseline: real data only.
    Mfrl,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Mbrl => "mbrl",
            Variant::Mfrl => "mfrl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mbrl" => Ok(Variant::Mbrl),
            "mfrl" => Ok(Variant::Mfrl),
            other => Err(Error::contract(format!(
                "unknown variant {other:?} (expected mbrl or mfrl)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferKind {
    Real,
    Synthetic,
}

/// Bounded FIFO memory; the oldest transition is evicted first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fifo {
    kind: BufferKind,
    capacity: usize,
    items: VecDeque<Transition>,
}

impl Fifo {
    pub fn new(kind: BufferKind, capacity: usize) -> Self {
        Self {
            kind,
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn kind(&self) -> BufferKind {
        self.kind
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Appends `t`, returning the evicted transition if the memory was full.
    pub fn push(&mut self, t: Transition) -> Result<Option<Transition>> {
        let synthetic = self.kind == BufferKind::Synthetic;
        if t.synthetic != synthetic {
            return Err(Error::contract(format!(
                "{} transition pushed into a {:?} memory",
                if t.synthetic { "synthetic" } else { "real" },
                self.kind
            )));
        }
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(t);
        Ok(evicted)
    }

    /// `n` distinct transitions chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if n > self.items.len() {
            return Err(Error::InsufficientData {
                requested: n,
                available: self.items.len(),
            });
        }
        Ok(index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Real (`m_alpha`), synthetic (`m_beta`) and hypernet-training
/// (`m_gamma`) memories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferSet {
    pub m_alpha: Fifo,
    pub m_beta: Fifo,
    pub m_gamma: Fifo,
}

impl BufferSet {
    pub fn new(real: usize, synthetic: usize, hypernet: usize) -> Self {
        Self {
            m_alpha: Fifo::new(BufferKind::Real, real),
            m_beta: Fifo::new(BufferKind::Synthetic, synthetic),
            m_gamma: Fifo::new(BufferKind::Real, hypernet),
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let t = &cfg.training;
        Self::new(
            t.real_buffer_size,
            t.synthetic_buffer_size,
            t.hypernet_buffer_size,
        )
    }

    /// Stores a real transition in both `m_alpha` and `m_gamma`.
    pub fn push_real(&mut self, t: Transition) -> Result<()> {
        self.m_gamma.push(t.clone())?;
        self.m_alpha.push(t)?;
        Ok(())
    }

    /// `ceil(real_fraction * batch_size)` real transitions plus the rest
    /// synthetic; missing synthetic data is made up with real data. `None`
    /// means there is not enough data yet and the update should be skipped.
    pub fn mixed_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        real_fraction: f64,
        rng: &mut R,
    ) -> Option<Vec<&Transition>> {
        let wanted_real = ((real_fraction * batch_size as f64).ceil() as usize).min(batch_size);
        let synthetic = (batch_size - wanted_real).min(self.m_beta.len());
        let real = batch_size - synthetic;
        if real > self.m_alpha.len() {
            return None;
        }
        let mut batch = self.m_alpha.sample(real, rng).ok()?;
        batch.extend(self.m_beta.sample(synthetic, rng).ok()?);
        Some(batch)
    }
}

/// Outcome of one task stage. Per-episode vectors have one entry per
/// finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub task_id: u8,
    pub variant: Variant,
    pub scenario: Scenario,
    pub seed: u64,
    pub episode_returns: Vec<f64>,
    /// Episode-mean hypernet losses; `None` where the hypernet did not train.
    pub hypernet_losses: Vec<Option<HypernetLoss>>,
    pub real_transitions: Vec<usize>,
    pub synthetic_transitions: Vec<usize>,
    pub sac_updates: Vec<usize>,
    pub wall_time_s: f64,
    /// Set when the stage stopped early on divergence.
    pub halted: Option<String>,
}

impl StageReport {
    fn new(task: TaskSpec, variant: Variant, scenario: Scenario, seed: u64) -> Self {
        Self {
            task_id: task.id(),
            variant,
            scenario,
            seed,
            episode_returns: Vec::new(),
            hypernet_losses: Vec::new(),
            real_transitions: Vec::new(),
            synthetic_transitions: Vec::new(),
            sac_updates: Vec::new(),
            wall_time_s: 0.0,
            halted: None,
        }
    }

    pub fn episodes(&self) -> usize {
        self.episode_returns.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct LossAccum {
    sum: HypernetLoss,
    count: usize,
}

impl LossAccum {
    fn add(&mut self, l: &HypernetLoss) {
        self.sum.mse_dynamics += l.mse_dynamics;
        self.sum.mse_reward += l.mse_reward;
        self.sum.regularization += l.regularization;
        self.sum.total += l.total;
        self.count += 1;
    }

    fn mean(&self) -> Option<HypernetLoss> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            HypernetLoss {
                mse_dynamics: self.sum.mse_dynamics / n,
                mse_reward: self.sum.mse_reward / n,
                regularization: self.sum.regularization / n,
                total: self.sum.total / n,
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct EpisodeAccum {
    ret: f64,
    real: usize,
    synthetic: usize,
    updates: usize,
    losses: LossAccum,
}

/// Independent random streams of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRngs {
    policy: ChaCha8Rng,
    model: ChaCha8Rng,
    sac: ChaCha8Rng,
    buffer: ChaCha8Rng,
}

impl StageRngs {
    fn new(seed: u64) -> Self {
        Self {
            policy: rng_for(seed, "policy"),
            model: rng_for(seed, "model"),
            sac: rng_for(seed, "sac"),
            buffer: rng_for(seed, "buffer"),
        }
    }
}

/// Scalar progress of a stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCursor {
    task: TaskSpec,
    variant: Variant,
    scenario: Scenario,
    seed: u64,
    episodes: usize,
    episode: usize,
    step: u64,
    env: EnvState,
    obs: Observation,
    current: EpisodeAccum,
    window: LossAccum,
    report: StageReport,
}

/// A resumable task stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRun {
    cursor: StageCursor,
    agent: Agent,
    buffers: BufferSet,
    rngs: StageRngs,
}

/// What a stage needs from its surroundings for one step.
pub struct StepContext<'a> {
    pub config: &'a ExperimentConfig,
    pub env: &'a ZoneEnv,
    pub hypernet: Option<&'a mut Hypernet>,
    pub snapshot: &'a RegularizationSnapshot,
    pub wall_clock_s: f64,
}

pub fn episode_seed(stage_seed: u64, episode: usize) -> u64 {
    derive_seed(stage_seed, &format!("episode/{episode}"))
}

pub fn run_seed(master_seed: u64, variant: Variant, scenario: Scenario) -> u64 {
    derive_seed(master_seed, &format!("{variant}/{scenario}"))
}

pub fn stage_seed(master_seed: u64, variant: Variant, scenario: Scenario, task: TaskSpec) -> u64 {
    derive_seed(
        run_seed(master_seed, variant, scenario),
        &format!("task{}", task.id()),
    )
}

/// Fresh agent for a stage.
pub fn stage_agent(cfg: &ExperimentConfig, task: TaskSpec, seed: u64) -> Result<Agent> {
    Agent::for_task(
        task.action_dim(),
        &cfg.sac.hidden,
        cfg.sac.initial_entropy_coeff,
        derive_seed(seed, "agent"),
    )
}

impl TaskRun {
    pub fn new(
        cfg: &ExperimentConfig,
        env: &ZoneEnv,
        task: TaskSpec,
        variant: Variant,
        scenario: Scenario,
        seed: u64,
    ) -> Result<Self> {
        let episodes = cfg.episodes_for(task);
        let (env_state, obs) = env.reset(scenario, episode_seed(seed, 0));
        Ok(Self {
            cursor: StageCursor {
                task,
                variant,
                scenario,
                seed,
                episodes,
                episode: 0,
                step: 0,
                env: env_state,
                obs,
                current: EpisodeAccum::default(),
                window: LossAccum::default(),
                report: StageReport::new(task, variant, scenario, seed),
            },
            agent: stage_agent(cfg, task, seed)?,
            buffers: BufferSet::from_config(cfg),
            rngs: StageRngs::new(seed),
        })
    }

    pub fn task(&self) -> TaskSpec {
        self.cursor.task
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffers(&self) -> &BufferSet {
        &self.buffers
    }

    pub fn report(&self) -> &StageReport {
        &self.cursor.report
    }

    pub fn is_finished(&self) -> bool {
        self.cursor.episode >= self.cursor.episodes
    }

    pub fn into_parts(self) -> (StageCursor, Agent, BufferSet, StageRngs) {
        (self.cursor, self.agent, self.buffers, self.rngs)
    }

    pub fn from_parts(
        cursor: StageCursor,
        agent: Agent,
        buffers: BufferSet,
        rngs: StageRngs,
    ) -> Self {
        Self {
            cursor,
            agent,
            buffers,
            rngs,
        }
    }

    /// Takes one environment step with everything that hangs off it and
    /// returns the metrics rows it produced.
    pub fn step(&mut self, ctx: StepContext<'_>) -> Result<Vec<MetricsRow>> {
        if self.is_finished() {
            return Err(Error::EpisodeExhausted(ctx.env.episode_steps));
        }
        let cfg = ctx.config;
        let t = &cfg.training;
        let c = &mut self.cursor;
        let grid = &cfg.sac.action_levels;

        let policy_action = self.agent.select_action(
            &c.obs.features(),
            ActionMode::Stochastic,
            &mut self.rngs.policy,
        )?;
        let actions = c.task.apply_defaults(&grid.discretize(&policy_action))?;
        let out = ctx.env.step(&c.env, actions)?;
        self.buffers.push_real(Transition {
            obs: c.obs,
            policy_action,
            actions,
            next_obs: out.obs,
            reward: out.reward,
            setpoints: out.setpoints,
            task_id: c.task.id(),
            terminal: false,
            synthetic: false,
        })?;
        c.current.ret += out.reward;
        c.current.real += 1;
        c.env = out.state;
        c.obs = out.obs;

        if c.variant == Variant::Mbrl {
            let hypernet = ctx
                .hypernet
                .ok_or_else(|| Error::contract("model-based stage stepped without a hypernet"))?;
            if self.buffers.m_gamma.len() >= t.batch_size {
                let batch = self
                    .buffers
                    .m_gamma
                    .sample(t.batch_size, &mut self.rngs.model)?;
                let loss = hypernet.train_step(
                    &batch,
                    c.task,
                    ctx.snapshot,
                    t.beta,
                    t.hypernet_lr,
                    &mut self.rngs.model,
                )?;
                c.window.add(&loss);
                c.current.losses.add(&loss);

                let ensemble =
                    hypernet.ensemble(c.task, t.ensemble_models, &mut self.rngs.model)?;
                let n = t.synthetic_per_step.min(self.buffers.m_alpha.len());
                let starts = self.buffers.m_alpha.sample(n, &mut self.rngs.model)?;
                let rollouts = synthetic_rollouts(
                    &ensemble,
                    c.task,
                    &starts,
                    &self.agent,
                    grid,
                    &mut self.rngs.model,
                )?;
                c.current.synthetic += rollouts.len();
                for r in rollouts {
                    self.buffers.m_beta.push(r)?;
                }
            }
        }

        if policy_update_gate(c.step, t.policy_update_every) {
            let real_fraction = match c.variant {
                Variant::Mbrl => cfg.model.real_fraction,
                Variant::Mfrl => 1.0,
            };
            if let Some(batch) =
                self.buffers
                    .mixed_batch(t.batch_size, real_fraction, &mut self.rngs.buffer)
            {
                self.agent
                    .update(&batch, &cfg.sac_settings(), &mut self.rngs.sac)?;
                c.current.updates += 1;
            }
        }
        c.step += 1;

        let done = ctx.env.is_done(&c.env);
        let interval = cfg.metrics.log_interval;
        let mut rows = Vec::new();
        if done || (interval > 0 && c.env.step_index.is_multiple_of(interval)) {
            let window = c.window.mean();
            c.window = LossAccum::default();
            rows.push(MetricsRow {
                variant: c.variant,
                scenario: c.scenario,
                task_id: c.task.id(),
                episode: c.episode + 1,
                step: c.env.step_index,
                episodic_return: c.current.ret,
                hypernet_mse_dynamics: window.map(|l| l.mse_dynamics),
                hypernet_mse_reward: window.map(|l| l.mse_reward),
                hypernet_regularization: window.map(|l| l.regularization),
                wall_clock_s: ctx.wall_clock_s,
            });
        }
        if done {
            let ep = std::mem::take(&mut c.current);
            let r = &mut c.report;
            r.episode_returns.push(ep.ret);
            r.hypernet_losses.push(ep.losses.mean());
            r.real_transitions.push(ep.real);
            r.synthetic_transitions.push(ep.synthetic);
            r.sac_updates.push(ep.updates);
            c.episode += 1;
            if c.episode < c.episodes {
                let (s, o) = ctx.env.reset(c.scenario, episode_seed(c.seed, c.episode));
                c.env = s;
                c.obs = o;
            }
        }
        Ok(rows)
    }

    pub fn finish(self) -> (StageReport, Agent) {
        (self.cursor.report, self.agent)
    }
}

/// Runs one task stage to completion.
#[allow(clippy::too_many_arguments)]
pub fn run_task(
    cfg: &ExperimentConfig,
    env: &ZoneEnv,
    task: TaskSpec,
    variant: Variant,
    scenario: Scenario,
    seed: u64,
    mut hypernet: Option<&mut Hypernet>,
    snapshot: &RegularizationSnapshot,
    mut sink: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<(StageReport, Agent)> {
    let started = Instant::now();
    let mut run = TaskRun::new(cfg, env, task, variant, scenario, seed)?;
    while !run.is_finished() {
        let ctx = StepContext {
            config: cfg,
            env,
            hypernet: hypernet.as_deref_mut(),
            snapshot,
            wall_clock_s: if cfg.metrics.wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        let rows = match run.step(ctx) {
            Ok(rows) => rows,
            Err(Error::Divergence(detail)) => {
                let step = run.cursor.step;
                let mut report = run.cursor.report;
                report.halted = Some(detail.clone());
                report.wall_time_s = started.elapsed().as_secs_f64();
                return Err(Error::StageHalted {
                    step,
                    detail,
                    report: Box::new(report),
                });
            }
            Err(e) => return Err(e),
        };
        for row in &rows {
            sink(row)?;
        }
    }
    let (mut report, agent) = run.finish();
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((report, agent))
}

/// Tasks 1, 2, 3 in sequence with one persistent hypernet. Resumable one
/// environment step at a time, and checkpointable between steps.
#[derive(Clone, Debug)]
pub struct ContinualRun {
    config: ExperimentConfig,
    env: ZoneEnv,
    progress: RunProgress,
    hypernet: Option<Hypernet>,
    current: Option<TaskRun>,
    last_agent: Option<Agent>,
    started: Instant,
}

/// Bookkeeping of a [`ContinualRun`] besides networks and memories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunProgress {
    pub variant: Variant,
    pub scenario: Scenario,
    /// Index into [`TASK_ORDER`] of the running (or next) stage.
    pub stage: usize,
    pub completed: Vec<StageReport>,
    /// Snapshot in force; recaptured at every model-based task boundary.
    pub snapshot: RegularizationSnapshot,
    /// Every snapshot ever captured, oldest first.
    pub snapshot_history: Vec<RegularizationSnapshot>,
    pub cursor: Option<StageCursor>,
    /// Wall-clock seconds accumulated before the last resume.
    pub elapsed_s: f64,
}

/// Pieces of a [`ContinualRun`] as stored in a checkpoint.
#[derive(Clone, Debug)]
pub struct RunParts {
    pub config: ExperimentConfig,
    pub progress: RunProgress,
    pub hypernet: Option<Hypernet>,
    pub agent: Option<Agent>,
    pub buffers: Option<BufferSet>,
    pub rngs: Option<StageRngs>,
}

impl ContinualRun {
    pub fn new(config: ExperimentConfig, variant: Variant, scenario: Scenario) -> Result<Self> {
        config.validate()?;
        let env = config.zone_env()?;
        let hypernet = match variant {
            Variant::Mbrl => Some(Hypernet::new(
                &config.hypernet_settings(),
                derive_seed(run_seed(config.master_seed, variant, scenario), "hypernet"),
            )?),
            Variant::Mfrl => None,
        };
        Ok(Self {
            config,
            env,
            progress: RunProgress {
                variant,
                scenario,
                stage: 0,
                completed: Vec::new(),
                snapshot: RegularizationSnapshot::default(),
                snapshot_history: Vec::new(),
                cursor: None,
                elapsed_s: 0.0,
            },
            hypernet,
            current: None,
            last_agent: None,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn env(&self) -> &ZoneEnv {
        &self.env
    }

    pub fn variant(&self) -> Variant {
        self.progress.variant
    }

    pub fn scenario(&self) -> Scenario {
        self.progress.scenario
    }

    pub fn hypernet(&self) -> Option<&Hypernet> {
        self.hypernet.as_ref()
    }

    pub fn snapshot(&self) -> &RegularizationSnapshot {
        &self.progress.snapshot
    }

    pub fn snapshot_history(&self) -> &[RegularizationSnapshot] {
        &self.progress.snapshot_history
    }

    pub fn reports(&self) -> &[StageReport] {
        &self.progress.completed
    }

    pub fn current(&self) -> Option<&TaskRun> {
        self.current.as_ref()
    }

    /// Agent of the running stage, or of the last finished one.
    pub fn agent(&self) -> Option<(TaskSpec, &Agent)> {
        match &self.current {
            Some(run) => Some((run.task(), &run.agent)),
            None => {
                let task = self.progress.completed.last()?.task_id;
                Some((TaskSpec::new(task).ok()?, self.last_agent.as_ref()?))
            }
        }
    }

    pub fn is_finished(&self) -> bool {
        self.current.is_none() && self.progress.stage >= TASK_ORDER.len()
    }

    fn elapsed(&self) -> f64 {
        self.progress.elapsed_s + self.started.elapsed().as_secs_f64()
    }

    fn start_next_stage(&mut self) -> Result<bool> {
        while self.progress.stage < TASK_ORDER.len() {
            let task = TaskSpec::new(TASK_ORDER[self.progress.stage])?;
            if self.config.episodes_for(task) == 0 {
                self.progress.stage += 1;
                continue;
            }
            let seed = stage_seed(
                self.config.master_seed,
                self.variant(),
                self.scenario(),
                task,
            );
            self.current = Some(TaskRun::new(
                &self.config,
                &self.env,
                task,
                self.variant(),
                self.scenario(),
                seed,
            )?);
            return Ok(true);
        }
        Ok(false)
    }

    /// Advances by one environment step (starting or closing stages as
    /// needed). Returns no rows once the run is finished.
    pub fn step(&mut self) -> Result<Vec<MetricsRow>> {
        if self.current.is_none() && !self.start_next_stage()? {
            return Ok(Vec::new());
        }
        let wall_clock_s = if self.config.metrics.wall_clock {
            self.elapsed()
        } else {
            0.0
        };
        let run = self.current.as_mut().unwrap();
        let ctx = StepContext {
            config: &self.config,
            env: &self.env,
            hypernet: self.hypernet.as_mut(),
            snapshot: &self.progress.snapshot,
            wall_clock_s,
        };
        let rows = match run.step(ctx) {
            Ok(rows) => rows,
            Err(Error::Divergence(detail)) => {
                let run = self.current.take().unwrap();
                let step = run.cursor.step;
                let (mut report, agent) = run.finish();
                report.halted = Some(detail.clone());
                self.progress.completed.push(report.clone());
                self.last_agent = Some(agent);
                self.progress.stage = TASK_ORDER.len();
                return Err(Error::StageHalted {
                    step,
                    detail,
                    report: Box::new(report),
                });
            }
            Err(e) => return Err(e),
        };
        if run.is_finished() {
            self.close_stage()?;
        }
        Ok(rows)
    }

    fn close_stage(&mut self) -> Result<()> {
        let run = self.current.take().unwrap();
        let task = run.task();
        let (mut report, agent) = run.finish();
        report.wall_time_s = self.elapsed()
            - self
                .progress
                .completed
                .iter()
                .map(|r| r.wall_time_s)
                .sum::<f64>();
        if let Some(h) = &self.hypernet {
            let mut done: Vec<TaskSpec> = self
                .progress
                .completed
                .iter()
                .map(|r| TaskSpec::new(r.task_id))
                .collect::<Result<_>>()?;
            done.push(task);
            done.dedup();
            let snapshot = h.capture_snapshot(&done)?;
            self.progress.snapshot_history.push(snapshot.clone());
            self.progress.snapshot = snapshot;
        }
        self.progress.completed.push(report);
        self.last_agent = Some(agent);
        self.progress.stage += 1;
        Ok(())
    }

    /// Runs until every stage is finished, feeding rows to `sink`.
    pub fn run_to_end(
        &mut self,
        mut sink: impl FnMut(&MetricsRow) -> Result<()>,
    ) -> Result<Vec<StageReport>> {
        while !self.is_finished() {
            for row in self.step()? {
                sink(&row)?;
            }
        }
        Ok(self.progress.completed.clone())
    }

    pub fn to_parts(&self) -> RunParts {
        let mut progress = self.progress.clone();
        progress.elapsed_s = self.elapsed();
        let (agent, buffers, rngs) = match &self.current {
            Some(run) => {
                progress.cursor = Some(run.cursor.clone());
                (
                    Some(run.agent.clone()),
                    Some(run.buffers.clone()),
                    Some(run.rngs.clone()),
                )
            }
            None => {
                progress.cursor = None;
                (self.last_agent.clone(), None, None)
            }
        };
        RunParts {
            config: self.config.clone(),
            progress,
            hypernet: self.hypernet.clone(),
            agent,
            buffers,
            rngs,
        }
    }

    pub fn from_parts(parts: RunParts) -> Result<Self> {
        let RunParts {
            config,
            mut progress,
            hypernet,
            agent,
            buffers,
            rngs,
        } = parts;
        config.validate()?;
        let env = config.zone_env()?;
        if (progress.variant == Variant::Mbrl) != hypernet.is_some() {
            return Err(Error::CorruptCheckpoint(
                "hypernet presence does not match the variant".into(),
            ));
        }
        let (current, last_agent) = match progress.cursor.take() {
            Some(cursor) => {
                let (agent, buffers, rngs) = match (agent, buffers, rngs) {
                    (Some(a), Some(b), Some(r)) => (a, b, r),
                    _ => {
                        return Err(Error::CorruptCheckpoint(
                            "a stage in progress needs agent, buffers and rng sections".into(),
                        ))
                    }
                };
                (
                    Some(TaskRun::from_parts(cursor, agent, buffers, rngs)),
                    None,
                )
            }
            None => (None, agent),
        };
        Ok(Self {
            config,
            env,
            progress,
            hypernet,
            current,
            last_agent,
            started: Instant::now(),
        })
    }
}

/// Convenience: a full continual run for one variant and scenario.
pub fn run_continual(
    cfg: &ExperimentConfig,
    variant: Variant,
    scenario: Scenario,
    sink: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<ContinualRun> {
    let mut run = ContinualRun::new(cfg.clone(), variant, scenario)?;
    run.run_to_end(sink)?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{Observation, Setpoints};
    use rand::SeedableRng;

    fn tagged(tag: f64, synthetic: bool) -> Transition {
        let obs = Observation {
            time_sin: 0.0,
            time_cos: 1.0,
            zone_temp: tag,
            forecast: [0.0; 4],
        };
        Transition {
            obs,
            policy_action: vec![0.5],
            actions: [0.5, 1.0, 1.0],
            next_obs: obs,
            reward: 0.0,
            setpoints: Setpoints {
                heating: 21.0,
                cooling: 24.0,
            },
            task_id: 1,
            terminal: false,
            synthetic,
        }
    }

    #[test]
    fn fifo_evicts_oldest_first() {
        let mut m = Fifo::new(BufferKind::Real, 4000);
        assert!(m.push(tagged(0.0, false)).unwrap().is_none());
        assert_eq!(m.len(), 1);
        for i in 1..4000 {
            m.push(tagged(i as f64, false)).unwrap();
        }
        let mut evicted = Vec::new();
        for i in 4000..4100 {
            evicted.push(
                m.push(tagged(i as f64, false))
                    .unwrap()
                    .unwrap()
                    .obs
                    .zone_temp,
            );
        }
        assert_eq!(m.len(), 4000);
        assert_eq!(evicted, (0..100).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(m.iter().next().unwrap().obs.zone_temp, 100.0);
    }

    #[test]
    fn fifo_checks_flags_and_sample_size() {
        let mut real = Fifo::new(BufferKind::Real, 10);
        let mut syn = Fifo::new(BufferKind::Synthetic, 10);
        assert!(matches!(
            real.push(tagged(1.0, true)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            syn.push(tagged(1.0, false)),
            Err(Error::Contract(_))
        ));
        real.push(tagged(1.0, false)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            real.sample(2, &mut rng),
            Err(Error::InsufficientData {
                requested: 2,
                available: 1
            })
        ));
        assert_eq!(real.sample(1, &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn mixed_batch_composition() {
        let mut set = BufferSet::new(35000, 35000, 4000);
        for i in 0..2000 {
            set.push_real(tagged(i as f64, false)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let only_real = set.mixed_batch(1024, 0.5, &mut rng).unwrap();
        assert_eq!(only_real.len(), 1024);
        assert!(only_real.iter().all(|t| !t.synthetic));

        for i in 0..2000 {
            set.m_beta.push(tagged(i as f64, true)).unwrap();
        }
        let half = set.mixed_batch(1024, 0.5, &mut rng).unwrap();
        assert_eq!(half.iter().filter(|t| t.synthetic).count(), 512);
        let pure = set.mixed_batch(1024, 1.0, &mut rng).unwrap();
        assert!(pure.iter().all(|t| !t.synthetic));
        assert_eq!(set.m_gamma.len(), 2000);

        let small = BufferSet::new(10, 10, 10);
        assert!(small.mixed_batch(4, 0.5, &mut rng).is_none());
    }

    #[test]
    fn partial_synthetic_backfill() {
        let mut set = BufferSet::new(100, 100, 100);
        for i in 0..50 {
            set.push_real(tagged(i as f64, false)).unwrap();
        }
        for i in 0..3 {
            set.m_beta.push(tagged(i as f64, true)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = set.mixed_batch(20, 0.5, &mut rng).unwrap();
        assert_eq!(b.len(), 20);
        assert_eq!(b.iter().filter(|t| t.synthetic).count(), 3);
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in [Variant::Mbrl, Variant::Mfrl] {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert!("dqn".parse::<Variant>().is_err());
    }
}
