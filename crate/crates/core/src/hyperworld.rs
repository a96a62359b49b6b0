//! Hypernetwork world model.
//!
//! One hypernetwork `H` produces, layer by layer, the parameters of two small
//! target networks: a dynamics net predicting the next zone temperature and a
//! reward net predicting the step reward. Each target layer has a global
//! layer id (dynamics layers first, then reward layers); `H` is queried once
//! per layer id with the conditioning vector
//!
//! ```text
//! [one_hot(task, 3), one_hot(layer_id, L), noise]
//! ```
//!
//! and the first `in*out + out` entries of its output head become that
//! layer's weights and biases. Gradients from the target losses flow only
//! into `H`; generated parameters are plain values.
//!
//! Continual learning adds a penalty pulling the zero-noise parameters of
//! every previously completed task toward a frozen [`RegularizationSnapshot`].

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{self, Activation, AdamState, NetSpec, ParamVector};
use crate::envsim::{
    denormalize_temp, normalize_temp, Observation, Setpoints, TaskSpec, Transition, MAX_ZONE_TEMP,
    MIN_ZONE_TEMP,
};
use crate::error::{Error, Result};
use crate::sac::{ActionGrid, ActionMode, Agent};

/// Target input layout: zone temp, dry-bulb forecast (first step), cooling
/// setpoint, heating setpoint, then the three actuator commands. Temperatures
/// are normalized; actions are already in `[0, 1]`.
pub const TARGET_INPUTS: usize = 7;
pub const NUM_TASKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Dynamics,
    Reward,
}

impl TargetKind {
    pub const BOTH: [TargetKind; 2] = [TargetKind::Dynamics, TargetKind::Reward];
}

pub fn target_input(
    obs: &Observation,
    setpoints: Setpoints,
    actions: [f64; 3],
) -> [f64; TARGET_INPUTS] {
    [
        normalize_temp(obs.zone_temp),
        normalize_temp(obs.forecast[0]),
        normalize_temp(setpoints.cooling),
        normalize_temp(setpoints.heating),
        actions[0],
        actions[1],
        actions[2],
    ]
}

/// Affine maps between physical and network units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub temp_center: f64,
    pub temp_scale: f64,
    /// Rewards are divided by this (Kelvin-hours).
    pub reward_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            temp_center: crate::envsim::TEMP_CENTER,
            temp_scale: crate::envsim::TEMP_SCALE,
            reward_scale: 1.0,
        }
    }
}

impl Normalization {
    pub fn encode(&self, kind: TargetKind, physical: f64) -> f64 {
        match kind {
            TargetKind::Dynamics => (physical - self.temp_center) / self.temp_scale,
            TargetKind::Reward => physical / self.reward_scale,
        }
    }

    pub fn decode(&self, kind: TargetKind, raw: f64) -> f64 {
        match kind {
            TargetKind::Dynamics => raw * self.temp_scale + self.temp_center,
            TargetKind::Reward => raw * self.reward_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub dynamics: NetSpec,
    pub reward: NetSpec,
}

impl TargetSpec {
    pub fn new(hidden: &[usize]) -> Result<Self> {
        let net = NetSpec::mlp(
            TARGET_INPUTS,
            hidden,
            1,
            Activation::Tanh,
            Activation::Identity,
        )?;
        Ok(Self {
            dynamics: net.clone(),
            reward: net,
        })
    }

    pub fn spec(&self, kind: TargetKind) -> &NetSpec {
        match kind {
            TargetKind::Dynamics => &self.dynamics,
            TargetKind::Reward => &self.reward,
        }
    }

    pub fn total_layers(&self) -> usize {
        self.dynamics.num_layers() + self.reward.num_layers()
    }
}

/// One row of the chunk table: which slice of the head feeds which layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub kind: TargetKind,
    pub layer: usize,
    pub layer_id: usize,
    pub len: usize,
    /// Offset of the layer inside its target's flat parameter vector.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypernetSettings {
    pub hidden: Vec<usize>,
    pub target_hidden: Vec<usize>,
    pub noise_dim: usize,
    pub noise_sigma: f64,
}

impl Default for HypernetSettings {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            target_hidden: vec![32, 32],
            noise_dim: 8,
            noise_sigma: 0.1,
        }
    }
}

/// `[one_hot(task), one_hot(layer_id), noise]`.
pub fn encode_condition(
    task_id: u8,
    layer_id: usize,
    noise: &[f64],
    num_layers: usize,
) -> Result<Vec<f64>> {
    let task = TaskSpec::new(task_id)?;
    if layer_id >= num_layers {
        return Err(Error::contract(format!(
            "layer id {layer_id} outside 0..{num_layers}"
        )));
    }
    let mut v = Vec::with_capacity(NUM_TASKS + num_layers + noise.len());
    v.extend_from_slice(&task.one_hot());
    v.extend((0..num_layers).map(|l| if l == layer_id { 1.0 } else { 0.0 }));
    v.extend_from_slice(noise);
    Ok(v)
}

/// Full parameters of one target network for one `(task, noise)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTarget {
    pub kind: TargetKind,
    pub task_id: u8,
    pub noise: Vec<f64>,
    pub params: ParamVector,
}

/// Raw (normalized) output of a generated target.
pub fn target_predict(
    generated: &GeneratedTarget,
    spec: &NetSpec,
    input: &[f64; TARGET_INPUTS],
) -> Result<f64> {
    Ok(diffnet::forward(spec, &generated.params, input)?[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub dynamics: GeneratedTarget,
    pub reward: GeneratedTarget,
}

impl SnapshotEntry {
    fn flat(&self) -> impl Iterator<Item = &f64> {
        self.dynamics.params.iter().chain(self.reward.params.iter())
    }
}

/// Zero-noise target parameters of completed tasks, frozen at the task
/// boundary. There is no way to mutate an entry once captured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSnapshot {
    entries: BTreeMap<u8, SnapshotEntry>,
}

impl RegularizationSnapshot {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn task_ids(&self) -> Vec<u8> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, task_id: u8) -> Option<&SnapshotEntry> {
        self.entries.get(&task_id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HypernetLoss {
    pub mse_dynamics: f64,
    pub mse_reward: f64,
    pub regularization: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypernet {
    targets: TargetSpec,
    spec: NetSpec,
    params: ParamVector,
    opt: AdamState,
    chunks: Vec<Chunk>,
    noise_dim: usize,
    noise_sigma: f64,
    norm: Normalization,
}

impl Hypernet {
    pub fn new(settings: &HypernetSettings, seed: u64) -> Result<Self> {
        if !(settings.noise_sigma >= 0.0 && settings.noise_sigma.is_finite()) {
            return Err(Error::contract(
                "noise sigma must be finite and non-negative",
            ));
        }
        let targets = TargetSpec::new(&settings.target_hidden)?;
        let mut chunks = Vec::new();
        for kind in TargetKind::BOTH {
            let spec = targets.spec(kind);
            let offsets = spec.layer_offsets();
            for layer in 0..spec.num_layers() {
                chunks.push(Chunk {
                    kind,
                    layer,
                    layer_id: chunks.len(),
                    len: spec.layer_param_count(layer),
                    offset: offsets[layer],
                });
            }
        }
        let head = chunks.iter().map(|c| c.len).max().unwrap();
        let cond_dim = NUM_TASKS + chunks.len() + settings.noise_dim;
        let spec = NetSpec::mlp(
            cond_dim,
            &settings.hidden,
            head,
            Activation::Tanh,
            Activation::Identity,
        )?;
        let params = diffnet::init_params(&spec, seed);
        Ok(Self {
            opt: AdamState::new(params.len()),
            targets,
            spec,
            params,
            chunks,
            noise_dim: settings.noise_dim,
            noise_sigma: settings.noise_sigma,
            norm: Normalization::default(),
        })
    }

    pub fn targets(&self) -> &TargetSpec {
        &self.targets
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn chunk_table(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn set_noise_sigma(&mut self, sigma: f64) {
        self.noise_sigma = sigma;
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn num_layer_ids(&self) -> usize {
        self.chunks.len()
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.noise_dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                self.noise_sigma * z
            })
            .collect()
    }

    /// Conditioning rows for every layer id of every `(task, noise)` pair,
    /// `num_layer_ids()` consecutive rows per pair.
    fn conditions(&self, pairs: &[(TaskSpec, &[f64])]) -> Result<Array2<f64>> {
        let l = self.num_layer_ids();
        let mut m = Array2::zeros((pairs.len() * l, self.spec.input_dim()));
        for (p, (task, noise)) in pairs.iter().enumerate() {
            if noise.len() != self.noise_dim {
                return Err(Error::contract(format!(
                    "noise has {} entries, hypernet expects {}",
                    noise.len(),
                    self.noise_dim
                )));
            }
            for layer_id in 0..l {
                let row = encode_condition(task.id(), layer_id, noise, l)?;
                m.row_mut(p * l + layer_id).assign(&Array1::from(row));
            }
        }
        Ok(m)
    }

    /// Hypernet output for condition rows laid out as in [`Self::conditions`],
    /// computing only the leading `len` head entries each layer id uses.
    /// Unused entries are left at zero.
    fn generate_head(&self, cond: &Array2<f64>) -> Result<Array2<f64>> {
        let sizes = self.spec.layer_sizes();
        let last = self.spec.num_layers() - 1;
        let trunk_spec = NetSpec::new(
            sizes[..=last].to_vec(),
            self.spec.activations()[..last].to_vec(),
        )?;
        let split = self.spec.layer_offsets()[last];
        let hidden = diffnet::forward_batch(&trunk_spec, &self.params[..split], cond.view())?;
        let (fan_in, head_dim) = self.spec.layer_shape(last);
        let w = ArrayView2::from_shape(
            (head_dim, fan_in),
            &self.params[split..split + head_dim * fan_in],
        )
        .unwrap();
        let b = &self.params[split + head_dim * fan_in..];
        let l = self.num_layer_ids();
        let mut head = Array2::zeros((cond.nrows(), head_dim));
        for c in &self.chunks {
            let rows = s![c.layer_id..;l, ..];
            let mut out = hidden.slice(rows).dot(&w.slice(s![..c.len, ..]).t());
            out += &ArrayView1::from(&b[..c.len]);
            head.slice_mut(s![c.layer_id..;l, ..c.len]).assign(&out);
        }
        Ok(head)
    }

    /// Assembles the target parameter vector of `kind` from head rows
    /// starting at `base`.
    fn assemble(&self, head: &Array2<f64>, base: usize, kind: TargetKind) -> ParamVector {
        let mut v = Vec::with_capacity(self.targets.spec(kind).num_params());
        for c in self.chunks.iter().filter(|c| c.kind == kind) {
            let row = head.row(base + c.layer_id);
            v.extend(row.iter().take(c.len));
        }
        ParamVector::from_vec(v)
    }

    fn scatter(
        &self,
        d_head: &mut Array2<f64>,
        base: usize,
        kind: TargetKind,
        grads: &[f64],
        scale: f64,
    ) {
        for c in self.chunks.iter().filter(|c| c.kind == kind) {
            let mut row = d_head.row_mut(base + c.layer_id);
            for (dst, g) in row.iter_mut().zip(&grads[c.offset..c.offset + c.len]) {
                *dst += scale * g;
            }
        }
    }

    /// Both targets for one `(task, noise)` in a single hypernet pass.
    pub fn generate_pair(
        &self,
        task: TaskSpec,
        noise: &[f64],
    ) -> Result<(GeneratedTarget, GeneratedTarget)> {
        let cond = self.conditions(&[(task, noise)])?;
        let head = self.generate_head(&cond)?;
        let make = |kind| GeneratedTarget {
            kind,
            task_id: task.id(),
            noise: noise.to_vec(),
            params: self.assemble(&head, 0, kind),
        };
        Ok((make(TargetKind::Dynamics), make(TargetKind::Reward)))
    }

    pub fn generate_target(
        &self,
        kind: TargetKind,
        task: TaskSpec,
        noise: &[f64],
    ) -> Result<GeneratedTarget> {
        let (d, r) = self.generate_pair(task, noise)?;
        Ok(match kind {
            TargetKind::Dynamics => d,
            TargetKind::Reward => r,
        })
    }

    /// Zero-noise (canonical) parameters for a task.
    pub fn canonical(&self, task: TaskSpec) -> Result<SnapshotEntry> {
        let (dynamics, reward) = self.generate_pair(task, &vec![0.0; self.noise_dim])?;
        Ok(SnapshotEntry { dynamics, reward })
    }

    /// Prediction in physical units (°C or Kelvin-hours).
    pub fn predict_physical(
        &self,
        generated: &GeneratedTarget,
        input: &[f64; TARGET_INPUTS],
    ) -> Result<f64> {
        let raw = target_predict(generated, self.targets.spec(generated.kind), input)?;
        Ok(self.norm.decode(generated.kind, raw))
    }

    /// `n_models` independent noise draws for `task`, generated in one batch.
    pub fn ensemble<R: Rng + ?Sized>(
        &self,
        task: TaskSpec,
        n_models: usize,
        rng: &mut R,
    ) -> Result<Ensemble> {
        if n_models == 0 {
            return Err(Error::contract("ensemble needs at least one model"));
        }
        let noises: Vec<Vec<f64>> = (0..n_models).map(|_| self.draw_noise(rng)).collect();
        let pairs: Vec<(TaskSpec, &[f64])> = noises.iter().map(|n| (task, n.as_slice())).collect();
        let cond = self.conditions(&pairs)?;
        let head = self.generate_head(&cond)?;
        let l = self.num_layer_ids();
        let members = (0..n_models)
            .map(|m| {
                (
                    self.assemble(&head, m * l, TargetKind::Dynamics),
                    self.assemble(&head, m * l, TargetKind::Reward),
                )
            })
            .collect();
        Ok(Ensemble {
            targets: self.targets.clone(),
            norm: self.norm,
            members,
        })
    }

    /// Mean and population standard deviation over `n_models` generated
    /// targets, in physical units.
    pub fn ensemble_predict<R: Rng + ?Sized>(
        &self,
        kind: TargetKind,
        task: TaskSpec,
        input: &[f64; TARGET_INPUTS],
        n_models: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let ens = self.ensemble(task, n_models, rng)?;
        let x = ArrayView2::from_shape((1, TARGET_INPUTS), input).unwrap();
        let (mean, std) = ens.predict(kind, x)?;
        Ok((mean[0], std[0]))
    }

    pub fn capture_snapshot(&self, completed: &[TaskSpec]) -> Result<RegularizationSnapshot> {
        let mut entries = BTreeMap::new();
        for &task in completed {
            entries.insert(task.id(), self.canonical(task)?);
        }
        Ok(RegularizationSnapshot { entries })
    }

    /// Mean squared distance between the current canonical parameters of
    /// `task` and its snapshot entry.
    pub fn drift_from_snapshot(
        &self,
        task: TaskSpec,
        snapshot: &RegularizationSnapshot,
    ) -> Result<f64> {
        let entry = snapshot
            .get(task.id())
            .ok_or_else(|| Error::contract(format!("snapshot holds no task {}", task.id())))?;
        let now = self.canonical(task)?;
        let n = (now.dynamics.params.len() + now.reward.params.len()) as f64;
        Ok(now
            .flat()
            .zip(entry.flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    /// Target regression arrays for a batch of real transitions.
    pub fn training_arrays(
        &self,
        batch: &[&Transition],
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let n = batch.len();
        let mut x = Array2::zeros((n, TARGET_INPUTS));
        let mut y_dyn = Array2::zeros((n, 1));
        let mut y_rew = Array2::zeros((n, 1));
        for (b, t) in batch.iter().enumerate() {
            x.row_mut(b).assign(&Array1::from(
                target_input(&t.obs, t.setpoints, t.actions).to_vec(),
            ));
            y_dyn[[b, 0]] = self.norm.encode(TargetKind::Dynamics, t.next_obs.zone_temp);
            y_rew[[b, 0]] = self.norm.encode(TargetKind::Reward, t.reward);
        }
        (x, y_dyn, y_rew)
    }

    /// One Adam step on `MSE_dyn + MSE_rew + beta * sum_prev MSE(params, snapshot)`
    /// with one fresh noise draw for the current task.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        task: TaskSpec,
        snapshot: &RegularizationSnapshot,
        beta: f64,
        lr: f64,
        rng: &mut R,
    ) -> Result<HypernetLoss> {
        let noise = self.draw_noise(rng);
        let (loss, grads) = self.loss_and_grad(batch, task, &noise, snapshot, beta)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite hypernet loss: {loss:?}"
            )));
        }
        self.opt.step(&mut self.params, &grads, lr)?;
        if !self.params.is_finite() {
            return Err(Error::Divergence(
                "hypernet parameters became non-finite".into(),
            ));
        }
        Ok(loss)
    }

    /// Training loss at a fixed noise vector and its gradient w.r.t. the
    /// hypernet parameters. Previous tasks in `snapshot` (all ids except
    /// `task`) are generated with zero noise.
    pub fn loss_and_grad(
        &self,
        batch: &[&Transition],
        task: TaskSpec,
        noise: &[f64],
        snapshot: &RegularizationSnapshot,
        beta: f64,
    ) -> Result<(HypernetLoss, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::contract("empty hypernet batch"));
        }
        if batch.iter().any(|t| t.synthetic) {
            return Err(Error::contract("hypernet trains on real transitions only"));
        }
        let (x, y_dyn, y_rew) = self.training_arrays(batch);
        let zero = vec![0.0; self.noise_dim];
        let previous: Vec<(TaskSpec, &SnapshotEntry)> = snapshot
            .entries
            .iter()
            .filter(|(&id, _)| id != task.id())
            .map(|(&id, e)| (TaskSpec::new(id).unwrap(), e))
            .collect();
        let mut pairs: Vec<(TaskSpec, &[f64])> = vec![(task, noise)];
        pairs.extend(previous.iter().map(|(t, _)| (*t, zero.as_slice())));

        let cond = self.conditions(&pairs)?;
        let trace = diffnet::forward_trace(&self.spec, &self.params, cond.view())?;
        let head = trace.output();
        let mut d_head = Array2::zeros(head.dim());

        let mut mse = [0.0; 2];
        for (k, (kind, y)) in [(TargetKind::Dynamics, &y_dyn), (TargetKind::Reward, &y_rew)]
            .into_iter()
            .enumerate()
        {
            let spec = self.targets.spec(kind);
            let params = self.assemble(head, 0, kind);
            let t = diffnet::forward_trace(spec, &params, x.view())?;
            let (loss, d_out) = diffnet::mse_loss(t.output().view(), y.view());
            let g = t.backward(spec, &params, d_out.view())?;
            self.scatter(&mut d_head, 0, kind, &g.params, 1.0);
            mse[k] = loss;
        }

        let l = self.num_layer_ids();
        let mut regularization = 0.0;
        for (p, (_, entry)) in previous.iter().enumerate() {
            let base = (p + 1) * l;
            let dynamics = self.assemble(head, base, TargetKind::Dynamics);
            let reward = self.assemble(head, base, TargetKind::Reward);
            let n = (dynamics.len() + reward.len()) as f64;
            let diff_d: Vec<f64> = dynamics
                .iter()
                .zip(entry.dynamics.params.iter())
                .map(|(a, b)| a - b)
                .collect();
            let diff_r: Vec<f64> = reward
                .iter()
                .zip(entry.reward.params.iter())
                .map(|(a, b)| a - b)
                .collect();
            regularization += diff_d.iter().chain(&diff_r).map(|d| d * d).sum::<f64>() / n;
            if beta != 0.0 {
                self.scatter(
                    &mut d_head,
                    base,
                    TargetKind::Dynamics,
                    &diff_d,
                    beta * 2.0 / n,
                );
                self.scatter(
                    &mut d_head,
                    base,
                    TargetKind::Reward,
                    &diff_r,
                    beta * 2.0 / n,
                );
            }
        }

        let loss = HypernetLoss {
            mse_dynamics: mse[0],
            mse_reward: mse[1],
            regularization,
            total: mse[0] + mse[1] + beta * regularization,
        };
        let grads = trace.backward(&self.spec, &self.params, d_head.view())?;
        Ok((loss, grads.params))
    }

    /// Returns a copy with its parameters replaced. Used by gradient checks.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::contract("parameter count mismatch"));
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }
}

/// A batch of generated targets sharing one hypernet state.
#[derive(Clone, Debug)]
pub struct Ensemble {
    targets: TargetSpec,
    norm: Normalization,
    members: Vec<(ParamVector, ParamVector)>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Per-row ensemble mean and population std, in physical units. Members
    /// are reduced in index order.
    pub fn predict(
        &self,
        kind: TargetKind,
        inputs: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let spec = self.targets.spec(kind);
        let n = inputs.nrows();
        let mut outs = Vec::with_capacity(self.members.len());
        for (dynamics, reward) in &self.members {
            let params = match kind {
                TargetKind::Dynamics => dynamics,
                TargetKind::Reward => reward,
            };
            let y = diffnet::forward_batch(spec, params, inputs)?;
            outs.push(y.column(0).mapv(|v| self.norm.decode(kind, v)));
        }
        let m = outs.len() as f64;
        let mut mean = Array1::zeros(n);
        for o in &outs {
            mean += o;
        }
        mean /= m;
        let mut var = Array1::zeros(n);
        for o in &outs {
            var += &(o - &mean).mapv(|d| d * d);
        }
        var /= m;
        Ok((mean, var.mapv(f64::sqrt)))
    }
}

/// One-step model rollouts from real start states. The policy samples a
/// stochastic action per state; the action is snapped to the grid and
/// completed with task defaults, and the ensemble means give the next zone
/// temperature and reward. Everything else in the next observation (time,
/// forecast) is copied from the real successor.
pub fn synthetic_rollouts<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    task: TaskSpec,
    starts: &[&Transition],
    agent: &Agent,
    grid: &ActionGrid,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    if starts.is_empty() {
        return Ok(Vec::new());
    }
    let mut x = Array2::zeros((starts.len(), TARGET_INPUTS));
    let mut drafts = Vec::with_capacity(starts.len());
    for (b, s) in starts.iter().enumerate() {
        let policy_action = agent.select_action(&s.obs.features(), ActionMode::Stochastic, rng)?;
        let actions = task.apply_defaults(&grid.discretize(&policy_action))?;
        x.row_mut(b).assign(&Array1::from(
            target_input(&s.obs, s.setpoints, actions).to_vec(),
        ));
        drafts.push((policy_action, actions));
    }
    let (next_temp, _) = ensemble.predict(TargetKind::Dynamics, x.view())?;
    let (reward, _) = ensemble.predict(TargetKind::Reward, x.view())?;
    Ok(starts
        .iter()
        .zip(drafts)
        .enumerate()
        .map(|(b, (s, (policy_action, actions)))| {
            let mut next_obs = s.next_obs;
            next_obs.zone_temp = next_temp[b].clamp(MIN_ZONE_TEMP, MAX_ZONE_TEMP);
            Transition {
                obs: s.obs,
                policy_action,
                actions,
                next_obs,
                reward: reward[b].min(0.0),
                setpoints: s.setpoints,
                task_id: task.id(),
                terminal: false,
                synthetic: true,
            }
        })
        .collect())
}

/// Single-start convenience wrapper around [`synthetic_rollouts`].
pub fn synthetic_rollout<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    task: TaskSpec,
    start: &Transition,
    agent: &Agent,
    grid: &ActionGrid,
    rng: &mut R,
) -> Result<Transition> {
    Ok(synthetic_rollouts(ensemble, task, &[start], agent, grid, rng)?.remove(0))
}

/// Held-out one-step error of the zero-noise dynamics target, in °C².
pub fn dynamics_error(hypernet: &Hypernet, task: TaskSpec, data: &[&Transition]) -> Result<f64> {
    let entry = hypernet.canonical(task)?;
    let (x, _, _) = hypernet.training_arrays(data);
    let pred =
        diffnet::forward_batch(&hypernet.targets.dynamics, &entry.dynamics.params, x.view())?;
    let n = data.len().max(1) as f64;
    Ok(data
        .iter()
        .zip(pred.column(0))
        .map(|(t, &p)| {
            let d = denormalize_temp(p) - t.next_obs.zone_temp;
            d * d
        })
        .sum::<f64>()
        / n)
}
