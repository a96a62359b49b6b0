//! Soft actor-critic with tanh-squashed Gaussian actions on `[0, 1]`.
//!
//! The actor maps observation features to a mean and log-std per action;
//! actor and critics are ReLU MLPs.
//! A sample `u = mean + std * eps` is squashed to `y = tanh(u)` and mapped to
//! `a = (y + 1) / 2`. Critics see `(features, a)` with the continuous `a`;
//! the environment only ever sees `a` snapped onto an [`ActionGrid`].
//!
//! Losses over a batch of size `B`:
//!
//! ```text
//! y        = r + gamma * (1 - done) * (min_k Q'_k(s', a') - alpha * log pi(a'|s'))
//! L_Qk     = mean (Q_k(s, a) - y)^2
//! L_pi     = mean (alpha * log pi(a~|s) - min_k Q_k(s, a~))
//! L_alpha  = -mean log_alpha * (log pi(a~|s) + target_entropy)
//! ```
//!
//! with `a'`, `a~` reparameterized samples. The actor gradient is assembled
//! by hand from the critics' input gradients and the squash Jacobian.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{self, Activation, AdamState, NetSpec, ParamVector};
use crate::envsim::{Transition, OBS_FEATURES};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionGrid {
    levels: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ActionGrid {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        ActionGrid::new(levels)
    }
}

impl From<ActionGrid> for Vec<f64> {
    fn from(g: ActionGrid) -> Vec<f64> {
        g.levels
    }
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self::uniform(5)
    }
}

impl ActionGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::contract("action grid needs at least one level"));
        }
        if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::contract("action grid levels must lie in [0, 1]"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "action grid levels must be strictly increasing",
            ));
        }
        Ok(Self { levels })
    }

    /// `n` evenly spaced levels from 0 to 1.
    pub fn uniform(n: usize) -> Self {
        let levels = match n {
            0 | 1 => vec![0.0],
            _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        };
        Self { levels }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Nearest level; ties go to the lower one.
    pub fn snap(&self, x: f64) -> f64 {
        let mut best = self.levels[0];
        let mut best_dist = (x - best).abs();
        for &l in &self.levels[1..] {
            let d = (x - l).abs();
            if d < best_dist {
                best = l;
                best_dist = d;
            }
        }
        best
    }

    pub fn discretize(&self, action: &[f64]) -> Vec<f64> {
        action.iter().map(|&a| self.snap(a)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// Step sizes and coefficients for [`Agent::update`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacSettings {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_entropy: f64,
}

impl Default for SacSettings {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr_actor: 0.00005,
            lr_critic: 0.0002,
            lr_entropy: 0.0002,
        }
    }
}

/// Actor updates happen on even step indices.
pub fn policy_update_gate(step_index: u64, every: u64) -> bool {
    step_index.is_multiple_of(every.max(1))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub entropy_coeff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    obs_dim: usize,
    action_dim: usize,
    actor_spec: NetSpec,
    critic_spec: NetSpec,
    actor: ParamVector,
    critic1: ParamVector,
    critic2: ParamVector,
    target_critic1: ParamVector,
    target_critic2: ParamVector,
    log_entropy_coeff: f64,
    target_entropy: f64,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    entropy_opt: AdamState,
}

/// Batched reparameterized draw from the policy.
struct PolicySample {
    trace: diffnet::Trace,
    std: Array2<f64>,
    /// Whether log-std sits strictly inside its clamp (gradient passes).
    std_free: Array2<bool>,
    eps: Array2<f64>,
    squashed: Array2<f64>,
    actions: Array2<f64>,
    log_prob: Array1<f64>,
}

impl Agent {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        initial_entropy_coeff: f64,
        seed: u64,
    ) -> Result<Self> {
        if obs_dim == 0 || action_dim == 0 {
            return Err(Error::contract(
                "observation and action dims must be positive",
            ));
        }
        if !(initial_entropy_coeff > 0.0 && initial_entropy_coeff.is_finite()) {
            return Err(Error::contract(
                "initial entropy coefficient must be positive",
            ));
        }
        let actor_spec = NetSpec::mlp(
            obs_dim,
            hidden,
            2 * action_dim,
            Activation::Relu,
            Activation::Identity,
        )?;
        let critic_spec = NetSpec::mlp(
            obs_dim + action_dim,
            hidden,
            1,
            Activation::Relu,
            Activation::Identity,
        )?;
        let actor = diffnet::init_params(&actor_spec, derive_seed(seed, "actor"));
        let critic1 = diffnet::init_params(&critic_spec, derive_seed(seed, "critic1"));
        let critic2 = diffnet::init_params(&critic_spec, derive_seed(seed, "critic2"));
        Ok(Self {
            obs_dim,
            action_dim,
            actor_opt: AdamState::new(actor.len()),
            critic1_opt: AdamState::new(critic1.len()),
            critic2_opt: AdamState::new(critic2.len()),
            entropy_opt: AdamState::new(1),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor_spec,
            critic_spec,
            actor,
            critic1,
            critic2,
            log_entropy_coeff: initial_entropy_coeff.ln(),
            target_entropy: -(action_dim as f64),
        })
    }

    /// Agent over the standard observation encoding.
    pub fn for_task(
        action_dim: usize,
        hidden: &[usize],
        initial_entropy_coeff: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            OBS_FEATURES,
            action_dim,
            hidden,
            initial_entropy_coeff,
            seed,
        )
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor_spec(&self) -> &NetSpec {
        &self.actor_spec
    }

    pub fn critic_spec(&self) -> &NetSpec {
        &self.critic_spec
    }

    pub fn actor_params(&self) -> &ParamVector {
        &self.actor
    }

    pub fn critic_params(&self) -> [&ParamVector; 2] {
        [&self.critic1, &self.critic2]
    }

    pub fn target_critic_params(&self) -> [&ParamVector; 2] {
        [&self.target_critic1, &self.target_critic2]
    }

    /// Copy with the actor parameters replaced. Used by gradient checks.
    pub fn with_actor_params(&self, params: ParamVector) -> Result<Self> {
        if params.len() != self.actor.len() {
            return Err(Error::contract("actor parameter count mismatch"));
        }
        Ok(Self {
            actor: params,
            ..self.clone()
        })
    }

    pub fn entropy_coeff(&self) -> f64 {
        self.log_entropy_coeff.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    /// Action in `[0, 1]^action_dim` for one observation feature vector.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if features.len() != self.obs_dim {
            return Err(Error::contract(format!(
                "observation has {} features, agent expects {}",
                features.len(),
                self.obs_dim
            )));
        }
        let out = diffnet::forward(&self.actor_spec, &self.actor, features)?;
        let d = self.action_dim;
        Ok((0..d)
            .map(|i| {
                let mean = out[i];
                let u = match mode {
                    ActionMode::Deterministic => mean,
                    ActionMode::Stochastic => {
                        let std = out[d + i].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                        let e: f64 = rng.sample(StandardNormal);
                        mean + std * e
                    }
                };
                0.5 * (u.tanh() + 1.0)
            })
            .collect())
    }

    fn sample_policy(&self, obs: ArrayView2<f64>, eps: Array2<f64>) -> Result<PolicySample> {
        let d = self.action_dim;
        let trace = diffnet::forward_trace(&self.actor_spec, &self.actor, obs)?;
        let out = trace.output();
        let mean = out.slice(s![.., ..d]);
        let raw_log_std = out.slice(s![.., d..]);
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let std_free = raw_log_std.mapv(|v| v > LOG_STD_MIN && v < LOG_STD_MAX);
        let std = log_std.mapv(f64::exp);
        let u = &mean + &(&std * &eps);
        let squashed = u.mapv(f64::tanh);
        let actions = squashed.mapv(|y| 0.5 * (y + 1.0));
        let mut log_prob = Array1::zeros(obs.nrows());
        Zip::from(&mut log_prob)
            .and(eps.rows())
            .and(log_std.rows())
            .and(squashed.rows())
            .for_each(|lp, e, ls, y| {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += -0.5 * e[i] * e[i]
                        - ls[i]
                        - HALF_LN_2PI
                        - (1.0 - y[i] * y[i] + SQUASH_EPS).ln()
                        + std::f64::consts::LN_2;
                }
                *lp = acc;
            });
        Ok(PolicySample {
            trace,
            std,
            std_free,
            eps,
            squashed,
            actions,
            log_prob,
        })
    }

    fn draw_eps<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, self.action_dim), || rng.sample(StandardNormal))
    }

    fn critic_input(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[obs, actions]).unwrap()
    }

    /// Clipped double-Q soft Bellman targets.
    fn td_targets(&self, batch: &Batch, next_eps: Array2<f64>, gamma: f64) -> Result<Array1<f64>> {
        let next = self.sample_policy(batch.next_obs.view(), next_eps)?;
        let input = Self::critic_input(batch.next_obs.view(), next.actions.view());
        let q1 = diffnet::forward_batch(&self.critic_spec, &self.target_critic1, input.view())?;
        let q2 = diffnet::forward_batch(&self.critic_spec, &self.target_critic2, input.view())?;
        let alpha = self.entropy_coeff();
        let mut y = Array1::zeros(batch.len());
        for b in 0..batch.len() {
            let soft_v = q1[[b, 0]].min(q2[[b, 0]]) - alpha * next.log_prob[b];
            y[b] = batch.reward[b] + gamma * (1.0 - batch.done[b]) * soft_v;
        }
        Ok(y)
    }

    /// Actor loss and its gradient for fixed reparameterization noise
    /// `eps` (one row per observation), plus the per-row log-probabilities.
    pub fn actor_loss_grad(
        &self,
        obs: ArrayView2<f64>,
        eps: Array2<f64>,
    ) -> Result<(f64, ParamVector, Array1<f64>)> {
        let d = self.action_dim;
        let n = obs.nrows() as f64;
        let alpha = self.entropy_coeff();
        let sample = self.sample_policy(obs, eps)?;
        let input = Self::critic_input(obs, sample.actions.view());
        let t1 = diffnet::forward_trace(&self.critic_spec, &self.critic1, input.view())?;
        let t2 = diffnet::forward_trace(&self.critic_spec, &self.critic2, input.view())?;
        let (q1, q2) = (t1.output(), t2.output());
        let pick_first = Array2::from_shape_fn((obs.nrows(), 1), |(b, _)| q1[[b, 0]] <= q2[[b, 0]]);
        let mask1 = pick_first.mapv(|p| if p { 1.0 } else { 0.0 });
        let mask2 = pick_first.mapv(|p| if p { 0.0 } else { 1.0 });
        let g1 = t1
            .backward(&self.critic_spec, &self.critic1, mask1.view())?
            .input;
        let g2 = t2
            .backward(&self.critic_spec, &self.critic2, mask2.view())?
            .input;
        // dQmin/da, one column per action
        let dq_da = &g1.slice(s![.., self.obs_dim..]) + &g2.slice(s![.., self.obs_dim..]);

        let mut loss = 0.0;
        let mut d_out = Array2::zeros((obs.nrows(), 2 * d));
        for b in 0..obs.nrows() {
            let q_min = q1[[b, 0]].min(q2[[b, 0]]);
            loss += alpha * sample.log_prob[b] - q_min;
            for i in 0..d {
                let y = sample.squashed[[b, i]];
                let one_m_y2 = 1.0 - y * y;
                let dlogp_du = 2.0 * y * one_m_y2 / (one_m_y2 + SQUASH_EPS);
                let dq_du = dq_da[[b, i]] * 0.5 * one_m_y2;
                let du = alpha * dlogp_du - dq_du;
                d_out[[b, i]] = du / n;
                if sample.std_free[[b, i]] {
                    let du_dls = sample.std[[b, i]] * sample.eps[[b, i]];
                    d_out[[b, d + i]] = (-alpha + du * du_dls) / n;
                }
            }
        }
        let grads = sample
            .trace
            .backward(&self.actor_spec, &self.actor, d_out.view())?;
        Ok((loss / n, grads.params, sample.log_prob))
    }

    /// One full SAC update on `batch`.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        settings: &SacSettings,
        rng: &mut R,
    ) -> Result<SacLosses> {
        let batch = Batch::from_transitions(batch, self.action_dim)?;
        let next_eps = self.draw_eps(batch.len(), rng);
        let y = self.td_targets(&batch, next_eps, settings.gamma)?;
        let y = y.insert_axis(Axis(1));
        let input = Self::critic_input(batch.obs.view(), batch.actions.view());

        let (critic1_loss, g1) =
            diffnet::mse_gradient(&self.critic_spec, &self.critic1, input.view(), y.view())?;
        let (critic2_loss, g2) =
            diffnet::mse_gradient(&self.critic_spec, &self.critic2, input.view(), y.view())?;
        self.critic1_opt
            .step(&mut self.critic1, &g1, settings.lr_critic)?;
        self.critic2_opt
            .step(&mut self.critic2, &g2, settings.lr_critic)?;

        let eps = self.draw_eps(batch.len(), rng);
        let (actor_loss, ga, log_prob) = self.actor_loss_grad(batch.obs.view(), eps)?;
        self.actor_opt
            .step(&mut self.actor, &ga, settings.lr_actor)?;

        let mean_excess = log_prob.mean().unwrap() + self.target_entropy;
        let entropy_loss = -self.log_entropy_coeff * mean_excess;
        let mut log_alpha = [self.log_entropy_coeff];
        self.entropy_opt
            .step(&mut log_alpha, &[-mean_excess], settings.lr_entropy)?;
        self.log_entropy_coeff = log_alpha[0];

        soft_update(&mut self.target_critic1, &self.critic1, settings.tau);
        soft_update(&mut self.target_critic2, &self.critic2, settings.tau);

        let losses = SacLosses {
            critic1: critic1_loss,
            critic2: critic2_loss,
            actor: actor_loss,
            entropy_coeff: entropy_loss,
        };
        let finite = [
            losses.critic1,
            losses.critic2,
            losses.actor,
            losses.entropy_coeff,
            self.log_entropy_coeff,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite
            || !self.actor.is_finite()
            || !self.critic1.is_finite()
            || !self.critic2.is_finite()
        {
            return Err(Error::Divergence(format!(
                "non-finite SAC update: {losses:?}"
            )));
        }
        Ok(losses)
    }
}

fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, &o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

struct Batch {
    obs: Array2<f64>,
    actions: Array2<f64>,
    reward: Array1<f64>,
    next_obs: Array2<f64>,
    done: Array1<f64>,
}

impl Batch {
    fn from_transitions(batch: &[&Transition], action_dim: usize) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::contract("empty SAC batch"));
        }
        let n = batch.len();
        let mut obs = Array2::zeros((n, OBS_FEATURES));
        let mut next_obs = Array2::zeros((n, OBS_FEATURES));
        let mut actions = Array2::zeros((n, action_dim));
        let mut reward = Array1::zeros(n);
        let mut done = Array1::zeros(n);
        for (b, t) in batch.iter().enumerate() {
            if t.policy_action.len() != action_dim {
                return Err(Error::contract(format!(
                    "transition carries {} policy actions, agent controls {}",
                    t.policy_action.len(),
                    action_dim
                )));
            }
            obs.row_mut(b)
                .assign(&Array1::from(t.obs.features().to_vec()));
            next_obs
                .row_mut(b)
                .assign(&Array1::from(t.next_obs.features().to_vec()));
            actions
                .row_mut(b)
                .assign(&Array1::from(t.policy_action.clone()));
            reward[b] = t.reward;
            done[b] = if t.terminal { 1.0 } else { 0.0 };
        }
        Ok(Self {
            obs,
            actions,
            reward,
            next_obs,
            done,
        })
    }

    fn len(&self) -> usize {
        self.reward.len()
    }
}
