//! Single-zone resistance-capacitance thermal surrogate of a hydronic
//! heat-pump building.
//!
//! The zone is one thermal mass `C` coupled to outdoor air through a
//! conductance `UA` and heated by a modulated heat pump:
//!
//! ```text
//! T' = T + (dt / C) * (UA * (T_out - T) + Q_max * a1 * (0.5 + 0.5 * a2) * a3)
//! ```
//!
//! `a1` is the compressor modulation, `a2` the evaporator fan and `a3` the
//! emission circuit pump, all in `[0, 1]`. Time advances in fixed
//! 15-minute steps; an episode is 14 days.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::splitmix64;

pub const STEP_SECONDS: f64 = 900.0;
pub const STEPS_PER_EPISODE: usize = 1344;
pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const INITIAL_ZONE_TEMP: f64 = 20.0;
pub const MIN_ZONE_TEMP: f64 = -20.0;
pub const MAX_ZONE_TEMP: f64 = 60.0;
pub const FORECAST_STEPS: usize = 4;
/// Value used for the fan and pump when the policy does not control them.
pub const DEFAULT_AUX_ACTION: f64 = 1.0;

/// Temperatures are fed to networks as `(T - 20) / 10`.
pub const TEMP_CENTER: f64 = 20.0;
pub const TEMP_SCALE: f64 = 10.0;

pub fn normalize_temp(t: f64) -> f64 {
    (t - TEMP_CENTER) / TEMP_SCALE
}

pub fn denormalize_temp(x: f64) -> f64 {
    x * TEMP_SCALE + TEMP_CENTER
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    JanuaryLike,
    AprilLike,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::JanuaryLike, Scenario::AprilLike];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::JanuaryLike => "january_like",
            Scenario::AprilLike => "april_like",
        }
    }

    /// `(mean, daily amplitude)` of outdoor dry-bulb in °C.
    pub fn climate(self) -> (f64, f64) {
        match self {
            Scenario::JanuaryLike => (-2.0, 4.0),
            Scenario::AprilLike => (10.0, 6.0),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "january_like" => Ok(Scenario::JanuaryLike),
            "april_like" => Ok(Scenario::AprilLike),
            other => Err(Error::contract(format!(
                "unknown scenario {other:?} (expected january_like or april_like)"
            ))),
        }
    }
}

/// Which of the three actuators the policy drives in a task.
///
/// Tasks 1 and 3 control only the heat-pump modulation; task 2 controls all
/// three actuators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TaskSpec {
    task_id: u8,
}

impl TryFrom<u8> for TaskSpec {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        TaskSpec::new(id)
    }
}

impl From<TaskSpec> for u8 {
    fn from(t: TaskSpec) -> u8 {
        t.task_id
    }
}

impl TaskSpec {
    pub const ALL: [u8; 3] = [1, 2, 3];

    pub fn new(task_id: u8) -> Result<Self> {
        if !(1..=3).contains(&task_id) {
            return Err(Error::contract(format!("task id {task_id} outside 1..=3")));
        }
        Ok(Self { task_id })
    }

    pub fn id(self) -> u8 {
        self.task_id
    }

    /// Indices (0-based) of the actuators the policy controls.
    pub fn controlled(self) -> &'static [usize] {
        match self.task_id {
            2 => &[0, 1, 2],
            _ => &[0],
        }
    }

    pub fn action_dim(self) -> usize {
        self.controlled().len()
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.task_id as usize - 1] = 1.0;
        v
    }

    /// Completes a policy action into the full actuator vector.
    pub fn apply_defaults(self, policy_actions: &[f64]) -> Result<[f64; 3]> {
        let controlled = self.controlled();
        if policy_actions.len() != controlled.len() {
            return Err(Error::contract(format!(
                "task {} expects {} policy actions, got {}",
                self.task_id,
                controlled.len(),
                policy_actions.len()
            )));
        }
        let mut full = [DEFAULT_AUX_ACTION; 3];
        for (&slot, &a) in controlled.iter().zip(policy_actions) {
            full[slot] = a;
        }
        Ok(full)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setpoints {
    pub heating: f64,
    pub cooling: f64,
}

/// Occupied 07:00 (inclusive) to 22:00 (exclusive).
pub fn setpoint_schedule(sim_time: f64) -> Setpoints {
    let hour = sim_time.rem_euclid(SECONDS_PER_DAY) / 3600.0;
    if (7.0..22.0).contains(&hour) {
        Setpoints {
            heating: 21.0,
            cooling: 24.0,
        }
    } else {
        Setpoints {
            heating: 15.0,
            cooling: 30.0,
        }
    }
}

/// Negative setpoint-band violation over one step, in Kelvin-hours.
pub fn discomfort_reward(zone_temp: f64, setpoints: Setpoints) -> f64 {
    let under = (setpoints.heating - zone_temp).max(0.0);
    let over = (zone_temp - setpoints.cooling).max(0.0);
    -(under + over) * (STEP_SECONDS / 3600.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcParams {
    /// Envelope conductance, W/K.
    pub ua: f64,
    /// Thermal capacitance, J/K.
    pub capacitance: f64,
    /// Heat-pump output at full modulation, W.
    pub q_max: f64,
}

impl Default for RcParams {
    fn default() -> Self {
        Self {
            ua: 240.0,
            capacitance: 12e6,
            q_max: 9000.0,
        }
    }
}

impl RcParams {
    pub fn heat_input(&self, actions: [f64; 3]) -> f64 {
        self.q_max * actions[0] * (0.5 + 0.5 * actions[1]) * actions[2]
    }

    pub fn next_temp(&self, zone_temp: f64, outdoor: f64, actions: [f64; 3]) -> f64 {
        let flux = self.ua * (outdoor - zone_temp) + self.heat_input(actions);
        let t = zone_temp + (STEP_SECONDS / self.capacitance) * flux;
        t.clamp(MIN_ZONE_TEMP, MAX_ZONE_TEMP)
    }
}

/// Outdoor temperature table loaded from `time_s,temp_c` rows, linearly
/// interpolated and held constant past either end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherTable {
    times: Vec<f64>,
    temps: Vec<f64>,
}

impl WeatherTable {
    pub fn new(mut rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("weather table is empty"));
        }
        if rows.iter().any(|(t, c)| !t.is_finite() || !c.is_finite()) {
            return Err(Error::contract("weather table has non-finite values"));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (times, temps) = rows.into_iter().unzip();
        Ok(Self { times, temps })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::contract(format!("weather line {line}: {e}")))?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::contract(format!("weather line {line}: missing column")))?
                    .parse()
                    .map_err(|e| Error::contract(format!("weather line {line}: {e}")))
            };
            rows.push((field(0)?, field(1)?));
        }
        Self::new(rows)
    }

    pub fn temp_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return self.temps[0];
        }
        if i == self.times.len() {
            return self.temps[i - 1];
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        self.temps[i - 1] * (1.0 - w) + self.temps[i] * w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeatherSource {
    /// Mean + daily sinusoid + Gaussian noise keyed by step index.
    Synthetic {
        noise_sigma: f64,
    },
    Table(WeatherTable),
}

impl Default for WeatherSource {
    fn default() -> Self {
        WeatherSource::Synthetic { noise_sigma: 0.5 }
    }
}

/// Synthetic dry-bulb temperature. The daily sinusoid crosses the mean at
/// 09:00 and peaks at 15:00. Noise for a given step depends only on
/// `(seed, step)`, so forecasts are exact.
pub fn outdoor_temp(scenario: Scenario, sim_time: f64, seed: u64, noise_sigma: f64) -> f64 {
    let (mean, amp) = scenario.climate();
    let phase = TAU * (sim_time - 9.0 * 3600.0) / SECONDS_PER_DAY;
    let mut t = mean + amp * phase.sin();
    if noise_sigma > 0.0 {
        let step = (sim_time / STEP_SECONDS).floor() as i64 as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(step)));
        let z: f64 = StandardNormal.sample(&mut rng);
        t += noise_sigma * z;
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time_sin: f64,
    pub time_cos: f64,
    pub zone_temp: f64,
    /// Dry-bulb °C at the next four steps.
    pub forecast: [f64; FORECAST_STEPS],
}

pub const OBS_FEATURES: usize = 3 + FORECAST_STEPS;

impl Observation {
    /// Network-ready encoding: time-of-day angle, then normalized zone and
    /// forecast temperatures.
    pub fn features(&self) -> [f64; OBS_FEATURES] {
        let mut f = [0.0; OBS_FEATURES];
        f[0] = self.time_sin;
        f[1] = self.time_cos;
        f[2] = normalize_temp(self.zone_temp);
        for (dst, &src) in f[3..].iter_mut().zip(&self.forecast) {
            *dst = normalize_temp(src);
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub sim_time: f64,
    pub zone_temp: f64,
    pub scenario: Scenario,
    pub weather_seed: u64,
    pub step_index: usize,
}

/// One experience tuple. `actions` always holds all three actuators after
/// discretization and defaults; `policy_action` is the agent's continuous
/// output for the controlled slots only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub policy_action: Vec<f64>,
    pub actions: [f64; 3],
    pub next_obs: Observation,
    pub reward: f64,
    pub setpoints: Setpoints,
    pub task_id: u8,
    pub terminal: bool,
    pub synthetic: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: EnvState,
    pub obs: Observation,
    pub reward: f64,
    /// Setpoints in force during the step; the reward is scored against them.
    pub setpoints: Setpoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneEnv {
    pub rc: RcParams,
    pub weather: WeatherSource,
    pub episode_steps: usize,
}

impl Default for ZoneEnv {
    fn default() -> Self {
        Self {
            rc: RcParams::default(),
            weather: WeatherSource::default(),
            episode_steps: STEPS_PER_EPISODE,
        }
    }
}

impl ZoneEnv {
    pub fn outdoor_at(&self, state: &EnvState, sim_time: f64) -> f64 {
        match &self.weather {
            WeatherSource::Synthetic { noise_sigma } => {
                outdoor_temp(state.scenario, sim_time, state.weather_seed, *noise_sigma)
            }
            WeatherSource::Table(table) => table.temp_at(sim_time),
        }
    }

    pub fn reset(&self, scenario: Scenario, seed: u64) -> (EnvState, Observation) {
        let state = EnvState {
            sim_time: 0.0,
            zone_temp: INITIAL_ZONE_TEMP,
            scenario,
            weather_seed: seed,
            step_index: 0,
        };
        (state, self.observe(&state))
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        let angle = TAU * state.sim_time.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_DAY;
        let mut forecast = [0.0; FORECAST_STEPS];
        for (k, f) in forecast.iter_mut().enumerate() {
            *f = self.outdoor_at(state, state.sim_time + (k + 1) as f64 * STEP_SECONDS);
        }
        Observation {
            time_sin: angle.sin(),
            time_cos: angle.cos(),
            zone_temp: state.zone_temp,
            forecast,
        }
    }

    pub fn is_done(&self, state: &EnvState) -> bool {
        state.step_index >= self.episode_steps
    }

    pub fn step(&self, state: &EnvState, actions: [f64; 3]) -> Result<StepOutcome> {
        if self.is_done(state) {
            return Err(Error::EpisodeExhausted(self.episode_steps));
        }
        if actions.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::contract(format!(
                "actions {actions:?} outside [0, 1]"
            )));
        }
        let outdoor = self.outdoor_at(state, state.sim_time);
        let setpoints = setpoint_schedule(state.sim_time);
        let zone_temp = self.rc.next_temp(state.zone_temp, outdoor, actions);
        let next = EnvState {
            sim_time: state.sim_time + STEP_SECONDS,
            zone_temp,
            step_index: state.step_index + 1,
            ..*state
        };
        Ok(StepOutcome {
            obs: self.observe(&next),
            reward: discomfort_reward(zone_temp, setpoints),
            setpoints,
            state: next,
        })
    }
}
