//! Continual model-based reinforcement learning for single-zone thermal
//! control.
//!
//! A soft actor-critic agent is trained Dyna-style against a hypernetwork
//! world model over a sequence of three tasks that differ in which actuators
//! the agent controls. The hypernetwork persists across tasks and is
//! regularized toward frozen snapshots of earlier tasks.
//!
//! Modules, bottom-up:
//!
//! - [`diffnet`]: dense MLPs, exact gradients, Adam
//! - [`envsim`]: RC thermal zone surrogate, schedules, reward, tasks
//! - [`sac`]: soft actor-critic over a discretized action grid
//! - [`hyperworld`]: hypernetwork-generated dynamics and reward models
//! - [`dyna`]: replay buffers and the continual training loop
//! - [`config`], [`metrics`], [`checkpoint`], [`plot`], [`experiment`]:
//!   experiment plumbing used by the CLI

pub mod checkpoint;
pub mod config;
pub mod diffnet;
pub mod dyna;
pub mod envsim;
pub mod error;
pub mod experiment;
pub mod hyperworld;
pub mod metrics;
pub mod plot;
pub mod sac;
pub mod seeding;

pub use diffnet::{Activation, AdamState, NetSpec, ParamVector};
pub use dyna::{BufferSet, ContinualRun, StageReport, Variant};
pub use envsim::{Observation, Scenario, TaskSpec, Transition, ZoneEnv};
pub use error::{Error, Result};
pub use hyperworld::{GeneratedTarget, Hypernet, RegularizationSnapshot};
pub use sac::{ActionGrid, Agent};
