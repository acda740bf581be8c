//! Simulation and training library for proactive failure recovery of
//! virtual network functions.

pub mod config;
pub mod env;
pub mod error;
pub mod failure;
pub mod metrics;
pub mod monitoring;
pub mod net;
pub mod nn;
pub mod rng;
pub mod train;

pub use config::{AgentConfig, AgentKind, EnvConfig, LayerLayout, RunConfig};
pub use env::{RecoveryEnv, SlotOutcome, VnfAction};
pub use error::{Error, Result};
