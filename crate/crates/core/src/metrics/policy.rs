//! Policies that drive a batch of environments in lockstep.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{RecoveryEnv, VnfAction};
use crate::error::Result;
use crate::failure::HealthKind;
use crate::nn::{to_actions, DropoutMode, PolicyModel, RecurrentState};
use crate::rng::SimRng;

pub trait Policy {
    /// Called before the first slot of a batch of episodes.
    fn begin(&mut self, batch: usize) -> Result<()>;

    /// One action vector per environment for the current slot.
    fn act(&mut self, envs: &[RecoveryEnv], rngs: &mut [SimRng]) -> Result<Vec<Vec<VnfAction>>>;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    /// Reads true health; only for verification.
    Oracle,
    /// Recovers only once a critical state is reported.
    Reactive,
}

impl std::str::FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(Self::Random),
            "oracle" => Ok(Self::Oracle),
            "reactive" => Ok(Self::Reactive),
            other => Err(format!("unknown baseline policy `{other}` (random, oracle, reactive)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind) -> Self {
        Self { kind }
    }

    fn oracle(env: &RecoveryEnv) -> Vec<VnfAction> {
        env.true_health()
            .iter()
            .enumerate()
            .map(|(v, h)| match (h.kind, env.has_backup(v)) {
                (HealthKind::Normal, true) => VnfAction::Br,
                (HealthKind::Normal, false) => VnfAction::NoOp,
                (HealthKind::Warning, _) => VnfAction::Bp,
                (HealthKind::Critical, true) => VnfAction::Ss,
                (HealthKind::Critical, false) => VnfAction::Bp,
            })
            .collect()
    }

    fn reactive(env: &RecoveryEnv) -> Vec<VnfAction> {
        env.tracker()
            .last_reported()
            .iter()
            .map(|r| match r {
                Some(HealthKind::Critical) => VnfAction::Bp,
                _ => VnfAction::NoOp,
            })
            .collect()
    }
}

impl Policy for BaselinePolicy {
    fn begin(&mut self, _batch: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, envs: &[RecoveryEnv], rngs: &mut [SimRng]) -> Result<Vec<Vec<VnfAction>>> {
        Ok(envs
            .iter()
            .zip(rngs.iter_mut())
            .map(|(env, rng)| match self.kind {
                BaselineKind::Random => (0..env.vnf_count())
                    .map(|_| VnfAction::ALL[rng.random_range(0..VnfAction::COUNT)])
                    .collect(),
                BaselineKind::Oracle => Self::oracle(env),
                BaselineKind::Reactive => Self::reactive(env),
            })
            .collect())
    }

    fn name(&self) -> String {
        format!("{:?}", self.kind).to_lowercase()
    }
}

/// A trained actor. Dropout is off; actions are the per-head mode unless
/// `stochastic` is set.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub model: PolicyModel,
    pub stochastic: bool,
    state: Option<RecurrentState>,
}

impl NeuralPolicy {
    pub fn new(model: PolicyModel, stochastic: bool) -> Self {
        Self {
            model,
            stochastic,
            state: None,
        }
    }
}

pub fn observation_matrix(envs: &[RecoveryEnv]) -> Array2<f64> {
    let width = envs.first().map_or(0, RecoveryEnv::observation_width);
    let mut x = Array2::zeros((envs.len(), width));
    for (mut row, env) in x.rows_mut().into_iter().zip(envs) {
        row.assign(&ndarray::ArrayView1::from(&env.observation()));
    }
    x
}

impl Policy for NeuralPolicy {
    fn begin(&mut self, batch: usize) -> Result<()> {
        self.state = Some(self.model.actor.zero_state(batch));
        Ok(())
    }

    fn act(&mut self, envs: &[RecoveryEnv], rngs: &mut [SimRng]) -> Result<Vec<Vec<VnfAction>>> {
        let x = observation_matrix(envs);
        let (dist, _, _, st) = self.model.actor_forward(
            &self.model.params,
            x.view(),
            1,
            envs.len(),
            self.state.as_ref(),
            DropoutMode::Off,
        )?;
        self.state = Some(st);
        Ok((0..envs.len())
            .map(|b| {
                let idx = if self.stochastic {
                    dist.sample(b, &mut rngs[b])
                } else {
                    dist.mode(b)
                };
                to_actions(&idx)
            })
            .collect())
    }

    fn name(&self) -> String {
        self.model.spec.kind.label().to_string()
    }
}
