//! Policy and value networks with hand-written backpropagation.

pub mod adam;
pub mod dist;
pub mod tower;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{AgentKind, LayerLayout};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub use adam::{clip_global_norm, Adam};
pub use dist::{to_actions, ActionDistribution, ACTIONS};
pub use tower::{DropoutMode, LayerShape, RecurrentState, Tower, TowerCache, TowerSpec};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const POLICY_HEAD_SCALE: f64 = 0.01;

/// Shape of an agent's actor and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: AgentKind,
    pub input_width: usize,
    pub vnf_count: usize,
    pub layout: LayerLayout,
    /// PPO critic predicts one value per VNF instead of one per slot.
    #[serde(default)]
    pub per_vnf_values: bool,
}

impl ArchitectureSpec {
    pub fn new(kind: AgentKind, input_width: usize, vnf_count: usize, layout: LayerLayout) -> Self {
        Self {
            kind,
            input_width,
            vnf_count,
            layout,
            per_vnf_values: false,
        }
    }

    pub fn with_per_vnf_values(mut self, on: bool) -> Self {
        self.per_vnf_values = on;
        self
    }

    /// Value outputs of a PPO critic.
    pub fn value_heads(&self) -> usize {
        if self.per_vnf_values {
            self.vnf_count
        } else {
            1
        }
    }

    fn tower(&self, output: usize, head_scale: f64) -> TowerSpec {
        TowerSpec {
            input: self.input_width,
            pre: self.layout.pre.clone(),
            lstm: self.layout.lstm.clone(),
            post: self.layout.post.clone(),
            output,
            dropout: self.layout.dropout.clone(),
            activation: self.layout.activation,
            head_scale,
        }
    }

    /// Actor: V heads of four logits.
    pub fn actor(&self) -> TowerSpec {
        self.tower(ACTIONS * self.vnf_count, POLICY_HEAD_SCALE)
    }

    /// Critic: scalar or per-VNF values for PPO, twin per-head Q tables for SAC.
    pub fn critic(&self) -> TowerSpec {
        match self.kind {
            AgentKind::LstmSac => self.tower(2 * ACTIONS * self.vnf_count, 1.0),
            AgentKind::LstmPpo | AgentKind::NlstmPpo => self.tower(self.value_heads(), 1.0),
        }
    }

    pub fn param_count(&self) -> usize {
        self.actor().param_count() + self.critic().param_count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vnf_count == 0 {
            return Err(Error::Config("architecture: vnf_count must be positive".into()));
        }
        self.actor().validate()?;
        self.critic().validate()
    }
}

/// Actor and critic towers sharing one flat parameter vector (actor first).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub spec: ArchitectureSpec,
    pub actor: Tower,
    pub critic: Tower,
    pub params: Vec<f64>,
    /// Target copy of the critic parameters (SAC only).
    pub target_critic: Option<Vec<f64>>,
    /// Log entropy temperature (SAC only).
    pub log_alpha: f64,
    /// Incremented on every parameter update.
    pub version: u64,
}

impl PolicyModel {
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let actor = Tower::new(spec.actor(), 0);
        let critic = Tower::new(spec.critic(), actor.param_count());
        let mut params = vec![0.0; actor.param_count() + critic.param_count()];
        actor.init(&mut params, &mut seeded(derive_seed(seed, &[1])));
        critic.init(&mut params, &mut seeded(derive_seed(seed, &[2])));
        let target_critic = (spec.kind == AgentKind::LstmSac).then(|| params[critic.range()].to_vec());
        Ok(Self {
            spec,
            actor,
            critic,
            params,
            target_critic,
            log_alpha: 0.0,
            version: 0,
        })
    }

    pub fn vnf_count(&self) -> usize {
        self.spec.vnf_count
    }

    /// The critic tower laid out at offset zero, for evaluating the target copy.
    pub fn detached_critic(&self) -> Tower {
        Tower::new(self.spec.critic(), 0)
    }

    pub fn actor_params(&self) -> &[f64] {
        &self.params[self.actor.range()]
    }

    pub fn critic_params(&self) -> &[f64] {
        &self.params[self.critic.range()]
    }

    /// Actor distribution for `steps x batch` rows plus the cache and final state.
    pub fn actor_forward(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
        steps: usize,
        batch: usize,
        state: Option<&RecurrentState>,
        dropout: DropoutMode,
    ) -> Result<(ActionDistribution, Array2<f64>, TowerCache, RecurrentState)> {
        let (logits, cache, st) = self.actor.forward(params, x, steps, batch, state, dropout)?;
        Ok((
            ActionDistribution::from_logits(logits.view(), self.spec.vnf_count),
            logits,
            cache,
            st,
        ))
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameters".into(),
                detail: format!("index {i} of {}", self.params.len()),
            });
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, observation_schema_hash: &str) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: self.spec.clone(),
            observation_schema_hash: observation_schema_hash.to_string(),
            params: self.params.clone(),
            target_critic: self.target_critic.clone(),
            log_alpha: self.log_alpha,
            version: self.version,
        }
    }

    /// Rebuilds a model, refusing a checkpoint made for another observation layout.
    pub fn from_checkpoint(ckpt: Checkpoint, expected_schema_hash: &str) -> Result<Self> {
        if ckpt.observation_schema_hash != expected_schema_hash {
            return Err(Error::SchemaMismatch {
                expected: expected_schema_hash.to_string(),
                actual: ckpt.observation_schema_hash,
            });
        }
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        let mut model = Self::new(ckpt.spec, 0)?;
        if ckpt.params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} parameters, architecture needs {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        let critic_len = model.critic.param_count();
        if let Some(t) = &ckpt.target_critic {
            if t.len() != critic_len {
                return Err(Error::Shape(format!("target critic holds {} parameters, needs {critic_len}", t.len())));
            }
        }
        model.params = ckpt.params;
        if model.target_critic.is_some() {
            model.target_critic = Some(ckpt.target_critic.unwrap_or_else(|| model.critic_params().to_vec()));
        }
        model.log_alpha = ckpt.log_alpha;
        model.version = ckpt.version;
        model.check_finite()?;
        Ok(model)
    }
}

/// Serialized model: architecture, parameters and the observation schema it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ArchitectureSpec,
    pub observation_schema_hash: String,
    pub params: Vec<f64>,
    #[serde(default)]
    pub target_critic: Option<Vec<f64>>,
    #[serde(default)]
    pub log_alpha: f64,
    pub version: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}
