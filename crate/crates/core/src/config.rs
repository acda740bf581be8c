//! Run configuration.
//!
//! Every section carries defaults matching the reference experiment setup and
//! is validated before any run starts. Unknown keys are rejected by serde.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical substrate parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubstrateConfig {
    pub node_count: usize,
    pub nfv_count: usize,
    /// Number of resource types P.
    pub resource_types: usize,
    /// Per-resource capacity of every NFV node.
    pub node_capacity: f64,
    /// Link bandwidth capacity in Mb/s.
    pub link_bandwidth: f64,
}

impl Default for SubstrateConfig {
    fn default() -> Self {
        Self {
            node_count: 5,
            nfv_count: 5,
            resource_types: 3,
            node_capacity: 100.0,
            link_bandwidth: 1000.0,
        }
    }
}

/// Service chain generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfcConfig {
    pub sfc_count: usize,
    pub vnfs_per_sfc: usize,
    /// Per-resource demand range of a VNF instance (active or backup).
    pub demand_range: [f64; 2],
    /// Baseline sync-link bandwidth in Mb/s.
    pub sync_bandwidth: f64,
    /// Backup cost U.
    pub backup_cost: f64,
    /// Traffic rate range in packets/s.
    pub traffic_range: [f64; 2],
    /// Maximum tolerable downtime range in seconds.
    pub downtime_range: [f64; 2],
    /// Statelet bits generated per packet.
    pub statelet_bits_per_packet: f64,
    /// Wall-clock seconds represented by one slot.
    pub seconds_per_slot: f64,
    pub embed_retries: usize,
}

impl Default for SfcConfig {
    fn default() -> Self {
        Self {
            sfc_count: 3,
            vnfs_per_sfc: 3,
            demand_range: [5.0, 20.0],
            sync_bandwidth: 10.0,
            backup_cost: 1.0,
            traffic_range: [100.0, 1000.0],
            downtime_range: [0.1, 0.5],
            statelet_bits_per_packet: 100.0,
            seconds_per_slot: 1.0,
            embed_retries: 100,
        }
    }
}

impl SfcConfig {
    pub fn vnf_count(&self) -> usize {
        self.sfc_count * self.vnfs_per_sfc
    }
}

/// Markov failure-process sampling ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureConfig {
    /// Minimum warning dwell q_v in slots.
    pub min_warning_dwell: u32,
    pub p_nw_range: [f64; 2],
    pub p_wc_range: [f64; 2],
    pub p_wn_range: [f64; 2],
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            min_warning_dwell: 2,
            p_nw_range: [0.02, 0.10],
            p_wc_range: [0.10, 0.40],
            p_wn_range: [0.10, 0.40],
        }
    }
}

/// Monitoring and freshness thresholds. Ages are in slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitoringConfig {
    /// Slot duration delta.
    pub slot_duration: f64,
    pub kappa_normal: f64,
    pub kappa_warning: f64,
    pub kappa_critical: f64,
    pub loss_probability: f64,
}

impl Default for MonitoringConfig {
    fn default() -> Self {
        Self {
            slot_duration: 1.0,
            kappa_normal: 2.0,
            kappa_warning: 2.0,
            kappa_critical: 1.0,
            loss_probability: 0.0,
        }
    }
}

/// Cost weights and shaping bonuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub psi_b: f64,
    pub psi_f: f64,
    pub eta: [f64; 3],
    /// Backup cost coefficient per health state: normal, warning, critical.
    pub alpha: [f64; 3],
    pub bonus_br_normal: f64,
    pub bonus_bp_warning: f64,
    pub bonus_recovery_critical: f64,
    pub bonus_pfr: f64,
    pub epsilon_small: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            psi_b: 1.0,
            psi_f: 1.0,
            eta: [1.0, 1.0, 1.0],
            alpha: [1.0, 0.1, 0.0],
            bonus_br_normal: 1.0,
            bonus_bp_warning: 1.0,
            bonus_recovery_critical: 1.0,
            bonus_pfr: 100.0,
            epsilon_small: 1e-6,
        }
    }
}

/// Everything one environment instance needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub episode_length: usize,
    /// Draw a fresh substrate and embedding on every reset.
    pub regenerate_substrate: bool,
    pub substrate: SubstrateConfig,
    pub sfc: SfcConfig,
    pub failure: FailureConfig,
    pub monitoring: MonitoringConfig,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_length: 100,
            regenerate_substrate: false,
            substrate: SubstrateConfig::default(),
            sfc: SfcConfig::default(),
            failure: FailureConfig::default(),
            monitoring: MonitoringConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    LstmPpo,
    LstmSac,
    NlstmPpo,
}

impl AgentKind {
    pub fn is_ppo(self) -> bool {
        matches!(self, AgentKind::LstmPpo | AgentKind::NlstmPpo)
    }

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::LstmPpo => "lstm-ppo",
            AgentKind::LstmSac => "lstm-sac",
            AgentKind::NlstmPpo => "nlstm-ppo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    Tanh,
}

/// Hidden-layer layout of one network tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerLayout {
    pub pre: Vec<usize>,
    pub lstm: Vec<usize>,
    pub post: Vec<usize>,
    /// Dropout rate per fully connected layer (pre then post). Empty disables dropout.
    pub dropout: Vec<f64>,
    pub activation: ActivationKind,
}

impl Default for LayerLayout {
    fn default() -> Self {
        Self::hybrid()
    }
}

impl LayerLayout {
    /// Recurrent hybrid layout: (512, 512) -> LSTM (100, 100) -> (256, 256).
    pub fn hybrid() -> Self {
        Self {
            pre: vec![512, 512],
            lstm: vec![100, 100],
            post: vec![256, 256],
            dropout: Vec::new(),
            activation: ActivationKind::Relu,
        }
    }

    /// Feed-forward baseline: ten 512-unit layers then 256 and 128, with dropout.
    pub fn feedforward() -> Self {
        let mut pre = vec![512; 10];
        pre.extend([256, 128]);
        let mut dropout = vec![0.4; 10];
        dropout.extend([0.2, 0.2]);
        Self {
            pre,
            lstm: Vec::new(),
            post: Vec::new(),
            dropout,
            activation: ActivationKind::Relu,
        }
    }

    pub fn default_for(kind: AgentKind) -> Self {
        match kind {
            AgentKind::LstmPpo | AgentKind::LstmSac => Self::hybrid(),
            AgentKind::NlstmPpo => Self::feedforward(),
        }
    }

    /// Divide every width by `factor` (minimum 4 units), keeping depth and dropout.
    pub fn scaled_down(&self, factor: usize) -> Self {
        let shrink = |v: &Vec<usize>| v.iter().map(|w| (w / factor).max(4)).collect();
        Self {
            pre: shrink(&self.pre),
            lstm: shrink(&self.lstm),
            post: shrink(&self.post),
            dropout: self.dropout.clone(),
            activation: self.activation,
        }
    }

    pub fn fc_count(&self) -> usize {
        self.pre.len() + self.post.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Entropy coefficient c_2.
    pub entropy_coef: f64,
    /// Value coefficient c_1.
    pub value_coef: f64,
    pub clip: f64,
    pub parallel_envs: usize,
    /// Gradient steps per epoch; 1 means full-batch.
    pub minibatches: usize,
    pub normalize_advantage: bool,
    /// Returns are divided by this before entering the value loss.
    pub value_scale: f64,
    pub max_grad_norm: f64,
    pub credit: Credit,
}

/// How PPO assigns advantage to the per-VNF action heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Credit {
    /// One scalar value and advantage per slot; the ratio is over the joint action.
    #[default]
    Joint,
    /// One value and advantage per VNF from that VNF's share of the reward;
    /// each head has its own ratio.
    PerVnf,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            learning_rate: 4e-4,
            entropy_coef: 1e-2,
            value_coef: 1.0,
            clip: 0.2,
            parallel_envs: 32,
            minibatches: 1,
            normalize_advantage: true,
            value_scale: 100.0,
            max_grad_norm: 0.5,
            credit: Credit::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    /// Gradient updates per iteration.
    pub epochs: usize,
    pub learning_rate: f64,
    pub reward_scale: f64,
    pub target_update_period: usize,
    pub tau: f64,
    /// Replay capacity in episodes.
    pub replay_capacity: usize,
    /// Episodes per sampled batch.
    pub batch_episodes: usize,
    pub parallel_envs: usize,
    /// Automatically tune the entropy temperature.
    pub auto_temperature: bool,
    pub initial_temperature: f64,
    /// Target entropy per head as a fraction of ln(4).
    pub target_entropy_ratio: f64,
    pub max_grad_norm: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            learning_rate: 3e-4,
            reward_scale: 1.0,
            target_update_period: 1,
            tau: 5e-3,
            replay_capacity: 1000,
            batch_episodes: 8,
            parallel_envs: 16,
            auto_temperature: true,
            initial_temperature: 0.1,
            target_entropy_ratio: 0.2,
            max_grad_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub gamma: f64,
    /// Tower layout; `None` selects the default for `kind`.
    pub layout: Option<LayerLayout>,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::LstmPpo,
            gamma: 0.99,
            layout: None,
            ppo: PpoConfig::default(),
            sac: SacConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn resolved_layout(&self) -> LayerLayout {
        self.layout
            .clone()
            .unwrap_or_else(|| LayerLayout::default_for(self.kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub robustness_every: usize,
    pub master_seed: u64,
    pub output_dir: String,
    /// Force single-threaded execution.
    pub deterministic: bool,
    /// Sample actions during evaluation instead of taking the mode.
    pub stochastic_eval: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            iterations: 300_000,
            eval_every: 50,
            eval_episodes: 50,
            robustness_every: 500,
            master_seed: 0,
            output_dir: "runs/default".to_string(),
            deterministic: false,
            stochastic_eval: false,
        }
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub run: RunSection,
}

fn check(cond: bool, path: &str, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(format!("{path}: {msg}")))
    }
}

fn check_range(r: [f64; 2], path: &str, lo: f64, hi: f64) -> Result<()> {
    check(
        r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi,
        path,
        &format!("range must satisfy {lo} <= min <= max <= {hi}"),
    )
}

fn check_prob(p: f64, path: &str) -> Result<()> {
    check((0.0..=1.0).contains(&p), path, "probability must lie in [0, 1]")
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.episode_length >= 1, "env.episode_length", "must be >= 1")?;

        let s = &self.substrate;
        check(s.nfv_count >= 2, "env.substrate.nfv_count", "must be >= 2 (backups need a distinct node)")?;
        check(s.node_count >= s.nfv_count, "env.substrate.node_count", "must be >= nfv_count")?;
        check(s.resource_types >= 1, "env.substrate.resource_types", "must be >= 1")?;
        check(s.node_capacity > 0.0, "env.substrate.node_capacity", "must be > 0")?;
        check(s.link_bandwidth > 0.0, "env.substrate.link_bandwidth", "must be > 0")?;

        let f = &self.sfc;
        check(f.sfc_count >= 1, "env.sfc.sfc_count", "must be >= 1")?;
        check(f.vnfs_per_sfc >= 1, "env.sfc.vnfs_per_sfc", "must be >= 1")?;
        check_range(f.demand_range, "env.sfc.demand_range", f64::MIN_POSITIVE, f64::MAX)?;
        check_range(f.traffic_range, "env.sfc.traffic_range", 0.0, f64::MAX)?;
        check_range(f.downtime_range, "env.sfc.downtime_range", f64::MIN_POSITIVE, f64::MAX)?;
        check(f.sync_bandwidth > 0.0, "env.sfc.sync_bandwidth", "must be > 0")?;
        check(f.backup_cost > 0.0, "env.sfc.backup_cost", "must be > 0")?;
        check(f.statelet_bits_per_packet >= 0.0, "env.sfc.statelet_bits_per_packet", "must be >= 0")?;
        check(f.seconds_per_slot > 0.0, "env.sfc.seconds_per_slot", "must be > 0")?;
        check(f.embed_retries >= 1, "env.sfc.embed_retries", "must be >= 1")?;

        let q = &self.failure;
        check(q.min_warning_dwell >= 1, "env.failure.min_warning_dwell", "must be >= 1")?;
        check_range(q.p_nw_range, "env.failure.p_nw_range", 0.0, 1.0)?;
        check_range(q.p_wc_range, "env.failure.p_wc_range", 0.0, 1.0)?;
        check_range(q.p_wn_range, "env.failure.p_wn_range", 0.0, 1.0)?;
        check(
            q.p_wc_range[1] + q.p_wn_range[1] <= 1.0,
            "env.failure.p_wc_range",
            "max(p_wc) + max(p_wn) must not exceed 1",
        )?;

        let m = &self.monitoring;
        check(m.slot_duration > 0.0, "env.monitoring.slot_duration", "must be > 0")?;
        for (name, k) in [
            ("kappa_normal", m.kappa_normal),
            ("kappa_warning", m.kappa_warning),
            ("kappa_critical", m.kappa_critical),
        ] {
            check(
                k >= m.slot_duration,
                &format!("env.monitoring.{name}"),
                "threshold must be at least one slot duration",
            )?;
        }
        check_prob(m.loss_probability, "env.monitoring.loss_probability")?;

        let r = &self.reward;
        for (name, w) in [("psi_b", r.psi_b), ("psi_f", r.psi_f)] {
            check(w >= 0.0, &format!("env.reward.{name}"), "must be >= 0")?;
        }
        check(r.eta.iter().all(|&w| w >= 0.0), "env.reward.eta", "weights must be >= 0")?;
        check(r.alpha.iter().all(|&w| w >= 0.0), "env.reward.alpha", "coefficients must be >= 0")?;
        check(
            r.alpha[0] >= r.alpha[1] && r.alpha[1] >= r.alpha[2],
            "env.reward.alpha",
            "must be non-increasing normal >= warning >= critical",
        )?;
        for (name, b) in [
            ("bonus_br_normal", r.bonus_br_normal),
            ("bonus_bp_warning", r.bonus_bp_warning),
            ("bonus_recovery_critical", r.bonus_recovery_critical),
            ("bonus_pfr", r.bonus_pfr),
        ] {
            check(b >= 0.0, &format!("env.reward.{name}"), "must be >= 0")?;
        }
        check(r.epsilon_small > 0.0, "env.reward.epsilon_small", "must be > 0")?;
        Ok(())
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "agent.gamma",
            "must lie in (0, 1]",
        )?;
        let layout = self.resolved_layout();
        check(
            layout.pre.iter().chain(&layout.lstm).chain(&layout.post).all(|&w| w > 0),
            "agent.layout",
            "layer widths must be positive",
        )?;
        check(
            layout.dropout.is_empty() || layout.dropout.len() == layout.fc_count(),
            "agent.layout.dropout",
            "needs one rate per fully connected layer or none",
        )?;
        check(
            layout.dropout.iter().all(|p| (0.0..1.0).contains(p)),
            "agent.layout.dropout",
            "rates must lie in [0, 1)",
        )?;
        if self.kind == AgentKind::NlstmPpo {
            check(layout.lstm.is_empty(), "agent.layout.lstm", "nlstm-ppo has no recurrent layers")?;
        }

        let p = &self.ppo;
        check(p.epochs >= 1, "agent.ppo.epochs", "must be >= 1")?;
        check(p.learning_rate > 0.0, "agent.ppo.learning_rate", "must be > 0")?;
        check(p.entropy_coef >= 0.0, "agent.ppo.entropy_coef", "must be >= 0")?;
        check(p.value_coef >= 0.0, "agent.ppo.value_coef", "must be >= 0")?;
        check(p.clip > 0.0 && p.clip < 1.0, "agent.ppo.clip", "must lie in (0, 1)")?;
        check(p.parallel_envs >= 1, "agent.ppo.parallel_envs", "must be >= 1")?;
        check(
            p.minibatches >= 1 && p.minibatches <= p.parallel_envs,
            "agent.ppo.minibatches",
            "must lie in [1, parallel_envs]",
        )?;
        check(p.value_scale > 0.0, "agent.ppo.value_scale", "must be > 0")?;
        check(p.max_grad_norm > 0.0, "agent.ppo.max_grad_norm", "must be > 0")?;

        let s = &self.sac;
        check(s.epochs >= 1, "agent.sac.epochs", "must be >= 1")?;
        check(s.learning_rate > 0.0, "agent.sac.learning_rate", "must be > 0")?;
        check(s.reward_scale > 0.0, "agent.sac.reward_scale", "must be > 0")?;
        check(s.target_update_period >= 1, "agent.sac.target_update_period", "must be >= 1")?;
        check(s.tau > 0.0 && s.tau <= 1.0, "agent.sac.tau", "must lie in (0, 1]")?;
        check(s.batch_episodes >= 1, "agent.sac.batch_episodes", "must be >= 1")?;
        check(
            s.replay_capacity >= s.batch_episodes,
            "agent.sac.replay_capacity",
            "must hold at least one batch",
        )?;
        check(s.parallel_envs >= 1, "agent.sac.parallel_envs", "must be >= 1")?;
        check(s.initial_temperature > 0.0, "agent.sac.initial_temperature", "must be > 0")?;
        check(
            (0.0..1.0).contains(&s.target_entropy_ratio),
            "agent.sac.target_entropy_ratio",
            "must lie in [0, 1)",
        )?;
        check(s.max_grad_norm > 0.0, "agent.sac.max_grad_norm", "must be > 0")?;
        Ok(())
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        let r = &self.run;
        check(r.eval_every >= 1, "run.eval_every", "must be >= 1")?;
        check(r.eval_episodes >= 1, "run.eval_episodes", "must be >= 1")?;
        check(r.robustness_every >= 1, "run.robustness_every", "must be >= 1")?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
