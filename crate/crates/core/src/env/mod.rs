//! Slot-based recovery environment: health processes, monitoring, backup
//! actions, statelet synchronisation and reward, wired together.

pub mod log;
pub mod reward;

use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::failure::{recover, sample_episode_config, step_health, HealthKind, HealthState, TransitionConfig};
use crate::monitoring::{AoiTracker, ObservationLayout, ObservationRecord, ReportSet, Trigger};
use crate::net::{build_network, embed_sfcs_random, NetworkState, VnfId};
use crate::rng::{derive_seed, seeded, SimRng};

pub use log::{read_episodes, read_episodes_file, write_episodes, EpisodeHeader, EpisodeLog, LogLine};
pub use reward::{RewardBreakdown, RewardInputs};

const BITS_PER_MEGABIT: f64 = 1e6;
const SUBSTRATE_TAG: u64 = 0x5b57;

/// Per-VNF action for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VnfAction {
    NoOp,
    /// Backup placement; for a critical VNF this starts recovery.
    Bp,
    /// Backup removal.
    Br,
    /// State synchronisation and switchover.
    Ss,
}

impl VnfAction {
    pub const ALL: [VnfAction; 4] = [VnfAction::NoOp, VnfAction::Bp, VnfAction::Br, VnfAction::Ss];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            VnfAction::NoOp => 0,
            VnfAction::Bp => 1,
            VnfAction::Br => 2,
            VnfAction::Ss => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            VnfAction::NoOp => "noop",
            VnfAction::Bp => "bp",
            VnfAction::Br => "br",
            VnfAction::Ss => "ss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryClass {
    /// Backup existed at slot start: switch over with synchronised state.
    Pfr,
    /// No prior backup: place one and migrate, or restart in place.
    Rfr,
}

/// Everything that happened to one VNF in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfSlotInfo {
    pub true_state: HealthKind,
    pub warning_dwell: u32,
    pub reported_state: Option<HealthKind>,
    pub trigger: Trigger,
    pub report_delivered: bool,
    /// Age in slots when the action was chosen; `None` if never reported.
    pub age: Option<f64>,
    pub action: VnfAction,
    pub rho: bool,
    pub beta: bool,
    /// Backup present at slot start.
    pub m: bool,
    pub backup_after: bool,
    pub recovery: Option<RecoveryClass>,
    /// The action could not take effect (no feasible node, duplicate backup,
    /// removal without a backup).
    pub infeasible: bool,
    /// Reactive recovery found no node and restarted the VNF where it was.
    pub rfr_in_place: bool,
    /// Switchover could not meet the downtime bound.
    pub sla_violation: bool,
    /// Sync delay of the switchover in seconds, when one happened.
    pub sync_delay: Option<f64>,
    /// Statelet backlog in bits at the end of the slot.
    pub backlog_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub actions: Vec<VnfAction>,
    pub vnfs: Vec<VnfSlotInfo>,
    pub reward: RewardBreakdown,
    /// Monitoring messages sent at the start of this slot.
    pub messages: usize,
    pub freshness_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub observation: Vec<f64>,
    pub reward: RewardBreakdown,
    pub done: bool,
    /// Each VNF's share of `reward.total`; empty on reset.
    pub vnf_rewards: Vec<f64>,
    /// `None` for the outcome returned by `reset`.
    pub info: Option<SlotRecord>,
}

/// Smallest sync bandwidth (bits/s) that drains `backlog_bits` within `max_downtime` seconds.
pub fn min_sync_bandwidth(backlog_bits: f64, max_downtime: f64) -> f64 {
    backlog_bits / max_downtime
}

/// Time to drain the backlog at `bandwidth_bps`.
pub fn sync_delay(backlog_bits: f64, bandwidth_bps: f64) -> f64 {
    if backlog_bits <= 0.0 {
        0.0
    } else {
        backlog_bits / bandwidth_bps
    }
}

/// Allowed sync delay: the chain's downtime bound when critical, effectively
/// unbounded otherwise.
pub fn sync_delay_bound(critical: bool, max_downtime: f64, epsilon_small: f64) -> f64 {
    if critical {
        max_downtime
    } else {
        1.0 / epsilon_small
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryEnv {
    cfg: EnvConfig,
    substrate_seed: u64,
    base: NetworkState,
    state: NetworkState,
    vnf_ids: Vec<VnfId>,
    health: Vec<HealthState>,
    transitions: Vec<TransitionConfig>,
    tracker: AoiTracker,
    last_reports: ReportSet,
    backlog: Vec<f64>,
    slot: usize,
    episode_seed: u64,
    rng: SimRng,
    started: bool,
}

fn build_substrate(cfg: &EnvConfig, seed: u64) -> Result<NetworkState> {
    let mut net = build_network(&cfg.substrate)?;
    let mut rng = seeded(derive_seed(seed, &[SUBSTRATE_TAG]));
    let sfcs = embed_sfcs_random(&mut net, &cfg.sfc, &mut rng)?;
    Ok(NetworkState::new(net, sfcs))
}

impl RecoveryEnv {
    pub fn new(cfg: EnvConfig, substrate_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let base = build_substrate(&cfg, substrate_seed)?;
        let vnf_ids: Vec<VnfId> = base.vnf_ids().collect();
        let n = vnf_ids.len();
        let tracker = AoiTracker::new(n, &cfg.monitoring);
        Ok(Self {
            state: base.clone(),
            base,
            substrate_seed,
            health: vec![HealthState::NORMAL; n],
            transitions: Vec::new(),
            last_reports: ReportSet {
                triggers: vec![Trigger::None; n],
                delivered: vec![false; n],
            },
            tracker,
            backlog: vec![0.0; n],
            slot: 0,
            episode_seed: 0,
            rng: seeded(0),
            started: false,
            vnf_ids,
            cfg,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn vnf_count(&self) -> usize {
        self.vnf_ids.len()
    }

    pub fn vnf_ids(&self) -> &[VnfId] {
        &self.vnf_ids
    }

    pub fn layout(&self) -> ObservationLayout {
        ObservationLayout {
            vnf_count: self.vnf_ids.len(),
            node_count: self.state.network.nodes.len(),
            resource_types: self.state.network.resource_types,
        }
    }

    pub fn observation_width(&self) -> usize {
        self.layout().width()
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.cfg.episode_length
    }

    pub fn network_state(&self) -> &NetworkState {
        &self.state
    }

    /// True health of every VNF. Only baselines and metrics may look here.
    pub fn true_health(&self) -> &[HealthState] {
        &self.health
    }

    pub fn transition_configs(&self) -> &[TransitionConfig] {
        &self.transitions
    }

    pub fn has_backup(&self, v: usize) -> bool {
        self.state.has_backup(self.vnf_ids[v])
    }

    pub fn backlog_bits(&self) -> &[f64] {
        &self.backlog
    }

    pub fn tracker(&self) -> &AoiTracker {
        &self.tracker
    }

    /// Current sync delay of VNF `v`'s backup at its present link bandwidth.
    pub fn current_sync_delay(&self, v: usize) -> Result<f64> {
        let id = self.vnf_ids[v];
        let b = self
            .state
            .backup(id)
            .ok_or_else(|| Error::Contract(format!("{id} has no backup")))?;
        Ok(sync_delay(self.backlog[v], b.bandwidth * BITS_PER_MEGABIT))
    }

    /// Bits of statelet generated by VNF `v` in one slot.
    fn generation_per_slot(&self, v: usize) -> f64 {
        let sfc = &self.state.sfcs[self.vnf_ids[v].sfc];
        self.cfg.sfc.statelet_bits_per_packet * sfc.traffic_rate * self.cfg.sfc.seconds_per_slot
    }

    pub fn header(&self, episode: usize) -> EpisodeHeader {
        let mut network = self.state.clone();
        if self.slot > 0 {
            network = self.base.clone();
        }
        EpisodeHeader {
            episode,
            seed: self.episode_seed,
            substrate_seed: self.substrate_seed,
            episode_length: self.cfg.episode_length,
            vnf_ids: self.vnf_ids.clone(),
            transition_configs: self.transitions.clone(),
            monitoring: self.cfg.monitoring.clone(),
            reward: self.cfg.reward.clone(),
            network,
        }
    }

    /// Starts a new episode. All VNFs begin normal, unreported and without backups.
    pub fn reset(&mut self, seed: u64) -> Result<SlotOutcome> {
        if self.cfg.regenerate_substrate {
            self.base = build_substrate(&self.cfg, seed)?;
            self.substrate_seed = seed;
        }
        self.state = self.base.clone();
        self.episode_seed = seed;
        self.rng = seeded(seed);
        let n = self.vnf_ids.len();
        self.transitions = (0..n)
            .map(|_| sample_episode_config(&mut self.rng, &self.cfg.failure))
            .collect::<Result<_>>()?;
        self.health = vec![HealthState::NORMAL; n];
        self.tracker.reset();
        self.last_reports = ReportSet {
            triggers: vec![Trigger::None; n],
            delivered: vec![false; n],
        };
        self.backlog = vec![0.0; n];
        self.slot = 0;
        self.started = true;
        Ok(SlotOutcome {
            observation: self.observation(),
            reward: RewardBreakdown::default(),
            done: false,
            vnf_rewards: Vec::new(),
            info: None,
        })
    }

    /// What the agent sees now.
    pub fn observation_record(&self) -> ObservationRecord {
        ObservationRecord {
            reported: self.tracker.last_reported().to_vec(),
            ages: self
                .tracker
                .ages()
                .iter()
                .map(|a| a.is_finite().then_some(*a / self.tracker.delta()))
                .collect(),
            backup_present: (0..self.vnf_ids.len()).map(|v| self.has_backup(v)).collect(),
            backlog: (0..self.vnf_ids.len())
                .map(|v| {
                    let g = self.generation_per_slot(v);
                    if g > 0.0 {
                        (self.backlog[v] / g).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect(),
            node_availability: self.state.network.availability_vector(),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        self.observation_record().to_vector()
    }

    /// Executes one slot with one action per VNF.
    pub fn step(&mut self, actions: &[VnfAction]) -> Result<SlotOutcome> {
        if !self.started {
            return Err(Error::Contract("step called before reset".into()));
        }
        if self.is_done() {
            return Err(Error::Contract("step called after the episode ended".into()));
        }
        let n = self.vnf_ids.len();
        if actions.len() != n {
            return Err(Error::Shape(format!("expected {n} actions, got {}", actions.len())));
        }

        let true_states: Vec<HealthKind> = self.health.iter().map(|h| h.kind).collect();
        let mut infos: Vec<VnfSlotInfo> = (0..n)
            .map(|v| {
                let age = self.tracker.ages()[v];
                VnfSlotInfo {
                    true_state: self.health[v].kind,
                    warning_dwell: self.health[v].warning_dwell,
                    reported_state: self.tracker.last_reported()[v],
                    trigger: self.last_reports.triggers[v],
                    report_delivered: self.last_reports.delivered[v],
                    age: age.is_finite().then_some(age / self.tracker.delta()),
                    action: actions[v],
                    rho: self.health[v].kind == HealthKind::Critical,
                    beta: false,
                    m: self.has_backup(v),
                    backup_after: false,
                    recovery: None,
                    infeasible: false,
                    rfr_in_place: false,
                    sla_violation: false,
                    sync_delay: None,
                    backlog_bits: 0.0,
                }
            })
            .collect();

        for v in 0..n {
            self.apply_action(v, actions[v], &mut infos[v])?;
        }

        let mut inputs = Vec::with_capacity(n);
        for (v, info) in infos.iter_mut().enumerate() {
            let id = self.vnf_ids[v];
            if let Some(b) = self.state.backup(id) {
                let dt = self.cfg.sfc.seconds_per_slot;
                let gen = self.generation_per_slot(v);
                let drained = b.bandwidth * BITS_PER_MEGABIT * dt;
                self.backlog[v] = (self.backlog[v] + gen - drained).max(0.0);
            } else {
                self.backlog[v] = 0.0;
            }
            info.backlog_bits = self.backlog[v];
            info.backup_after = self.state.has_backup(id);
            inputs.push(RewardInputs {
                state: info.true_state,
                action: info.action,
                beta: info.beta,
                m: info.m,
                backup_cost: self.state.sfcs[id.sfc].vnfs[id.pos].backup_cost,
                backup_after: info.backup_after,
                recovery: info.recovery,
            });
        }
        let reward = reward::evaluate(&self.cfg.reward, &inputs);
        let vnf_rewards = inputs
            .iter()
            .map(|i| reward::evaluate(&self.cfg.reward, std::slice::from_ref(i)).total)
            .collect();
        // Ages only exist once the first monitoring tick has run.
        let freshness_violations = if self.slot == 0 {
            0
        } else {
            self.tracker.freshness_violations(&true_states)
        };
        let messages = self.last_reports.message_count();

        self.slot += 1;
        let done = self.is_done();
        if !done {
            for v in 0..n {
                self.health[v] = step_health(self.health[v], &self.transitions[v], &mut self.rng);
            }
            let kinds: Vec<HealthKind> = self.health.iter().map(|h| h.kind).collect();
            self.last_reports = self.tracker.tick(&kinds, &mut self.rng);
        }

        let record = SlotRecord {
            slot: self.slot - 1,
            actions: actions.to_vec(),
            vnfs: infos,
            reward,
            messages,
            freshness_violations,
        };
        Ok(SlotOutcome {
            observation: self.observation(),
            reward,
            done,
            vnf_rewards,
            info: Some(record),
        })
    }

    fn apply_action(&mut self, v: usize, action: VnfAction, info: &mut VnfSlotInfo) -> Result<()> {
        let id = self.vnf_ids[v];
        let critical = self.health[v].kind == HealthKind::Critical;
        match action {
            VnfAction::NoOp => {}
            VnfAction::Bp if critical => {
                info.beta = true;
                self.run_recovery(v, info)?;
            }
            VnfAction::Bp => {
                if self.state.has_backup(id) {
                    info.infeasible = true;
                } else if let Some(node) = self.state.select_backup_node(id) {
                    self.state.allocate_backup(id, node)?;
                    self.backlog[v] = 0.0;
                } else {
                    info.infeasible = true;
                }
            }
            VnfAction::Br => {
                if self.state.has_backup(id) {
                    self.state.release_backup(id)?;
                    self.backlog[v] = 0.0;
                } else {
                    info.infeasible = true;
                }
            }
            VnfAction::Ss => {
                info.beta = true;
                if critical {
                    self.run_recovery(v, info)?;
                }
            }
        }
        Ok(())
    }

    fn run_recovery(&mut self, v: usize, info: &mut VnfSlotInfo) -> Result<()> {
        let id = self.vnf_ids[v];
        let max_downtime = self.state.sfcs[id.sfc].max_downtime;
        if self.state.has_backup(id) {
            let baseline = self.state.vnf(id)?.sync_bandwidth;
            let needed = min_sync_bandwidth(self.backlog[v], max_downtime) / BITS_PER_MEGABIT;
            let granted = self.state.set_sync_bandwidth(id, baseline.max(needed))?;
            let delay = sync_delay(self.backlog[v], granted * BITS_PER_MEGABIT);
            let bound = sync_delay_bound(true, max_downtime, self.cfg.reward.epsilon_small);
            info.sync_delay = Some(delay);
            info.sla_violation = delay > bound * (1.0 + 1e-12);
            self.state.promote_backup(id)?;
            info.recovery = Some(RecoveryClass::Pfr);
        } else {
            match self.state.select_backup_node(id) {
                Some(node) => {
                    self.state.allocate_backup(id, node)?;
                    self.state.promote_backup(id)?;
                }
                None => info.rfr_in_place = true,
            }
            info.recovery = Some(RecoveryClass::Rfr);
        }
        self.backlog[v] = 0.0;
        self.health[v] = recover(self.health[v])?;
        Ok(())
    }

    /// Test hook: overwrite a VNF's true health.
    #[doc(hidden)]
    pub fn force_health(&mut self, v: usize, state: HealthState) {
        self.health[v] = state;
    }

    /// Test hook: overwrite a VNF's statelet backlog.
    #[doc(hidden)]
    pub fn force_backlog(&mut self, v: usize, bits: f64) {
        self.backlog[v] = bits;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EnvConfig;

    fn env() -> RecoveryEnv {
        let mut e = RecoveryEnv::new(EnvConfig::default(), 3).unwrap();
        e.reset(17).unwrap();
        e
    }

    fn noop(n: usize) -> Vec<VnfAction> {
        vec![VnfAction::NoOp; n]
    }

    #[test]
    fn reset_observation_is_blank() {
        let e = env();
        let obs = e.observation_record();
        assert!(obs.reported.iter().all(Option::is_none));
        assert!(obs.ages.iter().all(Option::is_none));
        assert!(obs.backup_present.iter().all(|b| !b));
        assert_eq!(e.observation().len(), 69);
    }

    #[test]
    fn episode_ends_after_configured_slots() {
        let mut e = env();
        let n = e.vnf_count();
        for t in 0..100 {
            let out = e.step(&noop(n)).unwrap();
            assert_eq!(out.done, t == 99);
        }
        assert!(e.step(&noop(n)).is_err());
    }

    #[test]
    fn wrong_action_count_is_rejected() {
        let mut e = env();
        assert!(matches!(e.step(&[VnfAction::NoOp]), Err(Error::Shape(_))));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut e = env();
            let n = e.vnf_count();
            (0..100)
                .map(|t| {
                    let a = vec![VnfAction::from_index(t % 4).unwrap(); n];
                    e.step(&a).unwrap().reward.total
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn placement_then_removal_restores_state() {
        let mut e = env();
        let n = e.vnf_count();
        let before = e.network_state().clone();
        let mut a = noop(n);
        a[0] = VnfAction::Bp;
        let out = e.step(&a).unwrap();
        if e.true_health()[0].kind == HealthKind::Critical {
            return;
        }
        assert!(e.has_backup(0));
        assert!(out.info.unwrap().vnfs[0].backup_after);
        a[0] = VnfAction::Br;
        e.step(&a).unwrap();
        assert!(!e.has_backup(0));
        assert_eq!(e.network_state().network, before.network);
    }

    #[test]
    fn duplicate_placement_is_flagged_and_harmless() {
        let mut e = env();
        let n = e.vnf_count();
        e.force_health(0, HealthState::NORMAL);
        let mut a = noop(n);
        a[0] = VnfAction::Bp;
        e.step(&a).unwrap();
        e.force_health(0, HealthState::warning(1));
        let snapshot = e.network_state().clone();
        let out = e.step(&a).unwrap();
        let info = &out.info.unwrap().vnfs[0];
        assert!(info.infeasible);
        assert!(info.backup_after);
        assert_eq!(e.network_state().backups().count(), snapshot.backups().count());
    }

    #[test]
    fn proactive_switchover_moves_active_instance() {
        let mut e = env();
        let n = e.vnf_count();
        e.force_health(0, HealthState::NORMAL);
        let mut a = noop(n);
        a[0] = VnfAction::Bp;
        e.step(&a).unwrap();
        let backup_node = e.network_state().backup(e.vnf_ids()[0]).unwrap().node;
        e.force_health(0, HealthState::critical());
        a[0] = VnfAction::Ss;
        let out = e.step(&a).unwrap();
        let info = &out.info.as_ref().unwrap().vnfs[0];
        assert_eq!(info.recovery, Some(RecoveryClass::Pfr));
        assert!(!info.sla_violation);
        assert!(info.sync_delay.unwrap() <= e.network_state().sfcs[0].max_downtime);
        assert_eq!(e.network_state().active_node(e.vnf_ids()[0]).unwrap(), backup_node);
        assert!(!e.has_backup(0));
        assert!(e.network_state().audit().is_empty());
    }

    #[test]
    fn reactive_recovery_migrates_without_backup() {
        let mut e = env();
        let n = e.vnf_count();
        e.force_health(0, HealthState::critical());
        let mut a = noop(n);
        a[0] = VnfAction::Bp;
        let out = e.step(&a).unwrap();
        let info = &out.info.unwrap().vnfs[0];
        assert_eq!(info.recovery, Some(RecoveryClass::Rfr));
        assert!(info.beta && info.rho && !info.m);
        assert!(e.network_state().audit().is_empty());
    }

    #[test]
    fn large_backlog_raises_sync_bandwidth() {
        let mut e = env();
        let n = e.vnf_count();
        e.force_health(0, HealthState::NORMAL);
        let mut a = noop(n);
        a[0] = VnfAction::Bp;
        e.step(&a).unwrap();
        let id = e.vnf_ids()[0];
        let delta = e.network_state().sfcs[id.sfc].max_downtime;
        // Needs 50 Mb/s, well under the link capacity.
        e.force_backlog(0, 50e6 * delta);
        e.force_health(0, HealthState::critical());
        a[0] = VnfAction::Ss;
        let info = e.step(&a).unwrap().info.unwrap().vnfs[0].clone();
        assert!(!info.sla_violation);
        assert!((info.sync_delay.unwrap() - delta).abs() < 1e-9);
    }

    #[test]
    fn unattainable_bandwidth_is_an_sla_violation() {
        let mut e = env();
        let n = e.vnf_count();
        e.force_health(0, HealthState::NORMAL);
        let mut a = noop(n);
        a[0] = VnfAction::Bp;
        e.step(&a).unwrap();
        let id = e.vnf_ids()[0];
        let delta = e.network_state().sfcs[id.sfc].max_downtime;
        e.force_backlog(0, 5000e6 * delta);
        e.force_health(0, HealthState::critical());
        a[0] = VnfAction::Ss;
        let info = e.step(&a).unwrap().info.unwrap().vnfs[0].clone();
        assert!(info.sla_violation);
        assert!(info.sync_delay.unwrap() > delta);
        assert!(e.network_state().audit().is_empty());
    }

    #[test]
    fn delay_bound_depends_on_criticality() {
        assert_eq!(sync_delay_bound(true, 0.3, 1e-6), 0.3);
        assert_eq!(sync_delay_bound(false, 0.3, 1e-6), 1e6);
        assert!((min_sync_bandwidth(1e6, 0.5) - 2e6).abs() < 1e-6);
    }
}
