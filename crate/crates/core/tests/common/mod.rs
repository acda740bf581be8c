//! Independent oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pfrsim_core::env::{EpisodeHeader, EpisodeLog, RecoveryClass, SlotRecord, VnfAction};
use pfrsim_core::failure::{recover, step_health, HealthKind, HealthState, TransitionConfig};
use pfrsim_core::net::{Holder, NetworkState};
use pfrsim_core::config::{AgentKind, Credit, LayerLayout, PpoConfig};
use pfrsim_core::nn::{ArchitectureSpec, PolicyModel};
use pfrsim_core::rng::seeded;
use pfrsim_core::train::{
    collect_rollouts, ppo_loss_and_grad, sac_actor_loss_and_grad, sac_critic_loss_and_grad, CollectOptions, PpoBatch, SacBatch,
    SacEpisode,
};
use pfrsim_core::{EnvConfig, RecoveryEnv};
use rand::Rng;

/// Recomputes node, link, anti-affinity and single-backup bookkeeping from raw
/// reservations without calling the library's own audit.
pub fn bookkeeping_violations(state: &NetworkState) -> Vec<String> {
    let mut out = Vec::new();
    let mut backup_hosts: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for node in &state.network.nodes {
        let p = node.capacity.0.len();
        let mut sum = vec![0.0; p];
        for (holder, demand) in node.reservations() {
            for (s, d) in sum.iter_mut().zip(&demand.0) {
                if *d < 0.0 {
                    out.push(format!("node {} negative demand {d}", node.id));
                }
                *s += d;
            }
            if let Holder::Backup(id) = holder {
                backup_hosts.entry(*id).or_default().push(node.id);
            }
            if !node.is_nfv {
                out.push(format!("forwarding node {} hosts {holder:?}", node.id));
            }
        }
        for (i, (s, c)) in sum.iter().zip(&node.capacity.0).enumerate() {
            if *s > c + 1e-9 * c {
                out.push(format!("node {} resource {i} over capacity: {s} > {c}", node.id));
            }
        }
        for (i, w) in node.available_ratio().iter().enumerate() {
            let expected = ((node.capacity.0[i] - sum[i]) / node.capacity.0[i]).clamp(0.0, 1.0);
            if !(0.0..=1.0).contains(w) || (w - expected).abs() > 1e-9 {
                out.push(format!("node {} ratio {i} = {w}, recomputed {expected}", node.id));
            }
        }
    }

    let mut link_load = vec![0.0; state.network.links.len()];
    for (id, placement) in state.backups() {
        for &l in &placement.route {
            link_load[l] += placement.bandwidth;
        }
        let hosts = backup_hosts.get(id).cloned().unwrap_or_default();
        if hosts != [placement.node] {
            out.push(format!("{id:?} placement on {} but node ledger shows {hosts:?}", placement.node));
        }
    }
    for (i, link) in state.network.links.iter().enumerate() {
        if (link.reserved() - link_load[i]).abs() > 1e-9 * link.bandwidth_capacity.max(1.0) {
            out.push(format!("link {i} reserved {} but routes sum to {}", link.reserved(), link_load[i]));
        }
        if link_load[i] > link.bandwidth_capacity * (1.0 + 1e-9) || link_load[i] < 0.0 {
            out.push(format!("link {i} load {} of {}", link_load[i], link.bandwidth_capacity));
        }
    }

    for sfc in &state.sfcs {
        for (h, _) in sfc.vnfs.iter().enumerate() {
            let id = pfrsim_core::net::VnfId::new(sfc.id, h);
            let hosts = backup_hosts.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            if hosts.len() > 1 {
                out.push(format!("{id:?} has {} backups", hosts.len()));
            }
            if hosts.contains(&sfc.embedding[h]) {
                out.push(format!("{id:?} backup shares node {} with its active instance", sfc.embedding[h]));
            }
        }
    }
    out
}

/// Reward terms rebuilt from the raw per-VNF fields of a slot record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReward {
    pub phi_sla: f64,
    pub phi_rc: f64,
    pub phi_fa: f64,
    pub r1: f64,
    pub r2: f64,
    pub total: f64,
}

pub fn oracle_reward(header: &EpisodeHeader, slot: &SlotRecord) -> OracleReward {
    let w = &header.reward;
    let (mut sla, mut rc, mut fa, mut r2) = (0.0, 0.0, 0.0, 0.0);
    for (v, info) in slot.vnfs.iter().enumerate() {
        let critical = info.true_state == HealthKind::Critical;
        let m = if info.m { 1.0 } else { 0.0 };
        let rho = if critical { 1.0 } else { 0.0 };
        let beta = if info.beta { 1.0 } else { 0.0 };
        let alpha = match info.true_state {
            HealthKind::Normal => w.alpha[0],
            HealthKind::Warning => w.alpha[1],
            HealthKind::Critical => w.alpha[2],
        };
        sla += rho * (1.0 - m);
        rc += alpha * m * header.backup_cost(v);
        fa += (rho - beta).abs();
        if info.action == VnfAction::Br && info.true_state == HealthKind::Normal {
            r2 += w.bonus_br_normal;
        }
        if info.action == VnfAction::Bp && info.true_state == HealthKind::Warning && info.backup_after {
            r2 += w.bonus_bp_warning;
        }
        r2 += rho * beta * w.bonus_recovery_critical;
        if info.recovery == Some(RecoveryClass::Pfr) {
            r2 += w.bonus_pfr;
        }
    }
    let phi_sla = w.psi_b * sla;
    let phi_fa = w.psi_f * fa;
    let r1 = -w.eta[0] * phi_sla - w.eta[1] * rc - w.eta[2] * phi_fa;
    OracleReward {
        phi_sla,
        phi_rc: rc,
        phi_fa,
        r1,
        r2,
        total: r1 + r2,
    }
}

/// Largest absolute difference between the logged breakdown and the oracle.
pub fn reward_mismatch(log: &EpisodeLog) -> f64 {
    let mut worst: f64 = 0.0;
    for slot in &log.slots {
        let o = oracle_reward(&log.header, slot);
        let r = &slot.reward;
        for (a, b) in [
            (o.phi_sla, r.phi_sla),
            (o.phi_rc, r.phi_rc),
            (o.phi_fa, r.phi_fa),
            (o.r1, r.r1),
            (o.r2, r.r2),
            (o.total, r.total),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Replays the age recurrence on a log: an unreported VNF has no age, a
/// delivered report sets the age to one slot, and otherwise the age grows by
/// one slot. Returns the first mismatch.
pub fn aoi_replay(log: &EpisodeLog) -> Result<(), String> {
    let n = log.header.vnf_ids.len();
    let mut expected: Vec<Option<f64>> = vec![None; n];
    for (t, slot) in log.slots.iter().enumerate() {
        for v in 0..n {
            let info = &slot.vnfs[v];
            if t > 0 {
                expected[v] = if info.report_delivered {
                    Some(1.0)
                } else {
                    expected[v].map(|a| a + 1.0)
                };
            } else if info.report_delivered {
                return Err(format!("slot 0 vnf {v}: report before the first tick"));
            }
            if info.age != expected[v] {
                return Err(format!("slot {t} vnf {v}: logged age {:?}, recurrence gives {:?}", info.age, expected[v]));
            }
        }
    }
    Ok(())
}

/// Age threshold violations recounted from the log against the true state.
pub fn freshness_recount(log: &EpisodeLog) -> usize {
    let m = &log.header.monitoring;
    log.slots
        .iter()
        .skip(1)
        .flat_map(|s| s.vnfs.iter())
        .filter(|i| {
            let k = match i.true_state {
                HealthKind::Normal => m.kappa_normal,
                HealthKind::Warning => m.kappa_warning,
                HealthKind::Critical => m.kappa_critical,
            };
            i.age.is_none_or(|a| a > k)
        })
        .count()
}

/// Warning row after `dwell` slots, rebuilt by hand: the critical probability
/// grows linearly past the minimum dwell and borrows first from staying.
pub fn markov_row(c: &TransitionConfig, dwell: u32) -> [f64; 3] {
    let over = dwell as f64 - c.min_warning_dwell as f64;
    let wc = (c.p_wc * (1.0 + over)).min(1.0);
    let extra = wc - c.p_wc;
    let ww = (c.p_ww - extra).max(0.0);
    let wn = (c.p_wn - (extra - c.p_ww).max(0.0)).max(0.0);
    [ww, wc, wn]
}

#[derive(Default)]
pub struct MarkovCounts {
    pub from_normal: [usize; 3],
    /// Indexed by dwell, then (stay, critical, normal).
    pub from_warning: Vec<[usize; 3]>,
    pub normal_to_critical: usize,
    pub short_warnings: usize,
}

pub fn markov_counts(c: &TransitionConfig, steps: usize, seed: u64) -> MarkovCounts {
    let mut rng = seeded(seed);
    let mut counts = MarkovCounts::default();
    let mut s = HealthState::NORMAL;
    for _ in 0..steps {
        let next = step_health(s, c, &mut rng);
        match s.kind {
            HealthKind::Normal => {
                counts.from_normal[next.kind.index()] += 1;
                if next.kind == HealthKind::Critical {
                    counts.normal_to_critical += 1;
                }
            }
            HealthKind::Warning => {
                let d = s.warning_dwell as usize;
                if counts.from_warning.len() <= d {
                    counts.from_warning.resize(d + 1, [0; 3]);
                }
                let k = match next.kind {
                    HealthKind::Warning => 0,
                    HealthKind::Critical => 1,
                    HealthKind::Normal => 2,
                };
                counts.from_warning[d][k] += 1;
                if next.kind != HealthKind::Warning && s.warning_dwell < c.min_warning_dwell {
                    counts.short_warnings += 1;
                }
            }
            HealthKind::Critical => unreachable!("critical is recovered immediately"),
        }
        s = if next.kind == HealthKind::Critical { recover(next).unwrap() } else { next };
    }
    counts
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_SAMPLES: usize = 200;
pub const FD_TOLERANCE: f64 = 1e-3;
/// Central differences carry about `eps * |L| / h` of roundoff, roughly
/// 1e-10 here, so gradients below 1e-6 are compared on an absolute scale.
const FLOOR: f64 = 1e-6;
/// The check fails when kinks exceed this share of the required draws.
const MAX_KINK_SHARE: f64 = 0.05;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

#[derive(Debug, Clone, Copy)]
pub struct FdSummary {
    pub worst: f64,
    pub kinks: usize,
    pub nonzero: usize,
}

/// Compares `grad` with central differences of `f` on `FD_SAMPLES` random
/// coordinates.
///
/// Draws whose two one-sided differences disagree straddle a point where the
/// loss is not differentiable; the central difference there is not a
/// derivative, so the draw is replaced.
pub fn fd_check<F: Fn(&[f64]) -> f64>(params: &[f64], grad: &[f64], f: F, seed: u64) -> Result<FdSummary, String> {
    let mut rng = seeded(seed);
    let mut p = params.to_vec();
    let base = f(&p);
    let mut s = FdSummary {
        worst: 0.0,
        kinks: 0,
        nonzero: 0,
    };
    let mut accepted = 0;
    while accepted < FD_SAMPLES {
        let i = rng.random_range(0..p.len());
        let x = p[i];
        p[i] = x + FD_STEP;
        let up = f(&p);
        p[i] = x - FD_STEP;
        let down = f(&p);
        p[i] = x;
        let (fwd, bwd) = ((up - base) / FD_STEP, (base - down) / FD_STEP);
        if rel_err(fwd, bwd) > FD_TOLERANCE {
            s.kinks += 1;
            if s.kinks as f64 > MAX_KINK_SHARE * FD_SAMPLES as f64 {
                return Err(format!("{} non-differentiable draws, last at param {i}", s.kinks));
            }
            continue;
        }
        accepted += 1;
        let numeric = (up - down) / (2.0 * FD_STEP);
        if grad[i] != 0.0 {
            s.nonzero += 1;
        }
        let e = rel_err(grad[i], numeric);
        if e >= FD_TOLERANCE {
            return Err(format!("param {i}: analytic {} numeric {numeric} relative error {e:.2e}", grad[i]));
        }
        s.worst = s.worst.max(e);
    }
    if s.nonzero == 0 {
        return Err("every sampled gradient was zero".into());
    }
    Ok(s)
}

/// Short episodes keep full-size finite differences cheap.
pub fn short_env() -> EnvConfig {
    EnvConfig {
        episode_length: 6,
        ..EnvConfig::default()
    }
}

pub fn full_size_model(kind: AgentKind, per_vnf: bool, seed: u64) -> PolicyModel {
    let env = RecoveryEnv::new(short_env(), 3).unwrap();
    let spec = ArchitectureSpec::new(kind, env.observation_width(), env.vnf_count(), LayerLayout::default_for(kind))
        .with_per_vnf_values(per_vnf);
    PolicyModel::new(spec, seed).unwrap()
}

/// Composite PPO loss on a dropout-enabled rollout whose old log-probabilities
/// are shifted so ratios fall on both sides of the clip range.
pub fn ppo_gradient(kind: AgentKind, credit: Credit) -> Result<FdSummary, String> {
    let cfg = PpoConfig {
        credit,
        ..PpoConfig::default()
    };
    let m = full_size_model(kind, credit == Credit::PerVnf, 17);
    let opts = CollectOptions {
        dropout: true,
        value_scale: Some(cfg.value_scale),
        parallel: false,
    };
    let trajs = collect_rollouts(&m, &short_env(), 3, &[4, 5], opts).map_err(|e| e.to_string())?;
    let mut batch = PpoBatch::from_trajectories(&trajs, 0.99, &cfg).map_err(|e| e.to_string())?;
    let mut rng = seeded(99);
    for lp in batch.old_log_probs.iter_mut() {
        *lp += rng.random_range(-0.4..0.4);
    }
    let (loss, grad) = ppo_loss_and_grad(&m, &m.params, &batch, &cfg).map_err(|e| e.to_string())?;
    if !(loss.clip_fraction > 0.0 && loss.clip_fraction < 1.0) {
        return Err(format!("clip fraction {} does not exercise both branches", loss.clip_fraction));
    }
    fd_check(&m.params, &grad, |p| ppo_loss_and_grad(&m, p, &batch, &cfg).unwrap().0.total, 5)
}

fn sac_batch(m: &PolicyModel) -> SacBatch {
    let opts = CollectOptions {
        dropout: false,
        value_scale: None,
        parallel: false,
    };
    let trajs = collect_rollouts(m, &short_env(), 3, &[8, 9], opts).unwrap();
    let eps: Vec<SacEpisode> = trajs.iter().map(SacEpisode::from_trajectory).collect();
    SacBatch::from_episodes(&eps.iter().collect::<Vec<_>>()).unwrap()
}

pub fn sac_critic_gradient() -> Result<FdSummary, String> {
    let m = full_size_model(AgentKind::LstmSac, false, 23);
    let batch = sac_batch(&m);
    let y: Vec<f64> = batch.rewards.iter().map(|r| r / 10.0).collect();
    let (_, grad, _) = sac_critic_loss_and_grad(&m, &m.params, &batch, &y).map_err(|e| e.to_string())?;
    fd_check(&m.params, &grad, |p| sac_critic_loss_and_grad(&m, p, &batch, &y).unwrap().0, 6)
}

pub fn sac_actor_gradient() -> Result<FdSummary, String> {
    let m = full_size_model(AgentKind::LstmSac, false, 29);
    let batch = sac_batch(&m);
    let y = vec![0.0; batch.rows()];
    let (_, _, q_min) = sac_critic_loss_and_grad(&m, &m.params, &batch, &y).map_err(|e| e.to_string())?;
    let alpha = 0.3;
    let (_, grad, _) = sac_actor_loss_and_grad(&m, &m.params, &batch, q_min.view(), alpha).map_err(|e| e.to_string())?;
    fd_check(&m.params, &grad, |p| sac_actor_loss_and_grad(&m, p, &batch, q_min.view(), alpha).unwrap().0, 7)
}
