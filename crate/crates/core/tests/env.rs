mod common;

use pfrsim_core::env::{RecoveryClass, RecoveryEnv, VnfAction};
use pfrsim_core::failure::{HealthKind, HealthState};
use pfrsim_core::metrics::{evaluate, evaluation_seeds, BaselineKind, BaselinePolicy};
use pfrsim_core::EnvConfig;

fn env() -> RecoveryEnv {
    let mut e = RecoveryEnv::new(EnvConfig::default(), 11).unwrap();
    e.reset(5).unwrap();
    e
}

fn noop(e: &RecoveryEnv) -> Vec<VnfAction> {
    vec![VnfAction::NoOp; e.vnf_count()]
}

#[test]
fn reset_starts_clean() {
    let e = env();
    assert_eq!(e.vnf_count(), 9);
    assert_eq!(e.observation_width(), 9 * 6 + 5 * 3);
    assert!(e.true_health().iter().all(|h| h.kind == HealthKind::Normal));
    assert!((0..9).all(|v| !e.has_backup(v)));
    assert_eq!(e.network_state().backups().count(), 0);
    assert_eq!(e.slot(), 0);
}

#[test]
fn same_seed_same_episode() {
    let mut a = RecoveryEnv::new(EnvConfig::default(), 11).unwrap();
    let mut b = a.clone();
    assert_eq!(a.reset(9).unwrap().observation, b.reset(9).unwrap().observation);
    for t in 0..100 {
        let acts: Vec<VnfAction> = (0..9).map(|v| VnfAction::ALL[(t + v) % 4]).collect();
        let (x, y) = (a.step(&acts).unwrap(), b.step(&acts).unwrap());
        assert_eq!(x.observation, y.observation);
        assert_eq!(x.info, y.info);
    }
}

#[test]
fn done_exactly_at_episode_length() {
    let mut e = env();
    for t in 1..=100 {
        let out = e.step(&noop(&e)).unwrap();
        assert_eq!(out.done, t == 100, "slot {t}");
    }
    assert!(e.step(&noop(&e)).is_err());
}

#[test]
fn wrong_action_count_is_rejected() {
    let mut e = env();
    assert!(e.step(&[VnfAction::NoOp; 3]).is_err());
}

#[test]
fn vnf_rewards_sum_to_total() {
    let mut e = env();
    for t in 0..100 {
        let acts: Vec<VnfAction> = (0..9).map(|v| VnfAction::ALL[(t * 7 + v * 3) % 4]).collect();
        let out = e.step(&acts).unwrap();
        let s: f64 = out.vnf_rewards.iter().sum();
        assert!((s - out.reward.total).abs() < 1e-9);
    }
}

#[test]
fn backup_placed_two_slots_before_critical_gives_pfr() {
    let mut e = env();
    let mut acts = noop(&e);
    acts[0] = VnfAction::Bp;
    e.step(&acts).unwrap();
    e.step(&noop(&e)).unwrap();
    e.force_health(0, HealthState::critical());
    acts[0] = VnfAction::Ss;
    let out = e.step(&acts).unwrap();
    let info = &out.info.unwrap().vnfs[0];
    assert_eq!(info.recovery, Some(RecoveryClass::Pfr));
    assert!(info.m && info.beta && info.rho);
}

#[test]
fn backup_in_the_critical_slot_is_reactive() {
    let mut e = env();
    e.force_health(0, HealthState::critical());
    let mut acts = noop(&e);
    acts[0] = VnfAction::Bp;
    let out = e.step(&acts).unwrap();
    let info = &out.info.unwrap().vnfs[0];
    assert_eq!(info.recovery, Some(RecoveryClass::Rfr));
    assert!(!info.m);
    assert!(out.reward.phi_sla >= 1.0);
}

#[test]
fn recovered_vnf_is_normal_next_slot() {
    let mut e = env();
    e.force_health(2, HealthState::critical());
    let mut acts = noop(&e);
    acts[2] = VnfAction::Ss;
    e.step(&acts).unwrap();
    // One slot of transitions has run; a fresh Normal can only move to Warning.
    assert_ne!(e.true_health()[2].kind, HealthKind::Critical);
}

#[test]
fn critical_persists_without_recovery() {
    let mut e = env();
    e.force_health(4, HealthState::critical());
    for _ in 0..20 {
        e.step(&noop(&e)).unwrap();
        assert_eq!(e.true_health()[4].kind, HealthKind::Critical);
    }
}

#[test]
fn random_policy_returns_below_oracle() {
    let seeds = evaluation_seeds(42, 50);
    let cfg = EnvConfig::default();
    let random = evaluate(&mut BaselinePolicy::new(BaselineKind::Random), &cfg, 3, &seeds, true).unwrap();
    let oracle = evaluate(&mut BaselinePolicy::new(BaselineKind::Oracle), &cfg, 3, &seeds, true).unwrap();
    assert!(random.mean_return().unwrap() < oracle.mean_return().unwrap());
}

#[test]
fn backlog_never_negative_and_drains_under_enough_bandwidth() {
    let mut e = env();
    let mut acts = noop(&e);
    acts[1] = VnfAction::Bp;
    e.step(&acts).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..30 {
        let out = e.step(&noop(&e)).unwrap();
        for info in &out.info.as_ref().unwrap().vnfs {
            assert!(info.backlog_bits >= 0.0);
        }
        if e.has_backup(1) {
            // Baseline bandwidth exceeds statelet generation at defaults.
            assert!(e.backlog_bits()[1] <= last);
            last = e.backlog_bits()[1];
        }
    }
}
