mod common;

use pfrsim_core::config::MonitoringConfig;
use pfrsim_core::metrics::{evaluation_seeds, run_episodes, BaselineKind, BaselinePolicy};
use pfrsim_core::monitoring::Trigger;
use pfrsim_core::EnvConfig;

use common::{aoi_replay, freshness_recount};

fn logs(monitoring: MonitoringConfig, episodes: usize, seed: u64) -> Vec<pfrsim_core::env::EpisodeLog> {
    let cfg = EnvConfig {
        monitoring,
        ..EnvConfig::default()
    };
    run_episodes(&mut BaselinePolicy::new(BaselineKind::Random), &cfg, 5, &evaluation_seeds(seed, episodes), false).unwrap()
}

#[test]
fn loss_free_freshness_holds_for_ten_thousand_slots() {
    let m = MonitoringConfig {
        kappa_normal: 2.0,
        kappa_warning: 2.0,
        kappa_critical: 1.0,
        loss_probability: 0.0,
        ..MonitoringConfig::default()
    };
    let logs = logs(m, 100, 1);
    let slots: usize = logs.iter().map(|l| l.slots.len()).sum();
    assert!(slots >= 10_000);
    for log in &logs {
        aoi_replay(log).unwrap();
        assert_eq!(freshness_recount(log), 0);
        assert!(log.slots.iter().all(|s| s.freshness_violations == 0));
    }
}

#[test]
fn replay_matches_under_loss() {
    for (loss, seed) in [(0.2, 2), (0.6, 3), (1.0, 4)] {
        let m = MonitoringConfig {
            loss_probability: loss,
            ..MonitoringConfig::default()
        };
        let logs = logs(m, 30, seed);
        let mut violations = 0;
        for log in &logs {
            aoi_replay(log).unwrap();
            let logged: usize = log.slots.iter().map(|s| s.freshness_violations).sum();
            assert_eq!(logged, freshness_recount(log));
            violations += logged;
        }
        assert!(violations > 0, "loss {loss} produced no stale ages");
    }
}

#[test]
fn message_count_equals_triggers() {
    let logs = logs(MonitoringConfig { loss_probability: 0.3, ..MonitoringConfig::default() }, 10, 9);
    for log in &logs {
        for s in &log.slots {
            let sent = s.vnfs.iter().filter(|i| i.trigger != Trigger::None).count();
            assert_eq!(s.messages, sent);
            assert!(s.vnfs.iter().all(|i| !i.report_delivered || i.trigger != Trigger::None));
        }
    }
}

#[test]
fn total_loss_never_reports() {
    let logs = logs(MonitoringConfig { loss_probability: 1.0, ..MonitoringConfig::default() }, 3, 10);
    for log in &logs {
        assert!(log.slots.iter().flat_map(|s| &s.vnfs).all(|i| i.reported_state.is_none() && i.age.is_none()));
    }
}
