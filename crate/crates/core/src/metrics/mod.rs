//! Decision-accuracy metrics, episode runners and the evaluation protocol.

pub mod policy;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::env::{EpisodeLog, RecoveryClass, RecoveryEnv, SlotRecord, VnfAction};
use crate::error::{Error, Result};
use crate::failure::HealthKind;
use crate::rng::{derive_seed, seeded};

pub use policy::{observation_matrix, BaselineKind, BaselinePolicy, NeuralPolicy, Policy};

const POLICY_RNG_TAG: u64 = 0x90_11c7;

/// A count-backed ratio; `None` when nothing was counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub hits: u64,
    pub total: u64,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }

    pub fn add(&mut self, hit: bool) {
        self.total += 1;
        if hit {
            self.hits += 1;
        }
    }

    pub fn merge(&mut self, other: &Ratio) {
        self.hits += other.hits;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Critical occurrences met with a recovery action.
    pub csa: Ratio,
    /// Warning occurrences met with backup placement.
    pub wsa: Ratio,
    /// Normal occurrences met with backup removal, or with no action when
    /// there is nothing to remove.
    pub nsa: Ratio,
    /// Recoveries that were proactive.
    pub pfr: Ratio,
    /// Recoveries that were reactive.
    pub rfr: Ratio,
    /// Backup placement rate in warning keyed by slots spent in warning.
    pub dwell_bp: BTreeMap<u32, Ratio>,
    pub episodes: usize,
    pub return_sum: f64,
    pub phi_fa_total: f64,
    pub sla_violations: u64,
}

impl AccuracyReport {
    pub fn csa(&self) -> Option<f64> {
        self.csa.value()
    }
    pub fn wsa(&self) -> Option<f64> {
        self.wsa.value()
    }
    pub fn nsa(&self) -> Option<f64> {
        self.nsa.value()
    }
    pub fn pfr_accuracy(&self) -> Option<f64> {
        self.pfr.value()
    }
    pub fn rfr_accuracy(&self) -> Option<f64> {
        self.rfr.value()
    }

    pub fn mean_return(&self) -> Option<f64> {
        (self.episodes > 0).then(|| self.return_sum / self.episodes as f64)
    }

    pub fn merge(&mut self, other: &AccuracyReport) {
        self.csa.merge(&other.csa);
        self.wsa.merge(&other.wsa);
        self.nsa.merge(&other.nsa);
        self.pfr.merge(&other.pfr);
        self.rfr.merge(&other.rfr);
        for (d, r) in &other.dwell_bp {
            self.dwell_bp.entry(*d).or_default().merge(r);
        }
        self.episodes += other.episodes;
        self.return_sum += other.return_sum;
        self.phi_fa_total += other.phi_fa_total;
        self.sla_violations += other.sla_violations;
    }

    fn add_slot(&mut self, slot: &SlotRecord) {
        for v in &slot.vnfs {
            match v.true_state {
                HealthKind::Critical => self.csa.add(v.beta),
                HealthKind::Warning => {
                    let bp = v.action == VnfAction::Bp;
                    self.wsa.add(bp);
                    self.dwell_bp.entry(v.warning_dwell).or_default().add(bp);
                }
                HealthKind::Normal => {
                    self.nsa.add(v.action == VnfAction::Br || (v.action == VnfAction::NoOp && !v.m))
                }
            }
            if let Some(class) = v.recovery {
                self.pfr.add(class == RecoveryClass::Pfr);
                self.rfr.add(class == RecoveryClass::Rfr);
            }
            if v.sla_violation {
                self.sla_violations += 1;
            }
        }
        self.return_sum += slot.reward.total;
        self.phi_fa_total += slot.reward.phi_fa;
    }
}

pub fn score_episode(log: &EpisodeLog) -> AccuracyReport {
    let mut r = AccuracyReport {
        episodes: 1,
        ..Default::default()
    };
    for slot in &log.slots {
        r.add_slot(slot);
    }
    r
}

pub fn score_episodes(logs: &[EpisodeLog]) -> AccuracyReport {
    let mut total = AccuracyReport::default();
    for l in logs {
        total.merge(&score_episode(l));
    }
    total
}

/// P(BP | warning, dwell = d) with counts.
pub fn dwell_conditional_bp_rate(logs: &[EpisodeLog]) -> BTreeMap<u32, Ratio> {
    score_episodes(logs).dwell_bp
}

/// Runs one episode per seed with all environments in lockstep. Environments
/// share the substrate built from `substrate_seed`.
pub fn run_episodes(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    substrate_seed: u64,
    seeds: &[u64],
    parallel: bool,
) -> Result<Vec<EpisodeLog>> {
    if seeds.is_empty() {
        return Ok(Vec::new());
    }
    let proto = RecoveryEnv::new(cfg.clone(), substrate_seed)?;
    let mut envs = vec![proto; seeds.len()];
    let mut logs = Vec::with_capacity(seeds.len());
    for (i, (env, &seed)) in envs.iter_mut().zip(seeds).enumerate() {
        env.reset(seed)?;
        logs.push(EpisodeLog {
            header: env.header(i),
            slots: Vec::with_capacity(cfg.episode_length),
        });
    }
    let mut rngs: Vec<_> = seeds.iter().map(|s| seeded(derive_seed(*s, &[POLICY_RNG_TAG]))).collect();
    policy.begin(seeds.len())?;
    for _ in 0..cfg.episode_length {
        let actions = policy.act(&envs, &mut rngs)?;
        let outcomes: Vec<Result<_>> = if parallel {
            envs.par_iter_mut().zip(actions.par_iter()).map(|(e, a)| e.step(a)).collect()
        } else {
            envs.iter_mut().zip(&actions).map(|(e, a)| e.step(a)).collect()
        };
        for (log, out) in logs.iter_mut().zip(outcomes) {
            let out = out?;
            log.slots.push(out.info.ok_or_else(|| Error::Contract("step returned no record".into()))?);
        }
    }
    Ok(logs)
}

/// Fixed evaluation seed set derived from `base`.
pub fn evaluation_seeds(base: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|k| derive_seed(base, &[0xe7a1, k])).collect()
}

pub fn evaluate(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    substrate_seed: u64,
    seeds: &[u64],
    parallel: bool,
) -> Result<AccuracyReport> {
    Ok(score_episodes(&run_episodes(policy, cfg, substrate_seed, seeds, parallel)?))
}

/// Evaluation on a substrate and failure regime drawn from `fresh_seed`,
/// unrelated to the training environment.
pub fn robustness_probe(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    fresh_seed: u64,
    episodes: usize,
    parallel: bool,
) -> Result<AccuracyReport> {
    let substrate_seed = derive_seed(fresh_seed, &[0x5b57_0001]);
    let seeds = evaluation_seeds(derive_seed(fresh_seed, &[0x5b57_0002]), episodes);
    evaluate(policy, cfg, substrate_seed, &seeds, parallel)
}
