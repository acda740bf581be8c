//! Per-VNF health process: a three-state Markov chain with a minimum warning
//! dwell and a critical probability that escalates the longer a VNF lingers in
//! warning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::FailureConfig;
use crate::error::{Error, Result};
use crate::rng::uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthKind {
    Normal,
    Warning,
    Critical,
}

impl HealthKind {
    pub const ALL: [HealthKind; 3] = [HealthKind::Normal, HealthKind::Warning, HealthKind::Critical];

    /// Numeric encoding 1 / 2 / 3.
    pub fn code(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn index(self) -> usize {
        match self {
            HealthKind::Normal => 0,
            HealthKind::Warning => 1,
            HealthKind::Critical => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthState {
    pub kind: HealthKind,
    /// Slots spent in warning since entry, counting the current one.
    pub warning_dwell: u32,
}

impl HealthState {
    pub const NORMAL: HealthState = HealthState {
        kind: HealthKind::Normal,
        warning_dwell: 0,
    };

    pub fn warning(dwell: u32) -> Self {
        Self {
            kind: HealthKind::Warning,
            warning_dwell: dwell,
        }
    }

    pub fn critical() -> Self {
        Self {
            kind: HealthKind::Critical,
            warning_dwell: 0,
        }
    }
}

impl Default for HealthState {
    fn default() -> Self {
        Self::NORMAL
    }
}

/// One-step transition probabilities plus the minimum warning dwell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfig {
    pub p_nn: f64,
    pub p_nw: f64,
    pub p_ww: f64,
    pub p_wc: f64,
    pub p_wn: f64,
    pub min_warning_dwell: u32,
}

const SIMPLEX_TOL: f64 = 1e-9;

impl TransitionConfig {
    /// Builds a config from the free parameters; the remaining probability of
    /// each row is filled in so rows sum to one.
    pub fn new(p_nw: f64, p_wc: f64, p_wn: f64, min_warning_dwell: u32) -> Result<Self> {
        let cfg = Self {
            p_nn: 1.0 - p_nw,
            p_nw,
            p_ww: 1.0 - p_wc - p_wn,
            p_wc,
            p_wn,
            min_warning_dwell,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_nn, self.p_nw, self.p_ww, self.p_wc, self.p_wn];
        if probs.iter().any(|p| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(p)) {
            return Err(Error::Config(format!("transition probabilities out of [0,1]: {probs:?}")));
        }
        if (self.p_nn + self.p_nw - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Config("p_nn + p_nw must equal 1".into()));
        }
        if (self.p_ww + self.p_wc + self.p_wn - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Config("p_ww + p_wc + p_wn must equal 1".into()));
        }
        if self.min_warning_dwell < 1 {
            return Err(Error::Config("min_warning_dwell must be >= 1".into()));
        }
        Ok(())
    }

    /// Warning-row probabilities `(stay, critical, normal)` after `dwell` slots
    /// in warning, with the critical probability escalated to
    /// `min(1, p_wc * (1 + dwell - q))`. The added mass is taken from the stay
    /// probability first, then from the return-to-normal probability.
    pub fn warning_row(&self, dwell: u32) -> (f64, f64, f64) {
        let over = dwell.saturating_sub(self.min_warning_dwell) as f64;
        let wc = (self.p_wc * (1.0 + over)).min(1.0);
        let mut extra = wc - self.p_wc;
        let mut ww = self.p_ww;
        let mut wn = self.p_wn;
        let take = extra.min(ww);
        ww -= take;
        extra -= take;
        wn = (wn - extra).max(0.0);
        (ww.max(0.0), wc, wn)
    }
}

/// Draws an episode's transition probabilities from the configured ranges.
pub fn sample_episode_config<R: Rng + ?Sized>(rng: &mut R, ranges: &FailureConfig) -> Result<TransitionConfig> {
    if ranges.p_wc_range[1] + ranges.p_wn_range[1] > 1.0 {
        return Err(Error::Config(
            "failure ranges: max(p_wc) + max(p_wn) exceeds 1".into(),
        ));
    }
    let p_nw = uniform(rng, ranges.p_nw_range);
    let p_wc = uniform(rng, ranges.p_wc_range);
    let p_wn = uniform(rng, ranges.p_wn_range);
    TransitionConfig::new(p_nw, p_wc, p_wn, ranges.min_warning_dwell)
}

/// Advances one slot. Critical is absorbing here; only [`recover`] leaves it.
pub fn step_health<R: Rng + ?Sized>(state: HealthState, cfg: &TransitionConfig, rng: &mut R) -> HealthState {
    match state.kind {
        HealthKind::Normal => {
            if rng.random::<f64>() < cfg.p_nw {
                HealthState::warning(1)
            } else {
                HealthState::NORMAL
            }
        }
        HealthKind::Warning if state.warning_dwell < cfg.min_warning_dwell => {
            HealthState::warning(state.warning_dwell + 1)
        }
        HealthKind::Warning => {
            let (_, wc, wn) = cfg.warning_row(state.warning_dwell);
            let u = rng.random::<f64>();
            if u < wc {
                HealthState::critical()
            } else if u < wc + wn {
                HealthState::NORMAL
            } else {
                HealthState::warning(state.warning_dwell + 1)
            }
        }
        HealthKind::Critical => state,
    }
}

/// Completes recovery of a critical VNF.
pub fn recover(state: HealthState) -> Result<HealthState> {
    match state.kind {
        HealthKind::Critical => Ok(HealthState::NORMAL),
        other => Err(Error::Contract(format!("recover called on a {other:?} VNF"))),
    }
}
