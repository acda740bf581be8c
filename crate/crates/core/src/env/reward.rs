use serde::{Deserialize, Serialize};

use super::{RecoveryClass, VnfAction};
use crate::config::RewardConfig;
use crate::failure::HealthKind;

/// Per-slot cost terms and reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub phi_sla: f64,
    pub phi_rc: f64,
    pub phi_fa: f64,
    /// Negative weighted cost.
    pub r1: f64,
    /// Shaping bonuses.
    pub r2: f64,
    pub total: f64,
}

/// What the reward needs to know about one VNF in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    /// True state during the slot, before any recovery.
    pub state: HealthKind,
    pub action: VnfAction,
    pub beta: bool,
    /// Backup present at slot start.
    pub m: bool,
    pub backup_cost: f64,
    pub backup_after: bool,
    pub recovery: Option<RecoveryClass>,
}

pub fn evaluate(cfg: &RewardConfig, vnfs: &[RewardInputs]) -> RewardBreakdown {
    let mut unprotected = 0.0;
    let mut holding = 0.0;
    let mut mismatched = 0.0;
    let mut r2 = 0.0;
    for v in vnfs {
        let rho = v.state == HealthKind::Critical;
        if rho && !v.m {
            unprotected += 1.0;
        }
        if v.m {
            holding += cfg.alpha[v.state.index()] * v.backup_cost;
        }
        if rho != v.beta {
            mismatched += 1.0;
        }

        if v.action == VnfAction::Br && v.state == HealthKind::Normal {
            r2 += cfg.bonus_br_normal;
        }
        if v.action == VnfAction::Bp && v.state == HealthKind::Warning && v.backup_after {
            r2 += cfg.bonus_bp_warning;
        }
        if rho && v.beta {
            r2 += cfg.bonus_recovery_critical;
        }
        if v.recovery == Some(RecoveryClass::Pfr) {
            r2 += cfg.bonus_pfr;
        }
    }
    let phi_sla = cfg.psi_b * unprotected;
    let phi_rc = holding;
    let phi_fa = cfg.psi_f * mismatched;
    let r1 = -cfg.eta[0] * phi_sla - cfg.eta[1] * phi_rc - cfg.eta[2] * phi_fa;
    RewardBreakdown {
        phi_sla,
        phi_rc,
        phi_fa,
        r1,
        r2,
        total: r1 + r2,
    }
}
