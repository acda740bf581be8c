//! Clipped-surrogate policy optimisation over full recurrent episodes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::rollout::{compute_advantage, compute_returns, normalize, Trajectory};
use crate::config::{Credit, PpoConfig};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, DropoutMode, PolicyModel, ACTIONS};

/// A batch of equal-length episodes laid out time-major.
///
/// Advantages, value targets and old log-probabilities come in `groups`
/// columns per row: one for joint credit, one per VNF for per-VNF credit.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub steps: usize,
    pub batch: usize,
    pub vnf_count: usize,
    pub groups: usize,
    pub obs: Array2<f64>,
    /// `rows * vnf_count` action indices.
    pub actions: Vec<usize>,
    /// `rows * groups` log-probabilities at collection time.
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Returns divided by the value scale.
    pub value_targets: Vec<f64>,
    pub actor_seeds: Vec<u64>,
    pub critic_seeds: Vec<u64>,
}

impl PpoBatch {
    pub fn from_trajectories(trajs: &[Trajectory], gamma: f64, cfg: &PpoConfig) -> Result<Self> {
        let batch = trajs.len();
        let steps = trajs.first().map_or(0, Trajectory::len);
        if batch == 0 || steps == 0 {
            return Err(Error::Shape("empty rollout batch".into()));
        }
        if trajs.iter().any(|t| t.len() != steps) {
            return Err(Error::Shape("episodes in a batch must have equal length".into()));
        }
        let width = trajs[0].obs[0].len();
        let vnf_count = trajs[0].actions[0].len();
        let groups = match cfg.credit {
            Credit::Joint => 1,
            Credit::PerVnf => vnf_count,
        };
        if trajs.iter().any(|t| t.values.iter().any(|v| v.len() != groups)) {
            return Err(Error::Shape(format!("critic must provide {groups} value(s) per slot")));
        }
        let rows = steps * batch;
        let mut obs = Array2::zeros((rows, width));
        let mut actions = vec![0; rows * vnf_count];
        let mut old = vec![0.0; rows * groups];
        let mut adv = vec![0.0; rows * groups];
        let mut targets = vec![0.0; rows * groups];
        for (b, tr) in trajs.iter().enumerate() {
            for t in 0..steps {
                let r = t * batch + b;
                obs.row_mut(r).assign(&ndarray::ArrayView1::from(&tr.obs[t]));
                actions[r * vnf_count..(r + 1) * vnf_count].copy_from_slice(&tr.actions[t]);
            }
            for g in 0..groups {
                let (rewards, logp): (Vec<f64>, Vec<f64>) = match cfg.credit {
                    Credit::Joint => (tr.rewards.clone(), tr.log_probs.clone()),
                    Credit::PerVnf => (
                        tr.vnf_rewards.iter().map(|r| r[g]).collect(),
                        tr.head_log_probs.iter().map(|l| l[g]).collect(),
                    ),
                };
                let values: Vec<f64> = tr.values.iter().map(|v| v[g]).collect();
                let ret = compute_returns(&rewards, &tr.dones, gamma);
                let a = compute_advantage(&ret, &values);
                for t in 0..steps {
                    let i = (t * batch + b) * groups + g;
                    old[i] = logp[t];
                    adv[i] = a[t];
                    targets[i] = ret[t] / cfg.value_scale;
                }
            }
        }
        if cfg.normalize_advantage {
            normalize(&mut adv);
        }
        Ok(Self {
            steps,
            batch,
            vnf_count,
            groups,
            obs,
            actions,
            old_log_probs: old,
            advantages: adv,
            value_targets: targets,
            actor_seeds: trajs.iter().map(|t| t.dropout_seed).collect(),
            critic_seeds: trajs.iter().map(Trajectory::critic_dropout_seed).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    /// The episodes with the given batch indices.
    pub fn subset(&self, episodes: &[usize]) -> Self {
        let nb = episodes.len();
        let (v, k) = (self.vnf_count, self.groups);
        let mut obs = Array2::zeros((self.steps * nb, self.obs.ncols()));
        let mut actions = vec![0; self.steps * nb * v];
        let mut old = vec![0.0; self.steps * nb * k];
        let mut adv = vec![0.0; self.steps * nb * k];
        let mut targets = vec![0.0; self.steps * nb * k];
        for t in 0..self.steps {
            for (j, &b) in episodes.iter().enumerate() {
                let (src, dst) = (t * self.batch + b, t * nb + j);
                obs.row_mut(dst).assign(&self.obs.row(src));
                actions[dst * v..(dst + 1) * v].copy_from_slice(&self.actions[src * v..(src + 1) * v]);
                let (s, d) = (src * k..(src + 1) * k, dst * k..(dst + 1) * k);
                old[d.clone()].copy_from_slice(&self.old_log_probs[s.clone()]);
                adv[d.clone()].copy_from_slice(&self.advantages[s.clone()]);
                targets[d].copy_from_slice(&self.value_targets[s]);
            }
        }
        Self {
            steps: self.steps,
            batch: nb,
            vnf_count: v,
            groups: k,
            obs,
            actions,
            old_log_probs: old,
            advantages: adv,
            value_targets: targets,
            actor_seeds: episodes.iter().map(|&b| self.actor_seeds[b]).collect(),
            critic_seeds: episodes.iter().map(|&b| self.critic_seeds[b]).collect(),
        }
    }

    /// Action heads credited by group `g`.
    fn heads(&self, g: usize) -> std::ops::Range<usize> {
        if self.groups == 1 {
            0..self.vnf_count
        } else {
            g..g + 1
        }
    }
}

/// `min(p * adv, clip(p, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoLoss {
    /// Composite loss that is minimised.
    pub total: f64,
    /// Negated mean clipped surrogate.
    pub policy: f64,
    pub value: f64,
    /// Mean joint entropy per slot.
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
    /// Transitions whose clipped term exceeded the unclipped one.
    pub clip_violations: usize,
}

/// Composite loss `-(L_clip - c1 * L_vf + c2 * H)` averaged over rows, and
/// its gradient with respect to every model parameter. With per-VNF credit
/// the surrogate sums over heads and the value error is averaged over them.
pub fn ppo_loss_and_grad(model: &PolicyModel, params: &[f64], batch: &PpoBatch, cfg: &PpoConfig) -> Result<(PpoLoss, Vec<f64>)> {
    let rows = batch.rows();
    let n = rows as f64;
    let heads = batch.vnf_count;
    let (dist, _, actor_cache, _) = model.actor_forward(
        params,
        batch.obs.view(),
        batch.steps,
        batch.batch,
        None,
        DropoutMode::Seeded {
            seeds: &batch.actor_seeds,
            t0: 0,
        },
    )?;
    let (values, critic_cache, _) = model.critic.forward(
        params,
        batch.obs.view(),
        batch.steps,
        batch.batch,
        None,
        DropoutMode::Seeded {
            seeds: &batch.critic_seeds,
            t0: 0,
        },
    )?;

    let k = batch.groups;
    if values.ncols() != k {
        return Err(Error::Shape(format!("critic emits {} values, batch expects {k}", values.ncols())));
    }
    let mut d_logits = Array2::<f64>::zeros((rows, heads * ACTIONS));
    let mut d_values = Array2::<f64>::zeros((rows, k));
    let mut loss = PpoLoss::default();
    let mut surrogate_sum = 0.0;
    let mut clipped = 0usize;
    let nk = n * k as f64;
    for r in 0..rows {
        let acts = &batch.actions[r * heads..(r + 1) * heads];
        for g in 0..k {
            let i = r * k + g;
            let lp: f64 = batch.heads(g).map(|v| dist.log_prob_of(r, v, acts[v])).sum();
            let ratio = (lp - batch.old_log_probs[i]).exp();
            let adv = batch.advantages[i];
            let unclipped = ratio * adv;
            let term = clipped_surrogate(ratio, adv, cfg.clip);
            if term > unclipped {
                loss.clip_violations += 1;
            }
            surrogate_sum += term;
            loss.max_ratio_deviation = loss.max_ratio_deviation.max((ratio - 1.0).abs());
            loss.approx_kl += (batch.old_log_probs[i] - lp) / nk;
            if (ratio - 1.0).abs() > cfg.clip {
                clipped += 1;
            }
            // d term / d logp: ratio * adv on the unclipped branch, zero when clipped.
            let d_lp = if unclipped <= term { adv * ratio } else { 0.0 };
            let g_lp = -d_lp / n;
            for v in batch.heads(g) {
                for j in 0..ACTIONS {
                    let ind = if j == acts[v] { 1.0 } else { 0.0 };
                    d_logits[[r, v * ACTIONS + j]] += g_lp * (ind - dist.prob(r, v, j));
                }
            }

            let err = values[[r, g]] - batch.value_targets[i];
            loss.value += err * err / nk;
            d_values[[r, g]] = cfg.value_coef * 2.0 * err / nk;
        }

        let mut row_entropy = 0.0;
        for v in 0..heads {
            let h = dist.head_entropy(r, v);
            row_entropy += h;
            for j in 0..ACTIONS {
                // dH/dlogit_j = -p_j (log p_j + H); the loss carries -c2 * H / n.
                let p = dist.prob(r, v, j);
                d_logits[[r, v * ACTIONS + j]] += cfg.entropy_coef / n * p * (dist.log_prob_of(r, v, j) + h);
            }
        }
        loss.entropy += row_entropy / n;
    }
    loss.policy = -surrogate_sum / n;
    loss.clip_fraction = clipped as f64 / nk;
    loss.total = loss.policy + cfg.value_coef * loss.value - cfg.entropy_coef * loss.entropy;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite {
            what: "ppo loss".into(),
            detail: format!("policy {} value {} entropy {}", loss.policy, loss.value, loss.entropy),
        });
    }
    let mut grad = vec![0.0; params.len()];
    model.actor.backward(params, &actor_cache, d_logits.view(), &mut grad);
    model.critic.backward(params, &critic_cache, d_values.view(), &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoUpdateReport {
    pub epochs: Vec<PpoLoss>,
    /// Largest |ratio - 1| on the first pass, before any parameter change.
    pub first_pass_ratio_deviation: f64,
    pub clip_violations: usize,
    pub last_grad_norm: f64,
}

impl PpoUpdateReport {
    pub fn last(&self) -> PpoLoss {
        self.epochs.last().copied().unwrap_or_default()
    }
}

/// `cfg.epochs` passes over the batch, each split into `cfg.minibatches`
/// groups of whole episodes.
pub fn ppo_update(model: &mut PolicyModel, adam: &mut Adam, batch: &PpoBatch, cfg: &PpoConfig) -> Result<PpoUpdateReport> {
    let mut report = PpoUpdateReport::default();
    let groups = cfg.minibatches.clamp(1, batch.batch);
    let chunks: Vec<Vec<usize>> = (0..groups)
        .map(|g| (0..batch.batch).filter(|b| b % groups == g).collect())
        .collect();
    let subsets: Vec<PpoBatch> = if groups == 1 {
        Vec::new()
    } else {
        chunks.iter().map(|c| batch.subset(c)).collect()
    };
    let mut first = true;
    for _ in 0..cfg.epochs {
        let mut epoch = PpoLoss::default();
        for g in 0..groups {
            let mb = if groups == 1 { batch } else { &subsets[g] };
            let (loss, mut grad) = ppo_loss_and_grad(model, &model.params, mb, cfg)?;
            if first {
                report.first_pass_ratio_deviation = loss.max_ratio_deviation;
                first = false;
            }
            report.clip_violations += loss.clip_violations;
            report.last_grad_norm = clip_global_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut model.params, &grad)?;
            model.version += 1;
            let w = 1.0 / groups as f64;
            epoch.total += w * loss.total;
            epoch.policy += w * loss.policy;
            epoch.value += w * loss.value;
            epoch.entropy += w * loss.entropy;
            epoch.approx_kl += w * loss.approx_kl;
            epoch.clip_fraction += w * loss.clip_fraction;
            epoch.max_ratio_deviation = epoch.max_ratio_deviation.max(loss.max_ratio_deviation);
            epoch.clip_violations += loss.clip_violations;
        }
        report.epochs.push(epoch);
    }
    model.check_finite()?;
    Ok(report)
}
