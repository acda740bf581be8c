//! Discrete soft actor-critic with twin per-head Q tables. The joint Q value
//! of an action vector is the sum of the per-VNF entries.

use std::collections::VecDeque;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use super::rollout::Trajectory;
use crate::config::SacConfig;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, ActionDistribution, Adam, DropoutMode, PolicyModel, ACTIONS};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SacEpisode {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl SacEpisode {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        let width = t.obs.first().map_or(0, Vec::len);
        let mut obs = Array2::zeros((t.len(), width));
        for (i, o) in t.obs.iter().enumerate() {
            obs.row_mut(i).assign(&ndarray::ArrayView1::from(o));
        }
        Self {
            obs,
            actions: t.actions.concat(),
            rewards: t.rewards.clone(),
            dones: t.dones.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// First-in first-out store of whole episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<SacEpisode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            episodes: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, ep: SacEpisode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(ep);
    }

    /// `n` distinct episodes chosen uniformly.
    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Result<Vec<&SacEpisode>> {
        if self.episodes.len() < n || n == 0 {
            return Err(Error::ReplayUnderflow {
                available: self.episodes.len(),
                needed: n.max(1),
            });
        }
        Ok(sample_indices(rng, self.episodes.len(), n)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect())
    }
}

/// Equal-length episodes laid out time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SacBatch {
    pub steps: usize,
    pub batch: usize,
    pub vnf_count: usize,
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl SacBatch {
    pub fn from_episodes(eps: &[&SacEpisode]) -> Result<Self> {
        let batch = eps.len();
        let steps = eps.first().map_or(0, |e| e.len());
        if batch == 0 || steps == 0 {
            return Err(Error::Shape("empty replay batch".into()));
        }
        if eps.iter().any(|e| e.len() != steps) {
            return Err(Error::Shape("episodes in a batch must have equal length".into()));
        }
        let v = eps[0].actions.len() / steps;
        let rows = steps * batch;
        let mut obs = Array2::zeros((rows, eps[0].obs.ncols()));
        let mut actions = vec![0; rows * v];
        let mut rewards = vec![0.0; rows];
        let mut dones = vec![false; rows];
        for (b, e) in eps.iter().enumerate() {
            for t in 0..steps {
                let r = t * batch + b;
                obs.row_mut(r).assign(&e.obs.row(t));
                actions[r * v..(r + 1) * v].copy_from_slice(&e.actions[t * v..(t + 1) * v]);
                rewards[r] = e.rewards[t];
                dones[r] = e.dones[t] || t + 1 == steps;
            }
        }
        Ok(Self {
            steps,
            batch,
            vnf_count: v,
            obs,
            actions,
            rewards,
            dones,
        })
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }
}

fn min_q(q: ArrayView2<f64>, heads: usize) -> Array2<f64> {
    let w = heads * ACTIONS;
    let mut out = q.slice(s![.., 0..w]).to_owned();
    ndarray::Zip::from(&mut out)
        .and(q.slice(s![.., w..2 * w]))
        .for_each(|a, &b| *a = a.min(b));
    out
}

/// Soft Bellman targets from the target critic and the current actor.
pub fn sac_targets(model: &PolicyModel, batch: &SacBatch, cfg: &SacConfig, gamma: f64) -> Result<Vec<f64>> {
    let target = model
        .target_critic
        .as_ref()
        .ok_or_else(|| Error::Contract("soft actor-critic needs a target critic".into()))?;
    let heads = batch.vnf_count;
    let tower = model.detached_critic();
    let (q, _, _) = tower.forward(target, batch.obs.view(), batch.steps, batch.batch, None, DropoutMode::Off)?;
    let qmin = min_q(q.view(), heads);
    let (dist, _, _, _) = model.actor_forward(&model.params, batch.obs.view(), batch.steps, batch.batch, None, DropoutMode::Off)?;
    let alpha = model.log_alpha.exp();
    let rows = batch.rows();
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        let mut bootstrap = 0.0;
        if !batch.dones[r] {
            let next = r + batch.batch;
            for v in 0..heads {
                for a in 0..ACTIONS {
                    let p = dist.prob(next, v, a);
                    bootstrap += p * (qmin[[next, v * ACTIONS + a]] - alpha * dist.log_prob_of(next, v, a));
                }
            }
        }
        y[r] = cfg.reward_scale * batch.rewards[r] + gamma * bootstrap;
    }
    Ok(y)
}

/// Mean squared error of both Q estimates against `y`, its gradient, and the
/// element-wise minimum of the two Q tables.
pub fn sac_critic_loss_and_grad(model: &PolicyModel, params: &[f64], batch: &SacBatch, y: &[f64]) -> Result<(f64, Vec<f64>, Array2<f64>)> {
    let heads = batch.vnf_count;
    let w = heads * ACTIONS;
    let (q, cache, _) = model.critic.forward(params, batch.obs.view(), batch.steps, batch.batch, None, DropoutMode::Off)?;
    let rows = batch.rows();
    let n = rows as f64;
    let mut d = Array2::<f64>::zeros(q.raw_dim());
    let mut loss = 0.0;
    for r in 0..rows {
        let acts = &batch.actions[r * heads..(r + 1) * heads];
        for twin in 0..2 {
            let base = twin * w;
            let joint: f64 = acts.iter().enumerate().map(|(v, &a)| q[[r, base + v * ACTIONS + a]]).sum();
            let err = joint - y[r];
            loss += err * err / n;
            for (v, &a) in acts.iter().enumerate() {
                d[[r, base + v * ACTIONS + a]] = 2.0 * err / n;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "critic loss".into(),
            detail: format!("{loss}"),
        });
    }
    let mut grad = vec![0.0; params.len()];
    model.critic.backward(params, &cache, d.view(), &mut grad);
    Ok((loss, grad, min_q(q.view(), heads)))
}

/// `mean_rows sum_heads sum_a pi(a) (alpha log pi(a) - Q(a))`, its gradient,
/// and the mean per-slot sum of head entropies.
pub fn sac_actor_loss_and_grad(
    model: &PolicyModel,
    params: &[f64],
    batch: &SacBatch,
    q_min: ArrayView2<f64>,
    alpha: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let heads = batch.vnf_count;
    let (dist, _, cache, _) = model.actor_forward(params, batch.obs.view(), batch.steps, batch.batch, None, DropoutMode::Off)?;
    let (loss, d, entropy) = actor_objective(&dist, q_min, alpha, heads);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "actor loss".into(),
            detail: format!("{loss}"),
        });
    }
    let mut grad = vec![0.0; params.len()];
    model.actor.backward(params, &cache, d.view(), &mut grad);
    Ok((loss, grad, entropy))
}

/// Actor objective and its gradient with respect to the logits.
pub fn actor_objective(dist: &ActionDistribution, q_min: ArrayView2<f64>, alpha: f64, heads: usize) -> (f64, Array2<f64>, f64) {
    let rows = dist.rows();
    let n = rows as f64;
    let mut d = Array2::<f64>::zeros((rows, heads * ACTIONS));
    let mut loss = 0.0;
    let mut entropy = 0.0;
    for r in 0..rows {
        for v in 0..heads {
            let mut u = [0.0; ACTIONS];
            let mut mean_u = 0.0;
            for a in 0..ACTIONS {
                let p = dist.prob(r, v, a);
                u[a] = alpha * dist.log_prob_of(r, v, a) - q_min[[r, v * ACTIONS + a]];
                mean_u += p * u[a];
            }
            loss += mean_u / n;
            entropy += dist.head_entropy(r, v) / n;
            for a in 0..ACTIONS {
                d[[r, v * ACTIONS + a]] = dist.prob(r, v, a) * (u[a] - mean_u) / n;
            }
        }
    }
    (loss, d, entropy)
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn polyak(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SacLoss {
    pub critic: f64,
    pub actor: f64,
    /// Mean per-slot sum of head entropies.
    pub entropy: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SacUpdateReport {
    pub steps: Vec<SacLoss>,
}

impl SacUpdateReport {
    pub fn last(&self) -> SacLoss {
        self.steps.last().copied().unwrap_or_default()
    }
}

/// Optimizer state for the soft actor-critic update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacOptim {
    pub params: Adam,
    pub temperature: Adam,
    pub updates: u64,
}

impl SacOptim {
    pub fn new(model: &PolicyModel, cfg: &SacConfig) -> Self {
        Self {
            params: Adam::new(model.params.len(), cfg.learning_rate),
            temperature: Adam::new(1, cfg.learning_rate),
            updates: 0,
        }
    }
}

/// `cfg.epochs` gradient steps, each on a fresh sample of whole episodes.
pub fn sac_update(
    model: &mut PolicyModel,
    optim: &mut SacOptim,
    replay: &ReplayBuffer,
    cfg: &SacConfig,
    gamma: f64,
    rng: &mut SimRng,
) -> Result<SacUpdateReport> {
    let mut report = SacUpdateReport::default();
    let target_entropy = cfg.target_entropy_ratio * (ACTIONS as f64).ln() * model.vnf_count() as f64;
    for _ in 0..cfg.epochs {
        let eps = replay.sample(cfg.batch_episodes.min(replay.len().max(1)), rng)?;
        let batch = SacBatch::from_episodes(&eps)?;
        let y = sac_targets(model, &batch, cfg, gamma)?;
        let (critic_loss, mut g_critic, q_min) = sac_critic_loss_and_grad(model, &model.params, &batch, &y)?;
        let alpha = model.log_alpha.exp();
        let (actor_loss, mut g_actor, entropy) = sac_actor_loss_and_grad(model, &model.params, &batch, q_min.view(), alpha)?;

        let critic_range = model.critic.range();
        let actor_range = model.actor.range();
        clip_global_norm(&mut g_critic[critic_range.clone()], cfg.max_grad_norm);
        clip_global_norm(&mut g_actor[actor_range.clone()], cfg.max_grad_norm);
        let mut grad = g_critic;
        grad[actor_range.clone()].copy_from_slice(&g_actor[actor_range]);
        optim.params.step(&mut model.params, &grad)?;

        if cfg.auto_temperature {
            let mut la = [model.log_alpha];
            optim.temperature.step(&mut la, &[entropy - target_entropy])?;
            model.log_alpha = la[0];
        }
        optim.updates += 1;
        model.version += 1;
        if optim.updates % cfg.target_update_period.max(1) as u64 == 0 {
            let online = model.params[critic_range].to_vec();
            if let Some(t) = model.target_critic.as_mut() {
                polyak(t, &online, cfg.tau);
            }
        }
        report.steps.push(SacLoss {
            critic: critic_loss,
            actor: actor_loss,
            entropy,
            temperature: model.log_alpha.exp(),
        });
    }
    model.check_finite()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn episode(tag: f64) -> SacEpisode {
        SacEpisode {
            obs: Array2::from_elem((3, 2), tag),
            actions: vec![0; 3],
            rewards: vec![tag; 3],
            dones: vec![false, false, true],
        }
    }

    #[test]
    fn replay_underflow() {
        let mut r = ReplayBuffer::new(4);
        r.push(episode(0.0));
        assert!(matches!(r.sample(2, &mut seeded(0)), Err(Error::ReplayUnderflow { available: 1, needed: 2 })));
    }

    #[test]
    fn replay_capacity_evicts_oldest() {
        let mut r = ReplayBuffer::new(2);
        for i in 0..3 {
            r.push(episode(i as f64));
        }
        assert_eq!(r.len(), 2);
        let all = r.sample(2, &mut seeded(1)).unwrap();
        assert!(all.iter().all(|e| e.rewards[0] >= 1.0));
    }

    #[test]
    fn replay_sampling_is_seeded() {
        let mut r = ReplayBuffer::new(10);
        for i in 0..10 {
            r.push(episode(i as f64));
        }
        let a: Vec<f64> = r.sample(4, &mut seeded(5)).unwrap().iter().map(|e| e.rewards[0]).collect();
        let b: Vec<f64> = r.sample(4, &mut seeded(5)).unwrap().iter().map(|e| e.rewards[0]).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn polyak_limits() {
        let mut t = vec![1.0, 2.0];
        polyak(&mut t, &[3.0, -2.0], 1.0);
        assert_eq!(t, vec![3.0, -2.0]);
        let mut t = vec![1.0, 2.0];
        polyak(&mut t, &[3.0, -2.0], 5e-3);
        assert!((t[0] - (0.995 * 1.0 + 0.005 * 3.0)).abs() < 1e-15);
        assert!((t[1] - (0.995 * 2.0 - 0.005 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn polyak_converges_geometrically() {
        let mut t = vec![0.0];
        for k in 1..=200 {
            polyak(&mut t, &[1.0], 0.05);
            let gap = 1.0 - t[0];
            assert!((gap - 0.95f64.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn hot_temperature_pushes_toward_uniform() {
        let mut rng = seeded(3);
        use rand::Rng;
        let logits = Array2::from_shape_fn((4, 8), |_| rng.random::<f64>() * 2.0 - 1.0);
        let q = Array2::from_shape_fn((4, 8), |_| rng.random::<f64>());
        let dist = ActionDistribution::from_logits(logits.view(), 2);
        let (_, d, h0) = actor_objective(&dist, q.view(), 1e4, 2);
        let stepped = &logits - &(d * 1e-4);
        let after = ActionDistribution::from_logits(stepped.view(), 2);
        let h1: f64 = (0..4).map(|r| after.entropy(r)).sum::<f64>() / 4.0;
        assert!(h1 > h0);
    }
}
