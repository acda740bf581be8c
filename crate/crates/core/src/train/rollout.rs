use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::env::RecoveryEnv;
use crate::error::{Error, Result};
use crate::metrics::observation_matrix;
use crate::nn::{to_actions, DropoutMode, PolicyModel};
use crate::rng::{derive_seed, seeded};

const DROPOUT_TAG: u64 = 0xd0;
const ACTION_TAG: u64 = 0xac;

/// One collected episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    /// Seed of the actor's dropout masks during collection.
    pub dropout_seed: u64,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
    /// Joint log-probability at collection time.
    pub log_probs: Vec<f64>,
    /// Per-head log-probabilities at collection time.
    pub head_log_probs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Per-VNF shares of each slot's reward.
    pub vnf_rewards: Vec<Vec<f64>>,
    /// Critic outputs at collection time, in return units.
    pub values: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn critic_dropout_seed(&self) -> u64 {
        derive_seed(self.dropout_seed, &[1])
    }
}

/// Discounted suffix sums with a zero boundary after the last slot and at
/// every terminal slot.
pub fn compute_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    out
}

/// Return minus value baseline.
pub fn compute_advantage(returns: &[f64], values: &[f64]) -> Vec<f64> {
    returns.iter().zip(values).map(|(r, v)| r - v).collect()
}

/// Shifts and scales to zero mean and unit variance; leaves a constant
/// vector centred at zero.
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { *v - mean };
    }
}

/// How the rollout policy picks actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectOptions {
    /// Apply dropout as during training.
    pub dropout: bool,
    /// Scale from critic output to return units; `None` skips the critic.
    pub value_scale: Option<f64>,
    pub parallel: bool,
}

/// One full episode per seed, all environments stepping in lockstep under a
/// single read-only snapshot of the model.
pub fn collect_rollouts(
    model: &PolicyModel,
    cfg: &EnvConfig,
    substrate_seed: u64,
    seeds: &[u64],
    opts: CollectOptions,
) -> Result<Vec<Trajectory>> {
    let b = seeds.len();
    if b == 0 {
        return Ok(Vec::new());
    }
    let proto = RecoveryEnv::new(cfg.clone(), substrate_seed)?;
    if proto.observation_width() != model.spec.input_width {
        return Err(Error::Shape(format!(
            "environment observation width {} vs model input {}",
            proto.observation_width(),
            model.spec.input_width
        )));
    }
    let mut envs = vec![proto; b];
    for (e, &s) in envs.iter_mut().zip(seeds) {
        e.reset(s)?;
    }
    let mut rngs: Vec<_> = seeds.iter().map(|&s| seeded(derive_seed(s, &[ACTION_TAG]))).collect();
    let mut trajs: Vec<Trajectory> = seeds
        .iter()
        .map(|&s| Trajectory {
            seed: s,
            dropout_seed: derive_seed(s, &[DROPOUT_TAG]),
            obs: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            head_log_probs: Vec::new(),
            rewards: Vec::new(),
            vnf_rewards: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
        })
        .collect();
    let actor_seeds: Vec<u64> = trajs.iter().map(|t| t.dropout_seed).collect();
    let critic_seeds: Vec<u64> = trajs.iter().map(Trajectory::critic_dropout_seed).collect();
    let mut actor_state = model.actor.zero_state(b);
    let mut critic_state = model.critic.zero_state(b);
    for t in 0..cfg.episode_length {
        let x = observation_matrix(&envs);
        let mode = |seeds| {
            if opts.dropout {
                DropoutMode::Seeded { seeds, t0: t }
            } else {
                DropoutMode::Off
            }
        };
        let (dist, _, _, st) = model.actor_forward(&model.params, x.view(), 1, b, Some(&actor_state), mode(&actor_seeds))?;
        actor_state = st;
        let values: Vec<Vec<f64>> = match opts.value_scale {
            Some(scale) => {
                let (v, _, st) = model
                    .critic
                    .forward(&model.params, x.view(), 1, b, Some(&critic_state), mode(&critic_seeds))?;
                critic_state = st;
                v.rows().into_iter().map(|row| row.iter().map(|x| x * scale).collect()).collect()
            }
            None => vec![Vec::new(); b],
        };
        let mut joint = Vec::with_capacity(b);
        for i in 0..b {
            let (a, lp, _) = dist.sample_and_logprob(i, &mut rngs[i]);
            trajs[i].obs.push(x.row(i).to_vec());
            trajs[i].log_probs.push(lp);
            trajs[i]
                .head_log_probs
                .push(a.iter().enumerate().map(|(v, &k)| dist.log_prob_of(i, v, k)).collect());
            trajs[i].values.push(values[i].clone());
            joint.push(to_actions(&a));
            trajs[i].actions.push(a);
        }
        let outcomes: Vec<Result<_>> = if opts.parallel {
            envs.par_iter_mut().zip(joint.par_iter()).map(|(e, a)| e.step(a)).collect()
        } else {
            envs.iter_mut().zip(&joint).map(|(e, a)| e.step(a)).collect()
        };
        for (traj, out) in trajs.iter_mut().zip(outcomes) {
            let out = out.map_err(|e| Error::Contract(format!("environment seed {} failed: {e}", traj.seed)))?;
            traj.rewards.push(out.reward.total);
            traj.vnf_rewards.push(out.vnf_rewards);
            traj.dones.push(out.done);
        }
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_value_undiscounted_advantage_is_suffix_sum() {
        let r = [1.0, -2.0, 3.0, 0.5];
        let d = [false, false, false, true];
        let ret = compute_returns(&r, &d, 1.0);
        assert_eq!(ret, vec![2.5, 1.5, 3.5, 0.5]);
        assert_eq!(compute_advantage(&ret, &[0.0; 4]), ret);
    }

    #[test]
    fn perfect_baseline_gives_zero_advantage() {
        let r = [1.0, 2.0, 3.0];
        let ret = compute_returns(&r, &[false, false, true], 0.9);
        assert!(compute_advantage(&ret, &ret).iter().all(|a| *a == 0.0));
    }

    #[test]
    fn geometric_series() {
        let ret = compute_returns(&[1.0; 100], &[[false; 99].as_slice(), &[true]].concat(), 0.99);
        let closed = (1.0 - 0.99f64.powi(100)) / 0.01;
        assert!((ret[0] - closed).abs() < 1e-10);
        for t in 0..99 {
            assert!((ret[t] - (1.0 + 0.99 * ret[t + 1])).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_cuts_bootstrap() {
        let ret = compute_returns(&[1.0, 1.0, 1.0, 1.0], &[false, true, false, true], 1.0);
        assert_eq!(ret, vec![2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
