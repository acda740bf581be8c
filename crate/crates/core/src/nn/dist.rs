//! Factored categorical policy: one head of four logits per VNF.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::env::VnfAction;

pub const ACTIONS: usize = VnfAction::COUNT;

/// Probabilities for a batch of rows, each row holding `heads` categorical heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    heads: usize,
    probs: Array2<f64>,
    log_probs: Array2<f64>,
}

impl ActionDistribution {
    /// Stable log-softmax per head. `logits` is rows x (heads * 4).
    pub fn from_logits(logits: ArrayView2<f64>, heads: usize) -> Self {
        assert_eq!(logits.ncols(), heads * ACTIONS, "logit width");
        let mut log_probs = logits.to_owned();
        for mut row in log_probs.axis_iter_mut(Axis(0)) {
            for v in 0..heads {
                let mut head = row.slice_mut(ndarray::s![v * ACTIONS..(v + 1) * ACTIONS]);
                let max = head.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let lse = max + head.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                head.mapv_inplace(|x| x - lse);
            }
        }
        let probs = log_probs.mapv(f64::exp);
        Self {
            heads,
            probs,
            log_probs,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }

    pub fn prob(&self, row: usize, head: usize, action: usize) -> f64 {
        self.probs[[row, head * ACTIONS + action]]
    }

    pub fn log_prob_of(&self, row: usize, head: usize, action: usize) -> f64 {
        self.log_probs[[row, head * ACTIONS + action]]
    }

    /// Joint log-probability: sum over heads.
    pub fn log_prob(&self, row: usize, actions: &[usize]) -> f64 {
        actions
            .iter()
            .enumerate()
            .map(|(v, &a)| self.log_prob_of(row, v, a))
            .sum()
    }

    pub fn head_entropy(&self, row: usize, head: usize) -> f64 {
        (0..ACTIONS)
            .map(|a| {
                let p = self.prob(row, head, a);
                if p > 0.0 {
                    -p * self.log_prob_of(row, head, a)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Joint entropy: sum of per-head entropies.
    pub fn entropy(&self, row: usize) -> f64 {
        (0..self.heads).map(|v| self.head_entropy(row, v)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, row: usize, rng: &mut R) -> Vec<usize> {
        (0..self.heads)
            .map(|v| {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for a in 0..ACTIONS {
                    acc += self.prob(row, v, a);
                    if u < acc {
                        return a;
                    }
                }
                // Rounding left u above the cumulative sum: take the last
                // action with non-zero probability.
                (0..ACTIONS).rev().find(|&a| self.prob(row, v, a) > 0.0).unwrap_or(ACTIONS - 1)
            })
            .collect()
    }

    /// Most probable action per head; ties go to the lowest index.
    pub fn mode(&self, row: usize) -> Vec<usize> {
        (0..self.heads)
            .map(|v| {
                let mut best = 0;
                for a in 1..ACTIONS {
                    if self.prob(row, v, a) > self.prob(row, v, best) {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Sampled joint action with its log-probability and the joint entropy.
    pub fn sample_and_logprob<R: Rng + ?Sized>(&self, row: usize, rng: &mut R) -> (Vec<usize>, f64, f64) {
        let a = self.sample(row, rng);
        let lp = self.log_prob(row, &a);
        (a, lp, self.entropy(row))
    }
}

pub fn to_actions(indices: &[usize]) -> Vec<VnfAction> {
    indices
        .iter()
        .map(|&i| VnfAction::from_index(i).expect("action index below 4"))
        .collect()
}
