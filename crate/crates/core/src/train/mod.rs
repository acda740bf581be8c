//! Training loop: collect, update, evaluate, persist.

pub mod ppo;
pub mod rollout;
pub mod sac;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{AgentKind, Credit, RunConfig};
use crate::env::RecoveryEnv;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, evaluation_seeds, robustness_probe, AccuracyReport, NeuralPolicy};
use crate::nn::{Adam, ArchitectureSpec, Checkpoint, LayerShape, PolicyModel};
use crate::rng::{derive_seed, seeded};

pub use ppo::{clipped_surrogate, ppo_loss_and_grad, ppo_update, PpoBatch, PpoLoss, PpoUpdateReport};
pub use rollout::{collect_rollouts, compute_advantage, compute_returns, normalize, CollectOptions, Trajectory};
pub use sac::{
    polyak, sac_actor_loss_and_grad, sac_critic_loss_and_grad, sac_targets, sac_update, ReplayBuffer, SacBatch,
    SacEpisode, SacLoss, SacOptim, SacUpdateReport,
};

const SUBSTRATE_TAG: u64 = 1;
const INIT_TAG: u64 = 2;
const ROLLOUT_TAG: u64 = 3;
const EVAL_TAG: u64 = 4;
const ROBUST_TAG: u64 = 5;
const REPLAY_TAG: u64 = 6;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATE_FILE: &str = "state.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Seeds every part of a run is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub master: u64,
    pub substrate: u64,
    pub init: u64,
    pub evaluation: u64,
}

impl RunSeeds {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            substrate: derive_seed(master, &[SUBSTRATE_TAG]),
            init: derive_seed(master, &[INIT_TAG]),
            evaluation: derive_seed(master, &[EVAL_TAG]),
        }
    }

    pub fn rollout(&self, iteration: usize, env: usize) -> u64 {
        derive_seed(self.master, &[ROLLOUT_TAG, iteration as u64, env as u64])
    }

    pub fn robustness(&self, iteration: usize) -> u64 {
        derive_seed(self.master, &[ROBUST_TAG, iteration as u64])
    }

    pub fn replay(&self, iteration: usize) -> u64 {
        derive_seed(self.master, &[REPLAY_TAG, iteration as u64])
    }
}

/// One evaluation row of the metric series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    /// `train` for the training environment, `robustness` for a fresh one.
    pub split: String,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub csa: Option<f64>,
    pub wsa: Option<f64>,
    pub nsa: Option<f64>,
    pub pfr_accuracy: Option<f64>,
    pub rfr_accuracy: Option<f64>,
    pub phi_fa_total: f64,
    /// Losses of the most recent update (absent before the first).
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
}

impl MetricRow {
    pub fn from_report(iteration: usize, split: &str, r: &AccuracyReport, last: Option<&TrainLogRow>) -> Self {
        Self {
            iteration,
            split: split.to_string(),
            episodes: r.episodes,
            mean_return: r.mean_return(),
            csa: r.csa(),
            wsa: r.wsa(),
            nsa: r.nsa(),
            pfr_accuracy: r.pfr_accuracy(),
            rfr_accuracy: r.rfr_accuracy(),
            phi_fa_total: r.phi_fa_total,
            policy_loss: last.map(|l| l.policy_loss),
            value_loss: last.map(|l| l.value_loss),
            entropy: last.map(|l| l.entropy),
        }
    }
}

/// One row per training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub mean_episode_return: f64,
    /// Actor loss (clipped surrogate for PPO, soft policy loss for SAC).
    pub policy_loss: f64,
    /// Value loss for PPO, twin-Q loss for SAC.
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub first_pass_ratio_deviation: Option<f64>,
    pub clip_violations: Option<usize>,
    pub temperature: Option<f64>,
    pub params_version: u64,
}

/// Optimizer state that resumes training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimState {
    Ppo { adam: Adam },
    Sac { optim: SacOptim },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub next_iteration: usize,
    pub checkpoint: Checkpoint,
    pub optim: OptimState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub agent: String,
    pub seeds: RunSeeds,
    pub observation_width: usize,
    pub observation_schema_hash: String,
    pub architecture: ArchitectureSpec,
    pub param_count: usize,
    pub actor_layers: Vec<LayerShape>,
    pub critic_layers: Vec<LayerShape>,
    pub config: RunConfig,
}

pub fn manifest(cfg: &RunConfig) -> Result<RunManifest> {
    let seeds = RunSeeds::new(cfg.run.master_seed);
    let env = RecoveryEnv::new(cfg.env.clone(), seeds.substrate)?;
    let layout = env.layout();
    let per_vnf = cfg.agent.kind.is_ppo() && cfg.agent.ppo.credit == Credit::PerVnf;
    let spec = ArchitectureSpec::new(cfg.agent.kind, layout.width(), env.vnf_count(), cfg.agent.resolved_layout())
        .with_per_vnf_values(per_vnf);
    Ok(RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        agent: cfg.agent.kind.label().to_string(),
        seeds,
        observation_width: layout.width(),
        observation_schema_hash: layout.schema_hash(),
        param_count: spec.param_count(),
        actor_layers: spec.actor().shapes(),
        critic_layers: spec.critic().shapes(),
        architecture: spec,
        config: cfg.clone(),
    })
}

/// Decides whether to stop after an evaluation row.
pub type StopRule<'a> = &'a dyn Fn(&MetricRow) -> bool;
/// Receives every evaluation row as it is produced.
pub type Progress<'a> = &'a dyn Fn(&MetricRow);

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where artifacts go; `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
    /// Continue from the state file in `output_dir`.
    pub resume: bool,
    pub stop_when: Option<StopRule<'a>>,
    pub progress: Option<Progress<'a>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PolicyModel,
    pub metrics: Vec<MetricRow>,
    pub log: Vec<TrainLogRow>,
    pub next_iteration: usize,
    pub stopped_early: bool,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::format(path, e))).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Persist<'p> {
    dir: Option<&'p Path>,
    schema_hash: String,
}

impl Persist<'_> {
    fn save(&self, model: &PolicyModel, optim: &OptimState, next: usize, metrics: &[MetricRow], log: &[TrainLogRow]) -> Result<()> {
        let Some(dir) = self.dir else { return Ok(()) };
        write_csv(&dir.join(METRICS_FILE), metrics)?;
        write_csv(&dir.join(TRAIN_LOG_FILE), log)?;
        let ckpt = model.to_checkpoint(&self.schema_hash);
        ckpt.save(&dir.join(CHECKPOINT_FILE))?;
        write_json(
            &dir.join(STATE_FILE),
            &TrainState {
                next_iteration: next,
                checkpoint: ckpt,
                optim: optim.clone(),
            },
        )
    }
}

/// Runs `cfg.run.iterations` collect/update iterations with periodic
/// evaluation. Evaluation happens before the update of every iteration that
/// is a multiple of `eval_every`, and once more after the last iteration.
pub fn train(cfg: &RunConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let man = manifest(cfg)?;
    let seeds = man.seeds;
    let parallel = !cfg.run.deterministic;
    let persist = Persist {
        dir: opts.output_dir.as_deref(),
        schema_hash: man.observation_schema_hash.clone(),
    };
    if let Some(dir) = &opts.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(MANIFEST_FILE), &man)?;
    }

    let mut model = PolicyModel::new(man.architecture.clone(), seeds.init)?;
    let mut optim = match cfg.agent.kind {
        AgentKind::LstmSac => {
            model.log_alpha = cfg.agent.sac.initial_temperature.ln();
            OptimState::Sac {
                optim: SacOptim::new(&model, &cfg.agent.sac),
            }
        }
        _ => OptimState::Ppo {
            adam: Adam::new(model.params.len(), cfg.agent.ppo.learning_rate),
        },
    };
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut log: Vec<TrainLogRow> = Vec::new();
    let mut start = 0;

    if opts.resume {
        let dir = opts
            .output_dir
            .as_deref()
            .ok_or_else(|| Error::Config("resume requires an output directory".into()))?;
        let path = dir.join(STATE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: TrainState = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        if state.checkpoint.spec != man.architecture {
            return Err(Error::Config("resume: architecture differs from the saved run".into()));
        }
        model = PolicyModel::from_checkpoint(state.checkpoint, &man.observation_schema_hash)?;
        optim = state.optim;
        start = state.next_iteration;
        metrics = read_csv::<MetricRow>(&dir.join(METRICS_FILE))?
            .into_iter()
            .filter(|r| r.iteration < start)
            .collect();
        log = read_csv::<TrainLogRow>(&dir.join(TRAIN_LOG_FILE))?
            .into_iter()
            .filter(|r| r.iteration < start)
            .collect();
    }

    let eval_seeds = evaluation_seeds(seeds.evaluation, cfg.run.eval_episodes);
    let mut replay = ReplayBuffer::new(cfg.agent.sac.replay_capacity);
    let envs = match cfg.agent.kind {
        AgentKind::LstmSac => cfg.agent.sac.parallel_envs,
        _ => cfg.agent.ppo.parallel_envs,
    };

    let evaluate_at = |model: &PolicyModel, it: usize, last: Option<&TrainLogRow>| -> Result<Vec<MetricRow>> {
        let mut rows = Vec::new();
        let mut policy = NeuralPolicy::new(model.clone(), cfg.run.stochastic_eval);
        let report = evaluate(&mut policy, &cfg.env, seeds.substrate, &eval_seeds, parallel)?;
        rows.push(MetricRow::from_report(it, "train", &report, last));
        if cfg.run.robustness_every > 0 && it % cfg.run.robustness_every == 0 {
            let report = robustness_probe(&mut policy, &cfg.env, seeds.robustness(it), cfg.run.eval_episodes, parallel)?;
            rows.push(MetricRow::from_report(it, "robustness", &report, last));
        }
        Ok(rows)
    };

    let mut stopped_early = false;
    let mut it = start;
    while it < cfg.run.iterations {
        if cfg.run.eval_every > 0 && it % cfg.run.eval_every == 0 {
            let rows = evaluate_at(&model, it, log.last())?;
            let stop = rows
                .iter()
                .filter(|r| r.split == "train")
                .any(|r| opts.stop_when.is_some_and(|f| f(r)));
            for r in &rows {
                if let Some(p) = opts.progress {
                    p(r);
                }
            }
            metrics.extend(rows);
            if stop {
                stopped_early = true;
                break;
            }
        }

        let env_seeds: Vec<u64> = (0..envs).map(|i| seeds.rollout(it, i)).collect();
        let row = match &mut optim {
            OptimState::Ppo { adam } => {
                let trajs = collect_rollouts(
                    &model,
                    &cfg.env,
                    seeds.substrate,
                    &env_seeds,
                    CollectOptions {
                        dropout: true,
                        value_scale: Some(cfg.agent.ppo.value_scale),
                        parallel,
                    },
                )?;
                let mean_ret = trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64;
                let batch = PpoBatch::from_trajectories(&trajs, cfg.agent.gamma, &cfg.agent.ppo)?;
                let rep = ppo_update(&mut model, adam, &batch, &cfg.agent.ppo)?;
                let last = rep.last();
                TrainLogRow {
                    iteration: it,
                    mean_episode_return: mean_ret,
                    policy_loss: last.policy,
                    value_loss: last.value,
                    entropy: last.entropy,
                    approx_kl: Some(last.approx_kl),
                    clip_fraction: Some(last.clip_fraction),
                    first_pass_ratio_deviation: Some(rep.first_pass_ratio_deviation),
                    clip_violations: Some(rep.clip_violations),
                    temperature: None,
                    params_version: model.version,
                }
            }
            OptimState::Sac { optim } => {
                let trajs = collect_rollouts(
                    &model,
                    &cfg.env,
                    seeds.substrate,
                    &env_seeds,
                    CollectOptions {
                        dropout: false,
                        value_scale: None,
                        parallel,
                    },
                )?;
                let mean_ret = trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64;
                for t in &trajs {
                    replay.push(SacEpisode::from_trajectory(t));
                }
                let mut rng = seeded(seeds.replay(it));
                let rep = sac_update(&mut model, optim, &replay, &cfg.agent.sac, cfg.agent.gamma, &mut rng)?;
                let last = rep.last();
                TrainLogRow {
                    iteration: it,
                    mean_episode_return: mean_ret,
                    policy_loss: last.actor,
                    value_loss: last.critic,
                    entropy: last.entropy,
                    approx_kl: None,
                    clip_fraction: None,
                    first_pass_ratio_deviation: None,
                    clip_violations: None,
                    temperature: Some(last.temperature),
                    params_version: model.version,
                }
            }
        };
        log.push(row);
        it += 1;
        if cfg.run.eval_every > 0 && it % cfg.run.eval_every == 0 {
            persist.save(&model, &optim, it, &metrics, &log)?;
        }
    }

    if !stopped_early && it == cfg.run.iterations {
        let rows = evaluate_at(&model, it, log.last())?;
        for r in &rows {
            if let Some(p) = opts.progress {
                p(r);
            }
        }
        metrics.extend(rows);
    }
    persist.save(&model, &optim, it, &metrics, &log)?;
    Ok(TrainOutcome {
        model,
        metrics,
        log,
        next_iteration: it,
        stopped_early,
    })
}
