//! `pfrsim`: simulate, train, evaluate and inspect proactive failure recovery agents.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pfrsim_core::config::{AgentKind, RunConfig};
use pfrsim_core::env::{write_episodes, RecoveryEnv, VnfAction};
use pfrsim_core::metrics::{
    evaluation_seeds, run_episodes, score_episodes, AccuracyReport, BaselineKind, BaselinePolicy, NeuralPolicy, Policy,
};
use pfrsim_core::nn::{ArchitectureSpec, Checkpoint, PolicyModel};
use pfrsim_core::rng::derive_seed;
use pfrsim_core::train::{manifest, train, MetricRow, RunSeeds, TrainOptions};
use pfrsim_core::Error;

/// Relative output directories are resolved against this variable when set.
const OUTPUT_ROOT_VAR: &str = "PFRSIM_OUTPUT_ROOT";
const SIMULATION_SEED_TAG: u64 = 0x51_0b;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "pfrsim", version, about = "Proactive VNF failure recovery simulator and agent trainer")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set agent.gamma=1.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Single-threaded execution for bit-reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Output directory; overrides `run.output_dir`.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Master seed; overrides `run.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run episodes under a fixed policy and write logs and a report.
    Simulate(PolicyArgs),
    /// Train an agent, writing metrics, checkpoints and resumable state.
    Train(TrainArgs),
    /// Score a policy on the evaluation seed set without writing logs.
    Evaluate(PolicyArgs),
    /// Print the observation layout, action encoding and network shapes.
    Describe {
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Print the observation schema JSON that checkpoints are bound to.
    DescribeObservation,
    /// Print the full default configuration as TOML.
    PrintDefaults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyChoice {
    Random,
    Oracle,
    Reactive,
    Checkpoint,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "random")]
    policy: PolicyChoice,
    /// Checkpoint file; implies `--policy checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Episodes to run; defaults to `run.eval_episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    /// Sample from a neural policy instead of taking the most likely action.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Continue the run stored in the output directory.
    #[arg(long)]
    resume: bool,
    /// Agent kind; overrides `agent.kind`.
    #[arg(long, value_enum)]
    agent: Option<AgentChoice>,
    /// Feed-forward baseline without recurrent layers.
    #[arg(long, conflicts_with = "agent")]
    nlstm: bool,
    /// Discount factor; overrides `agent.gamma`.
    #[arg(long)]
    gamma: Option<f64>,
    /// Iterations; overrides `run.iterations`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Suppress per-evaluation progress lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AgentChoice {
    LstmPpo,
    LstmSac,
    NlstmPpo,
}

impl From<AgentChoice> for AgentKind {
    fn from(c: AgentChoice) -> Self {
        match c {
            AgentChoice::LstmPpo => AgentKind::LstmPpo,
            AgentChoice::LstmSac => AgentKind::LstmSac,
            AgentChoice::NlstmPpo => AgentKind::NlstmPpo,
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("writing to stdout: {0}")]
    Stdout(#[source] std::io::Error),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_config() => EXIT_CONFIG,
            CliError::Core(_) | CliError::Stdout(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

macro_rules! out {
    ($($t:tt)*) => {
        write!(std::io::stdout(), $($t)*).map_err(CliError::Stdout)?
    };
}

macro_rules! outln {
    ($($t:tt)*) => {
        writeln!(std::io::stdout(), $($t)*).map_err(CliError::Stdout)?
    };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed pipe (e.g. `pfrsim describe | head`) is not a failure.
        Err(CliError::Stdout(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::PrintDefaults => {
            out!("{}", RunConfig::default().to_toml_string());
            Ok(())
        }
        Command::DescribeObservation => {
            let cfg = load_config(&cli)?;
            let env = RecoveryEnv::new(cfg.env.clone(), 0)?;
            let schema = env.layout().schema();
            outln!("{}", serde_json::to_string_pretty(&schema).expect("schema serializes"));
            Ok(())
        }
        Command::Describe { json } => describe(&load_config(&cli)?, *json),
        Command::Simulate(args) => simulate(&cli, args, true),
        Command::Evaluate(args) => simulate(&cli, args, false),
        Command::Train(args) => train_cmd(&cli, args),
    }
}

/// Config file (or defaults) with `--set` overrides and flag overrides applied,
/// then validated.
fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut doc: toml::Table = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            text.parse()
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for o in &cli.overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg: RunConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    if cli.deterministic {
        cfg.run.deterministic = true;
    }
    if let Some(seed) = cli.seed {
        cfg.run.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Sets a dotted key. The value is read as a TOML literal, falling back to a
/// plain string.
fn apply_override(doc: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not KEY=VALUE")))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    let dir = cli.output.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
    resolve_output(&dir, std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
}

fn resolve_output(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}

fn describe(cfg: &RunConfig, as_json: bool) -> CliResult<()> {
    let man = manifest(cfg)?;
    let env = RecoveryEnv::new(cfg.env.clone(), man.seeds.substrate)?;
    let schema = env.layout().schema();
    let actions: Vec<_> = VnfAction::ALL
        .iter()
        .map(|a| json!({"index": a.index(), "label": a.label()}))
        .collect();
    if as_json {
        let doc = json!({
            "observation": schema,
            "observation_schema_hash": man.observation_schema_hash,
            "action_heads": env.vnf_count(),
            "actions_per_head": VnfAction::COUNT,
            "action_encoding": actions,
            "architecture": man.architecture,
            "param_count": man.param_count,
            "actor_layers": man.actor_layers,
            "critic_layers": man.critic_layers,
        });
        outln!("{}", serde_json::to_string_pretty(&doc).expect("json"));
        return Ok(());
    }
    outln!("observation: width {} schema {}", schema.width, man.observation_schema_hash);
    for f in &schema.features {
        outln!("  [{:>3}..{:>3}) {:<24} {}", f.offset, f.offset + f.width, f.name, f.description);
    }
    outln!(
        "action space: {} heads x {} kinds (one head per VNF)",
        env.vnf_count(),
        VnfAction::COUNT
    );
    for a in VnfAction::ALL {
        outln!("  {} = {}", a.index(), a.label());
    }
    print_architecture(&man.architecture, man.param_count)
}

fn print_architecture(spec: &ArchitectureSpec, params: usize) -> CliResult<()> {
    outln!("agent: {} ({params} parameters)", spec.kind.label());
    for (name, tower) in [("actor", spec.actor()), ("critic", spec.critic())] {
        outln!("  {name}: {} parameters", tower.param_count());
        for l in tower.shapes() {
            outln!("    {:<6} {:>5} -> {:>5}  {:>9} params", l.kind, l.input, l.width, l.params);
        }
    }
    Ok(())
}

fn build_policy(args: &PolicyArgs, schema_hash: &str) -> CliResult<Box<dyn Policy>> {
    let choice = if args.checkpoint.is_some() {
        PolicyChoice::Checkpoint
    } else {
        args.policy
    };
    Ok(match choice {
        PolicyChoice::Random => Box::new(BaselinePolicy::new(BaselineKind::Random)),
        PolicyChoice::Oracle => Box::new(BaselinePolicy::new(BaselineKind::Oracle)),
        PolicyChoice::Reactive => Box::new(BaselinePolicy::new(BaselineKind::Reactive)),
        PolicyChoice::Checkpoint => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("--policy checkpoint needs --checkpoint PATH".into()))?;
            let ckpt = Checkpoint::load(path)?;
            let model = PolicyModel::from_checkpoint(ckpt, schema_hash)?;
            Box::new(NeuralPolicy::new(model, args.stochastic))
        }
    })
}

fn report_json(policy: &str, r: &AccuracyReport) -> serde_json::Value {
    let dwell: serde_json::Map<String, serde_json::Value> = r
        .dwell_bp
        .iter()
        .map(|(d, x)| (d.to_string(), json!({"hits": x.hits, "total": x.total, "rate": x.value()})))
        .collect();
    json!({
        "policy": policy,
        "episodes": r.episodes,
        "mean_return": r.mean_return(),
        "csa": r.csa(),
        "wsa": r.wsa(),
        "nsa": r.nsa(),
        "pfr_accuracy": r.pfr_accuracy(),
        "rfr_accuracy": r.rfr_accuracy(),
        "phi_fa_total": r.phi_fa_total,
        "sla_violations": r.sla_violations,
        "counts": {
            "csa": r.csa, "wsa": r.wsa, "nsa": r.nsa, "pfr": r.pfr, "rfr": r.rfr,
        },
        "warning_dwell_bp": dwell,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn simulate(cli: &Cli, args: &PolicyArgs, write_logs: bool) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let seeds = RunSeeds::new(cfg.run.master_seed);
    let env = RecoveryEnv::new(cfg.env.clone(), seeds.substrate)?;
    let hash = env.layout().schema_hash();
    let mut policy = build_policy(args, &hash)?;
    let episodes = args.episodes.unwrap_or(cfg.run.eval_episodes);
    if episodes == 0 {
        return Err(CliError::Config("--episodes must be >= 1".into()));
    }
    // Simulation draws its own episodes; evaluation reuses the training evaluation set.
    let base = if write_logs {
        derive_seed(cfg.run.master_seed, &[SIMULATION_SEED_TAG])
    } else {
        seeds.evaluation
    };
    let episode_seeds = evaluation_seeds(base, episodes);
    let logs = run_episodes(
        policy.as_mut(),
        &cfg.env,
        seeds.substrate,
        &episode_seeds,
        !cfg.run.deterministic,
    )?;
    let report = score_episodes(&logs);
    let name = policy.name();
    let dir = output_dir(cli, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if write_logs {
        write_episodes(&dir.join("episodes.jsonl"), &logs)?;
    }
    let report_path = dir.join(if write_logs { "report.json" } else { "evaluation.json" });
    let text = serde_json::to_string_pretty(&report_json(&name, &report)).expect("json");
    std::fs::write(&report_path, text + "\n").map_err(|e| Error::io(&report_path, e))?;
    outln!(
        "{name}: {episodes} episodes, mean return {}, CSA {}, WSA {}, NSA {}, PFR {}, RFR {}",
        fmt_opt(report.mean_return()),
        fmt_opt(report.csa()),
        fmt_opt(report.wsa()),
        fmt_opt(report.nsa()),
        fmt_opt(report.pfr_accuracy()),
        fmt_opt(report.rfr_accuracy()),
    );
    outln!("wrote {}", dir.display());
    Ok(())
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(cli)?;
    if let Some(a) = args.agent {
        let kind = AgentKind::from(a);
        if kind != cfg.agent.kind {
            cfg.agent.layout = None;
        }
        cfg.agent.kind = kind;
    }
    if args.nlstm {
        cfg.agent.kind = AgentKind::NlstmPpo;
        cfg.agent.layout = None;
    }
    if let Some(g) = args.gamma {
        cfg.agent.gamma = g;
    }
    if let Some(n) = args.iterations {
        cfg.run.iterations = n;
    }
    cfg.validate()?;
    let dir = output_dir(cli, &cfg);
    let quiet = args.quiet;
    let progress = |r: &MetricRow| {
        if !quiet {
            eprintln!(
                "iteration {:>7} {:<10} return {:>9} CSA {} WSA {} NSA {} PFR {}",
                r.iteration,
                r.split,
                fmt_opt(r.mean_return),
                fmt_opt(r.csa),
                fmt_opt(r.wsa),
                fmt_opt(r.nsa),
                fmt_opt(r.pfr_accuracy),
            );
        }
    };
    let out = train(
        &cfg,
        TrainOptions {
            output_dir: Some(dir.clone()),
            resume: args.resume,
            progress: Some(&progress),
            ..Default::default()
        },
    )?;
    outln!(
        "trained {} to iteration {}; artifacts in {}",
        cfg.agent.kind.label(),
        out.next_iteration,
        dir.display()
    );
    Ok(())
}
