use std::path::Path;
use std::process::{Command, Output};

use pfrsim_core::config::RunConfig;
use serde_json::Value;

const TINY: &[&str] = &[
    "--deterministic",
    "--set",
    "env.episode_length=20",
    "--set",
    "agent.ppo.parallel_envs=2",
    "--set",
    "agent.ppo.epochs=2",
    "--set",
    "run.eval_every=2",
    "--set",
    "run.eval_episodes=2",
    "--set",
    "run.robustness_every=4",
    "--set",
    "agent.layout.pre=[8]",
    "--set",
    "agent.layout.lstm=[4]",
    "--set",
    "agent.layout.post=[8]",
];

fn pfrsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfrsim"))
        .args(args)
        .env_remove("PFRSIM_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pfrsim(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn oracle_simulation_recovers_everything_proactively() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    ok(&["simulate", "--policy", "oracle", "--episodes", "10", "-o", o]);
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["pfr_accuracy"], 1.0);
    assert_eq!(r["csa"], 1.0);
    assert_eq!(r["phi_fa_total"], 0.0);
    let lines = std::fs::read_to_string(dir.path().join("episodes.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10 * 101);
}

#[test]
fn random_logs_are_byte_identical_across_runs() {
    for extra in [&[][..], &["--deterministic"][..]] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for d in [&a, &b] {
            let args = with(&["simulate", "--episodes", "4", "--seed", "9", "-o", d.path().to_str().unwrap()], extra);
            ok(&args);
        }
        for f in ["episodes.jsonl", "report.json"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn describe_is_seed_independent_and_lists_heads() {
    let a = ok(&["describe", "--json", "--seed", "1"]);
    let b = ok(&["describe", "--json", "--seed", "2"]);
    assert_eq!(a, b);
    let d: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(d["action_heads"], 9);
    assert_eq!(d["actions_per_head"], 4);
    assert_eq!(d["observation"]["width"], 69);
    let text = ok(&["describe"]);
    assert!(text.contains("9 heads x 4 kinds"), "{text}");
}

#[test]
fn default_architecture_is_the_recurrent_hybrid() {
    let d: Value = serde_json::from_str(&ok(&["describe", "--json"])).unwrap();
    let layout = &d["architecture"]["layout"];
    assert_eq!(layout["pre"], serde_json::json!([512, 512]));
    assert_eq!(layout["lstm"], serde_json::json!([100, 100]));
    assert_eq!(layout["post"], serde_json::json!([256, 256]));
    let kinds: Vec<&str> = d["actor_layers"].as_array().unwrap().iter().map(|l| l["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["dense", "dense", "lstm", "lstm", "dense", "dense", "head"]);
}

#[test]
fn print_defaults_round_trips() {
    let text = ok(&["print-defaults"]);
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, RunConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("defaults.toml");
    std::fs::write(&path, &text).unwrap();
    assert_eq!(ok(&["describe", "-c", path.to_str().unwrap()]), ok(&["describe"]));
}

#[test]
fn manifest_echoes_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let args = with(TINY, &["train", "--iterations", "2", "--quiet", "-o", o]);
    ok(&args);
    let man = json(&dir.path().join("manifest.json"));
    let defaults = RunConfig::default();
    let ppo = &man["config"]["agent"]["ppo"];
    assert_eq!(ppo["learning_rate"], defaults.agent.ppo.learning_rate);
    assert_eq!(ppo["clip"], defaults.agent.ppo.clip);
    assert_eq!(ppo["entropy_coef"], defaults.agent.ppo.entropy_coef);
    assert_eq!(man["config"]["agent"]["gamma"], defaults.agent.gamma);
    assert_eq!(ppo["parallel_envs"], 2);
    assert_eq!(man["agent"], "lstm-ppo");
    assert_eq!(man["observation_width"], 69);
    for f in ["metrics.csv", "train_log.csv", "checkpoint.json", "state.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn nlstm_flag_selects_the_feedforward_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    ok(&[
        "--deterministic",
        "--set",
        "env.episode_length=3",
        "--set",
        "agent.ppo.parallel_envs=1",
        "--set",
        "agent.ppo.epochs=1",
        "--set",
        "run.eval_episodes=1",
        "train",
        "--nlstm",
        "--iterations",
        "1",
        "--quiet",
        "-o",
        o,
    ]);
    let man = json(&dir.path().join("manifest.json"));
    assert_eq!(man["agent"], "nlstm-ppo");
    let layout = &man["architecture"]["layout"];
    let mut pre = vec![512; 10];
    pre.extend([256, 128]);
    assert_eq!(layout["pre"], serde_json::json!(pre));
    assert_eq!(layout["lstm"], serde_json::json!([]));
    assert_eq!(layout["dropout"].as_array().unwrap().len(), 12);
    assert!(man["actor_layers"].as_array().unwrap().iter().all(|l| l["kind"] != "lstm"));
}

#[test]
fn interrupted_training_resumes_without_gaps() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (oa, ob) = (a.path().to_str().unwrap(), b.path().to_str().unwrap());
    ok(&with(TINY, &["train", "--iterations", "6", "--quiet", "-o", oa]));
    ok(&with(TINY, &["train", "--iterations", "3", "--quiet", "-o", ob]));
    ok(&with(TINY, &["train", "--resume", "--iterations", "6", "--quiet", "-o", ob]));
    for f in ["metrics.csv", "train_log.csv", "checkpoint.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn trained_checkpoint_evaluates_and_rejects_a_foreign_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    ok(&with(TINY, &["train", "--iterations", "1", "--quiet", "-o", o]));
    let ckpt = dir.path().join("checkpoint.json");
    let c = ckpt.to_str().unwrap();
    ok(&["evaluate", "--checkpoint", c, "--episodes", "2", "-o", o]);
    let eval = json(&dir.path().join("evaluation.json"));
    assert_eq!(eval["episodes"], 2);
    assert!(eval["policy"].as_str().unwrap().contains("lstm-ppo"), "{eval}");

    let mut doc = json(&ckpt);
    let real = doc["observation_schema_hash"].as_str().unwrap().to_string();
    doc["observation_schema_hash"] = Value::from("0000feedface");
    let bad = dir.path().join("foreign.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let out = pfrsim(&["evaluate", "--checkpoint", bad.to_str().unwrap(), "--episodes", "1", "-o", o]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0000feedface") && err.contains(&real), "{err}");
}

#[test]
fn exit_codes_distinguish_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let cases: &[(&[&str], i32)] = &[
        (&["--set", "agent.gamma=1.5", "describe"], 2),
        (&["--set", "agent.nonsense=1", "describe"], 2),
        (&["--set", "nokey", "describe"], 2),
        (&["-c", "/nonexistent/run.toml", "describe"], 2),
        (&["simulate", "--episodes", "0", "-o", o], 2),
        (&["simulate", "--policy", "sideways"], 2),
        (&["evaluate", "--checkpoint", "/nonexistent/ckpt.json", "-o", o], 3),
        (&["train", "--resume", "--iterations", "1", "-o", o], 3),
    ];
    for (args, code) in cases {
        let out = pfrsim(args);
        assert_eq!(out.status.code(), Some(*code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = pfrsim(&["--set", "agent.gamma=1.5", "describe"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("agent.gamma"));
}

#[test]
fn output_root_variable_prefixes_relative_paths() {
    let root = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pfrsim"))
        .args(["simulate", "--episodes", "1", "-o", "nested/run"])
        .env("PFRSIM_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.path().join("nested/run/report.json").exists());
}
