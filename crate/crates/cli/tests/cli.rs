use std::path::Path;
use std::process::{Command, Output};

fn bracketlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bracketlab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "
[pendulum]
n_traj = 5
horizon = 1.5

[train]
epochs = 4
hidden_layers = 1
hidden_width = 8
";

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&bracketlab(&["--help"])), 0);
    assert_eq!(code(&bracketlab(&["--version"])), 0);
    assert_eq!(code(&bracketlab(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    for args in [
        vec!["frobnicate"],
        vec!["train", "--formalism", "hamiltonian"],
        vec!["eval", "--checkpoint", "model.ckpt"],
        vec!["gen-pendulum"],
        vec!["gen-pendulum", "--out", p(&out), "--formalism", "single"],
        vec!["train", "--out", p(&out)],
        vec!["sweep", "--out", p(&out)],
        vec!["inspect", "/nonexistent/file"],
    ] {
        let o = bracketlab(&args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    let o = bracketlab(&["eval", "--checkpoint", "model.ckpt"]);
    assert!(stderr(&o).contains("--dataset"), "{}", stderr(&o));
}

#[test]
fn bad_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "train.epochz = 3\n").unwrap();
    let o = bracketlab(&["gen-pendulum", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn published_pendulum_settings_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = bracketlab(&["gen-pendulum", "--paper-defaults", "pendulum", "--seed", "7", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = dir.path().join("pendulum.dataset");
    let o = bracketlab(&["inspect", p(&ds)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("shape=50x200x10"), "{text}");
    assert!(text.contains("meta.seed=7"), "{text}");
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "gen-pendulum");
    assert_eq!(run["seeds"]["data"], 7);
}

#[test]
fn couette_generation_and_unstable_substeps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[couette]\nN_x = 6\nK = 50\nhorizon = 0.04\ndt = 0.01\n").unwrap();
    let o = bracketlab(&["gen-couette", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("6x4x5"));
    std::fs::write(&cfg, "[couette]\nN_x = 50\nK = 50\nhorizon = 0.04\ndt = 0.01\nsubsteps = 1\n").unwrap();
    let o = bracketlab(&["gen-couette", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("stability"), "{}", stderr(&o));
}

fn gen_small(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let o = bracketlab(&["gen-pendulum", "--config", p(&cfg), "--seed", "3", "--out", p(&dir.join("data"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    cfg
}

#[test]
fn train_and_eval_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen_small(dir.path());
    let ds = dir.path().join("data/pendulum.dataset");
    let mut hashes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = bracketlab(&[
            "train",
            "--formalism",
            "generic",
            "--dataset",
            p(&ds),
            "--config",
            p(&cfg),
            "--seed",
            "3",
            "--out",
            p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let files = ["model.ckpt", "metrics.csv", "summary.json", "run.json", "checkpoints/epoch-1.ckpt"];
        hashes.push(files.map(|f| std::fs::read(out.join(f)).unwrap()));
    }
    assert!(hashes[0] == hashes[1]);

    let ckpt = dir.path().join("a/model.ckpt");
    let o = bracketlab(&["inspect", p(&ckpt)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("meta.formalism=generic"), "{text}");

    let o = bracketlab(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&ds), "--config", p(&cfg), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["eval"]["trajectories"].as_array().unwrap().len(), 1);

    let o = bracketlab(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&ds), "--formalism", "single"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn divergence_exits_two_with_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen_small(dir.path());
    let mut text = std::fs::read_to_string(&cfg).unwrap();
    text.push_str("divergence_threshold = 1e-30\n");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("t");
    let ds = dir.path().join("data/pendulum.dataset");
    let o = bracketlab(&["train", "--dataset", p(&ds), "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(out.join("partial.json").exists());
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn sweep_writes_one_block_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    std::fs::write(&cfg, format!("{SMALL}\n[sweep.axis]\ntrain.formalism = generic,single\n")).unwrap();
    let out = dir.path().join("s");
    let o = bracketlab(&["sweep", "--config", p(&cfg), "--jobs", "2", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("sweep.json")).unwrap()).unwrap();
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!(cells[1]["formalism"], "single");
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("run_id,cell,metric"));
    assert!(csv.contains("cell-001"));
}
