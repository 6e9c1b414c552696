//! `bracketlab` command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bracketlab::bracket::Formalism;
use bracketlab::dataset::{read_header, Dataset, DatasetError, System, DATASET_MAGIC};
use bracketlab::harness::{
    eval_rows, evaluate, metric_rows, parse_config, prepare_data, sweep, train, write_metrics_csv, ConfigMap, EnergyFn,
    ExperimentConfig, HarnessError, MetricRow, RunMetrics, SweepSpec,
};
use bracketlab::nn::{Checkpoint, NetParams, CHECKPOINT_MAGIC};
use bracketlab::sha256_hex;
use bracketlab::sim::{couette, pendulum};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "bracketlab", version, about = "Single-generator vs GENERIC structure-preserving networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a double thermoelastic pendulum dataset.
    GenPendulum(Common),
    /// Generate an Oldroyd-B Couette flow dataset.
    GenCouette(Common),
    /// Train a network on a dataset.
    Train(Common),
    /// Roll out a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Run a grid of experiments.
    Sweep(SweepArgs),
    /// Print the header of a dataset or checkpoint file.
    Inspect { path: PathBuf },
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    formalism: Option<FormalismArg>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from the published settings for one system.
    #[arg(long, value_enum)]
    paper_defaults: Option<SystemArg>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Cells run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormalismArg {
    Generic,
    Single,
}

impl From<FormalismArg> for Formalism {
    fn from(f: FormalismArg) -> Self {
        match f {
            FormalismArg::Generic => Formalism::Generic,
            FormalismArg::Single => Formalism::SingleGenerator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum SystemArg {
    Pendulum,
    Couette,
}

impl From<SystemArg> for System {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Pendulum => System::Pendulum,
            SystemArg::Couette => System::Couette,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config file {path}: {source}")]
    ConfigFile { path: PathBuf, source: std::io::Error },
    #[error("dataset not found: {0}")]
    MissingDataset(PathBuf),
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{path}: {source}")]
    Dataset { path: PathBuf, source: DatasetError },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Harness(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenPendulum(c) => generate(c, System::Pendulum),
        Command::GenCouette(c) => generate(c, System::Couette),
        Command::Train(c) => train_cmd(c),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Inspect { path } => inspect(&path),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_config(path: &Option<PathBuf>) -> Result<(ConfigMap, Option<(PathBuf, String)>), CliError> {
    match path {
        None => Ok((ConfigMap::new(), None)),
        Some(p) => {
            let bytes = fs::read(p).map_err(|source| CliError::ConfigFile { path: p.clone(), source })?;
            let text = String::from_utf8(bytes.clone()).map_err(|_| usage(format!("{} is not UTF-8", p.display())))?;
            Ok((parse_config(&text)?, Some((p.clone(), sha256_hex(&bytes)))))
        }
    }
}

/// Defaults, then the config file, then flags.
fn resolve(c: &Common, map: &ConfigMap, forced: Option<System>) -> Result<ExperimentConfig, CliError> {
    let from_file: Option<System> = map.get("system").map(|s| s.parse()).transpose().map_err(HarnessError::from)?;
    let paper: Option<System> = c.paper_defaults.map(Into::into);
    let mut system = forced.or(paper).or(from_file).unwrap_or(System::Pendulum);
    for other in [paper, from_file].into_iter().flatten() {
        if other != system {
            return Err(usage(format!("this command works on the {system} system, not {other}")));
        }
    }
    if system == System::Custom {
        system = System::Pendulum;
    }
    let mut cfg = ExperimentConfig::paper(system);
    cfg.apply(map)?;
    if let Some(s) = c.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(f) = c.formalism {
        cfg.train.formalism = f.into();
    }
    if let Some(d) = &c.dataset {
        cfg.dataset = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(c: &Common) -> Result<PathBuf, CliError> {
    let out = c.out.clone().ok_or_else(|| usage("--out <dir> is required"))?;
    fs::create_dir_all(&out).map_err(|source| CliError::Write { path: out.clone(), source })?;
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<String, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Write { path: parent.into(), source })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Write { path: path.into(), source })?;
    Ok(sha256_hex(bytes))
}

fn load_dataset(path: &Path) -> Result<(Dataset, String), CliError> {
    let bytes = fs::read(path).map_err(|_| CliError::MissingDataset(path.into()))?;
    let ds = Dataset::from_bytes(&bytes).map_err(|source| CliError::Dataset { path: path.into(), source })?;
    Ok((ds, sha256_hex(&bytes)))
}

/// Reproducibility record written next to every run's outputs.
struct Record {
    command: &'static str,
    inputs: BTreeMap<String, serde_json::Value>,
    outputs: BTreeMap<String, String>,
}

impl Record {
    fn new(command: &'static str, config: &Option<(PathBuf, String)>) -> Self {
        let mut inputs = BTreeMap::new();
        if let Some((p, h)) = config {
            inputs.insert("config".into(), json!({ "path": p.display().to_string(), "sha256": h }));
        }
        Record { command, inputs, outputs: BTreeMap::new() }
    }

    fn input(&mut self, name: &str, path: &Path, hash: &str) {
        self.inputs.insert(name.into(), json!({ "path": path.display().to_string(), "sha256": hash }));
    }

    /// Content hash of the command, resolved config and inputs.
    fn run_id(&self, cfg: &ExperimentConfig) -> String {
        let hashes: BTreeMap<&String, &serde_json::Value> =
            self.inputs.iter().map(|(k, v)| (k, &v["sha256"])).collect();
        let text = json!({ "command": self.command, "config": cfg.to_map(), "inputs": hashes }).to_string();
        sha256_hex(text.as_bytes())[..16].to_string()
    }

    fn save(&self, out: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
        let record = json!({
            "command": self.command,
            "run_id": self.run_id(cfg),
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg.to_map(),
            "seeds": { "data": cfg.data_seed, "split": cfg.split.seed, "train": cfg.train.seed },
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&record).expect("json");
        write(&out.join("run.json"), text.as_bytes())?;
        Ok(())
    }
}

fn generate(c: Common, system: System) -> Result<(), CliError> {
    if c.formalism.is_some() || c.dataset.is_some() {
        return Err(usage("--formalism and --dataset do not apply to dataset generation"));
    }
    let (map, cfg_file) = read_config(&c.config)?;
    let cfg = resolve(&c, &map, Some(system))?;
    let out = require_out(&c)?;
    let ds = match system {
        System::Couette => couette::generate(&cfg.couette, cfg.data_seed).map_err(HarnessError::from)?,
        _ => {
            let (ds, report) =
                pendulum::generate(&cfg.pendulum, &cfg.pendulum_gen_resolved()).map_err(HarnessError::from)?;
            let redrawn = report.total_rejections();
            if redrawn > 0 {
                eprintln!("{redrawn} rejected trajectory attempts were redrawn");
            }
            ds
        }
    };
    let name = format!("{system}.dataset");
    let path = out.join(&name);
    let mut rec = Record::new(if system == System::Couette { "gen-couette" } else { "gen-pendulum" }, &cfg_file);
    rec.outputs.insert(name, write(&path, &ds.to_bytes())?);
    rec.save(&out, &cfg)?;
    let (n, t, d) = ds.shape();
    println!("wrote {} ({n}x{t}x{d})", path.display());
    Ok(())
}

fn checkpoint_meta(cfg: &ExperimentConfig, ds: &Dataset) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("formalism".into(), cfg.train.formalism.as_str().into());
    m.insert("system".into(), ds.system().as_str().into());
    m.insert("dim".into(), ds.dim().to_string());
    m.insert("dt".into(), format!("{:?}", ds.dt()));
    m
}

fn csv_bytes(rows: &[MetricRow]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, rows)?;
    Ok(buf)
}

fn train_cmd(c: Common) -> Result<(), CliError> {
    let (map, cfg_file) = read_config(&c.config)?;
    let cfg = resolve(&c, &map, None)?;
    let ds_path = cfg.dataset.clone().ok_or_else(|| usage("train needs --dataset <file>"))?;
    let out = require_out(&c)?;
    let (_, ds_hash) = load_dataset(&ds_path)?;
    let mut rec = Record::new("train", &cfg_file);
    rec.input("dataset", &ds_path, &ds_hash);
    let run_id = rec.run_id(&cfg);

    let data = prepare_data(&cfg)?;
    let result = train(&data.dataset, &data.train_idx, &cfg.train);
    let trained = match result {
        Ok(t) => t,
        Err(HarnessError::Diverged { epoch, trajectory, loss, partial }) => {
            let text = serde_json::to_string_pretty(&partial).expect("json");
            rec.outputs.insert("partial.json".into(), write(&out.join("partial.json"), text.as_bytes())?);
            rec.save(&out, &cfg)?;
            return Err(HarnessError::Diverged { epoch, trajectory, loss, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let meta = checkpoint_meta(&cfg, &data.dataset);
    let ckpt = |params: &NetParams, epoch: usize| Checkpoint {
        params: params.clone(),
        seed: cfg.train.seed,
        epoch,
        meta: meta.clone(),
    };
    for (epoch, p) in &trained.milestones {
        let name = format!("checkpoints/epoch-{epoch}.ckpt");
        rec.outputs.insert(name.clone(), write(&out.join(&name), &ckpt(p, *epoch).to_bytes())?);
    }
    rec.outputs.insert(
        "model.ckpt".into(),
        write(&out.join("model.ckpt"), &ckpt(&trained.params, cfg.train.epochs).to_bytes())?,
    );
    let metrics = RunMetrics::assemble(&cfg, &data, &trained)?;
    let rows = metric_rows(&run_id, "", &metrics);
    rec.outputs.insert("metrics.csv".into(), write(&out.join("metrics.csv"), &csv_bytes(&rows)?)?);
    let summary = serde_json::to_string_pretty(&json!({ "run_id": run_id, "metrics": metrics })).expect("json");
    rec.outputs.insert("summary.json".into(), write(&out.join("summary.json"), summary.as_bytes())?);
    rec.save(&out, &cfg)?;
    println!(
        "trained {} for {} epochs: teacher-forced data loss {:.4e} -> {:.4e}; median test MSE {}",
        cfg.train.formalism,
        cfg.train.epochs,
        trained.initial.data,
        trained.final_loss.data,
        metrics.eval.median_mse.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let c = a.common;
    let ckpt_path = a.checkpoint.ok_or_else(|| usage("eval needs --checkpoint <file>"))?;
    let ds_path = c.dataset.clone().ok_or_else(|| usage("eval needs --dataset <file>"))?;
    let (map, cfg_file) = read_config(&c.config)?;
    let ckpt_bytes = fs::read(&ckpt_path).map_err(|_| CliError::MissingCheckpoint(ckpt_path.clone()))?;
    let ckpt = Checkpoint::from_bytes(&ckpt_bytes).map_err(HarnessError::from)?;
    let stored: Formalism = ckpt
        .meta
        .get("formalism")
        .ok_or_else(|| usage("checkpoint does not record its formalism"))?
        .parse()
        .map_err(HarnessError::from)?;
    let mut cfg = resolve(&c, &map, None)?;
    if c.formalism.is_some() && cfg.train.formalism != stored {
        return Err(usage(format!("checkpoint was trained as {stored}, not {}", cfg.train.formalism)));
    }
    cfg.train.formalism = stored;
    let (_, ds_hash) = load_dataset(&ds_path)?;
    let data = prepare_data(&cfg)?;
    if ckpt.params.input_dim() != data.dataset.dim() || ckpt.params.output_dim() != stored.head_len(data.dataset.dim())
    {
        return Err(usage("checkpoint does not match the dataset's state dimension"));
    }
    let ev = evaluate(&ckpt.params, &data.dataset, &data.test_idx, stored, &EnergyFn::for_dataset(&data.dataset))?;
    let mut rec = Record::new("eval", &cfg_file);
    rec.input("dataset", &ds_path, &ds_hash);
    rec.input("checkpoint", &ckpt_path, &sha256_hex(&ckpt_bytes));
    let run_id = rec.run_id(&cfg);
    let summary = serde_json::to_string_pretty(&json!({ "run_id": run_id, "eval": ev })).expect("json");
    match &c.out {
        Some(_) => {
            let out = require_out(&c)?;
            let rows = eval_rows(&run_id, "", &ev);
            rec.outputs.insert("metrics.csv".into(), write(&out.join("metrics.csv"), &csv_bytes(&rows)?)?);
            rec.outputs.insert("summary.json".into(), write(&out.join("summary.json"), summary.as_bytes())?);
            rec.save(&out, &cfg)?;
            println!(
                "{} test trajectories, {} failed, median MSE {}",
                ev.trajectories.len(),
                ev.failures,
                ev.median_mse.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "n/a".into())
            );
        }
        None => println!("{summary}"),
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<(), CliError> {
    let c = a.common;
    if c.config.is_none() {
        return Err(usage("sweep needs --config <file> with sweep.axis.<key> = v1,v2,... lines"));
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let (map, cfg_file) = read_config(&c.config)?;
    let mut spec = SweepSpec::from_config(&map)?;
    let base_cfg = resolve(&c, &spec.base, None)?;
    // Flags become part of the base so every cell sees them.
    if let Some(s) = c.seed {
        spec.base.insert("seed".into(), s.to_string());
    }
    if let Some(f) = c.formalism {
        spec.base.insert("train.formalism".into(), Formalism::from(f).as_str().into());
    }
    let mut rec = Record::new("sweep", &cfg_file);
    if let Some(d) = &c.dataset {
        let (_, h) = load_dataset(d)?;
        rec.input("dataset", d, &h);
        spec.base.insert("dataset".into(), d.display().to_string());
    }
    if let Some(p) = c.paper_defaults {
        spec.base.entry("system".into()).or_insert_with(|| System::from(p).as_str().into());
    }
    let out = require_out(&c)?;
    let run_id = rec.run_id(&base_cfg);
    let results = sweep(&spec, a.jobs)?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for r in &results {
        if let Some(m) = &r.metrics {
            rows.extend(metric_rows(&run_id, &r.cell, m));
        }
        cells.push(json!({
            "cell": r.cell,
            "overrides": r.overrides,
            "formalism": r.formalism,
            "error": r.error,
            "numerical_failure": r.numerical_failure,
            "median_mse": r.metrics.as_ref().and_then(|m| m.eval.median_mse),
            "median_energy_error": r.metrics.as_ref().and_then(|m| m.eval.median_energy_error),
            "failures": r.metrics.as_ref().map(|m| m.eval.failures),
            "trivial_solution": r.metrics.as_ref().and_then(|m| m.eval.trivial_solution),
            "test_mse": r.metrics.as_ref().map(|m| m.eval.trajectories.iter().map(|t| t.mse_mean).collect::<Vec<_>>()),
        }));
    }
    rec.outputs.insert("metrics.csv".into(), write(&out.join("metrics.csv"), &csv_bytes(&rows)?)?);
    let axes: BTreeMap<&String, &Vec<String>> = spec.axes.iter().map(|(k, v)| (k, v)).collect();
    let summary =
        serde_json::to_string_pretty(&json!({ "run_id": run_id, "axes": axes, "cells": cells })).expect("json");
    rec.outputs.insert("sweep.json".into(), write(&out.join("sweep.json"), summary.as_bytes())?);
    rec.save(&out, &base_cfg)?;
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells, {failed} failed; results in {}", results.len(), out.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<(), CliError> {
    let bytes = fs::read(path).map_err(|_| CliError::MissingDataset(path.into()))?;
    let header = if bytes.starts_with(DATASET_MAGIC.as_bytes()) {
        println!("{DATASET_MAGIC}");
        read_header(&bytes).map_err(|source| CliError::Dataset { path: path.into(), source })?
    } else if bytes.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
        println!("{CHECKPOINT_MAGIC}");
        Checkpoint::header(&bytes).map_err(HarnessError::from)?
    } else {
        return Err(usage(format!("{} is neither a dataset nor a checkpoint", path.display())));
    };
    for (k, v) in header {
        println!("{k}={v}");
    }
    Ok(())
}
