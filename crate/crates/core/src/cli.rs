//! The `sympkan` command line.
//!
//! Exit codes: 0 on success, 2 on usage, format or I/O errors, 1 on
//! numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::evaluation::{
    breakdown_csv, energy_csv, evaluate, report_csv, reproduce_table, rollout, trajectory_csv, EvalError, EvalOptions,
    FieldSource, ReproduceOptions,
};
use crate::models::{load_model, save_model, ModelError, ModelKind};
use crate::presets::{all_presets, preset, ExperimentPreset, Overrides, PRESET_NAMES};
use crate::systems::{build_dataset, read_dataset, write_dataset, Dataset, DatasetError, SystemError};
use crate::training::{train_with, TrainError, TrainOptions};

// Stdout writes that ignore a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! sayln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

const AFTER_HELP: &str = "\
Presets:
  spring       spring-mass, 25+25 trajectories
  pendulum     pendulum, 25+25 trajectories
  two_body     two-body orbits, 800+200 trajectories
  three_body   three-body, 4000+1000 trajectories

Overrides (train, reproduce):
  --trajectories N   total trajectory count, train/test ratio kept
  --steps N          fixed optimizer step count for every model
  --steps-scale F    multiply each model's step count by F
  --clean            drop observation noise

Environment:
  SYMPKAN_SEED       default seed when --seed is absent";

#[derive(Debug, Parser)]
#[command(name = "sympkan", version, about = "Learn Hamiltonians with spline networks", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a preset dataset.
    Generate(GenerateArgs),
    /// Train one model family on a dataset.
    Train(TrainArgs),
    /// Evaluate a model file (or the true field) on a dataset.
    Eval(EvalArgs),
    /// Train and evaluate all three families over several seeds.
    Reproduce(ReproduceArgs),
    /// Print the built-in presets as JSON.
    Presets {
        /// Only this preset.
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct OverrideArgs {
    /// Total trajectory count (train/test ratio kept).
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Fixed step count for every model.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Multiplier on each model's step count.
    #[arg(long)]
    pub steps_scale: Option<f64>,
    /// Drop observation noise.
    #[arg(long)]
    pub clean: bool,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            trajectories: self.trajectories,
            steps: self.steps,
            steps_scale: self.steps_scale,
            clean: self.clean,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, env = "SYMPKAN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Total trajectory count (train/test ratio kept).
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Drop observation noise.
    #[arg(long)]
    pub clean: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub preset: String,
    #[arg(long)]
    pub model: ModelKind,
    /// Dataset `.jsonl`; generated from the preset and seed when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, env = "SYMPKAN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "true_field", conflicts_with = "true_field")]
    pub model_file: Option<PathBuf>,
    /// Evaluate the exact vector field of the dataset's system.
    #[arg(long)]
    pub true_field: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Rollout length; defaults to the preset named in the dataset metadata.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub rollout_samples: Option<usize>,
    /// Use at most this many test trajectories as rollout starts.
    #[arg(long)]
    pub max_rollouts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Preset name or `all`.
    #[arg(long, default_value = "all")]
    pub experiment: String,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, env = "SYMPKAN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "reproduce")]
    pub out: PathBuf,
    /// Use at most this many test trajectories as rollout starts.
    #[arg(long)]
    pub max_rollouts: Option<usize>,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Numerical { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        match e {
            SystemError::Integration { .. } | SystemError::Singularity { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::System(s) => s.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Divergence { .. } => CliError::Numerical(e.to_string()),
            EvalError::Train(t) => t.into(),
            EvalError::System(s) => s.into(),
            EvalError::Dataset(d) => d.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    settings: serde_json::Value,
    outputs: Vec<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes `<out>/<command>.manifest.json` listing the outputs relative to `out`.
fn write_manifest(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    settings: serde_json::Value,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let manifest = Manifest {
        tool: "sympkan",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        settings,
        outputs: outputs
            .iter()
            .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&out.join(format!("{command}.manifest.json")), &text)
}

fn lookup(name: &str) -> Result<ExperimentPreset, CliError> {
    preset(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown preset '{name}'; available: {}",
            PRESET_NAMES.join(", ")
        ))
    })
}

fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let p = lookup(&a.preset)?.with_overrides(&Overrides {
        trajectories: a.trajectories,
        clean: a.clean,
        ..Default::default()
    });
    let ds = build_dataset(&p.dataset, &p.name, a.seed)?;
    let (data, meta) = write_dataset(&ds, &a.out)?;
    sayln!(
        "wrote {} ({} train + {} test trajectories)",
        data.display(),
        ds.train.len(),
        ds.test.len()
    );
    write_manifest(
        &a.out,
        "generate",
        Some(a.seed),
        serde_json::json!({ "preset": p.name, "dataset": p.dataset }),
        &[data, meta],
    )
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("dataset not found: {}", path.display())));
    }
    Ok(read_dataset(path)?)
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let p = lookup(&a.preset)?.with_overrides(&a.overrides.overrides());
    let ds = match &a.data {
        Some(path) => {
            let ds = load_data(path)?;
            if ds.system() != &p.dataset.system {
                return Err(CliError::Usage(format!(
                    "dataset system {} does not match preset {}",
                    ds.system().kind,
                    p.name
                )));
            }
            ds
        }
        None => build_dataset(&p.dataset, &p.name, a.seed)?,
    };
    let cfg = p.train_config_seeded(a.model, a.seed);
    ensure_dir(&a.out)?;
    let stem = format!("{}_{}_seed{}", p.name, a.model, a.seed);
    let model_path = a.out.join(format!("{stem}.khm"));
    let checkpoint = a.out.join(format!("{stem}.checkpoint.khm"));
    let history_path = a.out.join(format!("{stem}.history.csv"));
    let config_path = a.out.join(format!("{stem}.config.json"));
    write(&config_path, &cfg.to_json())?;
    let (model, history) = train_with(
        &cfg,
        &ds,
        TrainOptions {
            checkpoint: Some(&checkpoint),
            ..Default::default()
        },
    )?;
    save_model(&model, &model_path)?;
    write(&history_path, &history.to_csv())?;
    sayln!(
        "{} on {}: {} steps, train loss {:.6e}, test loss {:.6e}",
        a.model,
        p.name,
        cfg.steps,
        history.final_train_loss,
        history.final_test_loss
    );
    write_manifest(
        &a.out,
        "train",
        Some(a.seed),
        serde_json::json!({
            "preset": p.name,
            "data": a.data,
            "config": cfg,
            "final_train_loss": history.final_train_loss,
            "final_test_loss": history.final_test_loss,
        }),
        &[model_path, history_path, config_path],
    )
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let ds = load_data(&a.data)?;
    let spec = ds.system().clone();
    let base = preset(&ds.meta.preset).or_else(|| all_presets().into_iter().find(|p| p.dataset.system.kind == spec.kind));
    let (horizon, samples, scale) = match &base {
        Some(p) => (p.horizon, p.rollout_samples, p.scale_exponent),
        None => (20.0, 400, 3),
    };
    let opts = EvalOptions {
        horizon: a.horizon.unwrap_or(horizon),
        rollout_samples: a.rollout_samples.unwrap_or(samples),
        max_rollouts: a.max_rollouts,
        scale_exponent: scale,
        tolerate_divergence: false,
    };
    let model = match &a.model_file {
        Some(path) if !path.exists() => {
            return Err(CliError::Usage(format!("model file not found: {}", path.display())));
        }
        Some(path) => Some(load_model(path)?),
        None => None,
    };
    let source = match &model {
        Some(m) => FieldSource::Learned(m),
        None => FieldSource::True(&spec),
    };
    let report = evaluate(source, &ds, &opts)?;
    ensure_dir(&a.out)?;
    let label = source.label();
    let report_path = a.out.join(format!("{label}.report.csv"));
    let breakdown_path = a.out.join(format!("{label}.breakdown.csv"));
    write(&report_path, &report_csv(std::slice::from_ref(&report)))?;
    write(&breakdown_path, &breakdown_csv(&report))?;

    let z0 = &ds.test[0].z[0];
    let mut series = vec![("true".to_string(), rollout(FieldSource::True(&spec), &spec, z0, opts.horizon, opts.rollout_samples)?)];
    if model.is_some() {
        series.push((label.clone(), rollout(source, &spec, z0, opts.horizon, opts.rollout_samples)?));
    }
    let energy_path = a.out.join(format!("{label}.energy.csv"));
    write(&energy_path, &energy_csv(&series))?;
    let mut outputs = vec![report_path, breakdown_path, energy_path];
    for (name, r) in &series {
        let path = a.out.join(format!("{label}.traj_{name}.csv"));
        write(&path, &trajectory_csv(&spec, r))?;
        outputs.push(path);
    }
    say!("{}", report_csv(std::slice::from_ref(&report)));
    if report.diverged > 0 {
        eprintln!("{} of {} rollouts diverged", report.diverged, report.rollouts);
    }
    write_manifest(
        &a.out,
        "eval",
        Some(ds.seed()),
        serde_json::json!({ "model_file": a.model_file, "data": a.data, "options": opts }),
        &outputs,
    )
}

fn reproduce(a: &ReproduceArgs) -> Result<(), CliError> {
    let presets = if a.experiment == "all" {
        all_presets()
    } else {
        vec![lookup(&a.experiment)?]
    };
    let opts = ReproduceOptions {
        repeats: a.repeats,
        seed: a.seed,
        out: a.out.clone(),
        overrides: a.overrides.overrides(),
        max_rollouts: a.max_rollouts,
        verbose: !a.quiet,
    };
    ensure_dir(&a.out)?;
    let mut outputs = Vec::new();
    for p in &presets {
        let outcome = reproduce_table(p, &opts)?;
        sayln!("== {} ({} seeds) ==", p.name, outcome.seeds.len());
        say!("{}", report_csv(&outcome.table));
        if let Some(o) = &outcome.orderings {
            sayln!("ordering agreement with reference: {}/{}", o.agreed, o.total);
        }
        let root = a.out.join(&p.name);
        outputs.push(root.join("table.csv"));
        outputs.push(root.join("summary.json"));
    }
    write_manifest(
        &a.out,
        "reproduce",
        Some(a.seed),
        serde_json::json!({
            "experiments": presets.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
            "repeats": a.repeats,
            "overrides": opts.overrides,
            "max_rollouts": a.max_rollouts,
        }),
        &outputs,
    )
}

fn dump_presets(name: Option<&str>) -> Result<(), CliError> {
    let text = match name {
        Some(n) => serde_json::to_string_pretty(&lookup(n)?),
        None => serde_json::to_string_pretty(&all_presets()),
    }
    .expect("presets serialize");
    sayln!("{text}");
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Reproduce(a) => reproduce(a),
        Command::Presets { name } => dump_presets(name.as_deref()),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
