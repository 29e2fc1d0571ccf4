use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::reference::{compare_orderings, OrderingSummary};
use super::{
    aggregate_seeds, breakdown_csv, energy_csv, evaluate, report_csv, rollout, trajectory_csv, EvalError, EvalOptions,
    FieldSource, MetricReport,
};
use crate::models::{load_model, save_model, Model, ModelKind};
use crate::presets::{ExperimentPreset, Overrides};
use crate::systems::{build_dataset, read_dataset, write_dataset, Dataset, DatasetMeta, Split};
use crate::training::{train_with, TrainConfig, TrainOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOptions {
    pub repeats: usize,
    /// Run `r` uses seed `seed + r` for both its dataset and its models.
    pub seed: u64,
    pub out: PathBuf,
    pub overrides: Overrides,
    /// Cap on rollout starts per model and seed.
    pub max_rollouts: Option<usize>,
    /// Print progress to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceOutcome {
    pub preset: String,
    pub seeds: Vec<u64>,
    /// Aggregated over seeds, in `ModelKind::ALL` order.
    pub table: Vec<MetricReport>,
    pub per_seed: Vec<Vec<MetricReport>>,
    pub orderings: Option<OrderingSummary>,
    /// Model files reused from an earlier run.
    pub reused: usize,
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|e| EvalError::io(path, e))
}

fn meta_matches(meta: &DatasetMeta, preset: &ExperimentPreset, seed: u64) -> bool {
    let d = &preset.dataset;
    meta.system == d.system
        && meta.seed == seed
        && meta.sigma2 == d.sigma2
        && meta.split
            == Split {
                train: d.train_trajectories,
                test: d.test_trajectories,
            }
        && meta.samples == d.samples
        && meta.span == d.span
        && meta.preset == preset.name
}

/// The dataset and whether it was read back from disk.
fn dataset_for(preset: &ExperimentPreset, seed: u64, dir: &Path) -> Result<(Dataset, bool), EvalError> {
    let path = dir.join(format!("{}.jsonl", preset.name));
    if path.exists() {
        if let Ok(ds) = read_dataset(&path) {
            if meta_matches(&ds.meta, preset, seed) {
                return Ok((ds, true));
            }
        }
    }
    let ds = build_dataset(&preset.dataset, &preset.name, seed)?;
    write_dataset(&ds, dir)?;
    Ok((ds, false))
}

/// Loads `<kind>.khm` when its recorded configuration matches and the data
/// is unchanged, otherwise trains.
fn model_for(
    kind: ModelKind,
    cfg: &TrainConfig,
    ds: &Dataset,
    dir: &Path,
    data_reused: bool,
    verbose: bool,
) -> Result<(Model, bool), EvalError> {
    let model_path = dir.join(format!("{kind}.khm"));
    let cfg_path = dir.join(format!("{kind}.config.json"));
    if let (true, Ok(text), true) = (data_reused, fs::read_to_string(&cfg_path), model_path.exists()) {
        if TrainConfig::from_json(&text).ok().as_ref() == Some(cfg) {
            if let Ok(m) = load_model(&model_path) {
                if m.kind() == kind {
                    return Ok((m, true));
                }
            }
        }
    }
    let checkpoint = dir.join(format!("{kind}.checkpoint.khm"));
    let every = (cfg.steps / 10).max(1);
    let mut log = |r: &crate::training::StepRecord| {
        if verbose && (r.step.is_multiple_of(every) || r.step + 1 == cfg.steps) {
            eprintln!("  {kind} step {:>6}/{} loss {:.6e}", r.step + 1, cfg.steps, r.loss);
        }
    };
    let (model, history) = train_with(
        cfg,
        ds,
        TrainOptions {
            checkpoint: Some(&checkpoint),
            on_step: Some(&mut log),
            initial: None,
        },
    )?;
    save_model(&model, &model_path)?;
    write(&cfg_path, &cfg.to_json())?;
    write(&dir.join(format!("{kind}.history.csv")), &history.to_csv())?;
    Ok((model, false))
}

/// Trains and evaluates all three families on `repeats` seeds, then writes
/// `table.csv`, `summary.json`, per-seed reports and plot data under
/// `<out>/<preset>/`. Existing datasets and models with matching settings
/// are reused, so an interrupted run resumes where it stopped.
pub fn reproduce_table(preset: &ExperimentPreset, opts: &ReproduceOptions) -> Result<ReproduceOutcome, EvalError> {
    if opts.repeats == 0 {
        return Err(EvalError::Usage("repeats must be at least 1".into()));
    }
    let preset = preset.with_overrides(&opts.overrides);
    let root = opts.out.join(&preset.name);
    fs::create_dir_all(&root).map_err(|e| EvalError::io(&root, e))?;
    write(
        &root.join("preset.json"),
        &serde_json::to_string_pretty(&preset).expect("preset serializes"),
    )?;
    let eval_opts = EvalOptions {
        horizon: preset.horizon,
        rollout_samples: preset.rollout_samples,
        max_rollouts: opts.max_rollouts,
        scale_exponent: preset.scale_exponent,
        tolerate_divergence: true,
    };

    let seeds: Vec<u64> = (0..opts.repeats as u64).map(|r| opts.seed + r).collect();
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut reused = 0;
    for (r, &seed) in seeds.iter().enumerate() {
        let dir = root.join(format!("seed{seed}"));
        fs::create_dir_all(&dir).map_err(|e| EvalError::io(&dir, e))?;
        if opts.verbose {
            eprintln!("[{}] seed {seed} ({}/{})", preset.name, r + 1, seeds.len());
        }
        let (ds, data_reused) = dataset_for(&preset, seed, &dir.join("data"))?;
        let mut models = Vec::with_capacity(3);
        let mut reports = Vec::with_capacity(3);
        for kind in ModelKind::ALL {
            let cfg = preset.train_config_seeded(kind, seed);
            let (model, was_reused) = model_for(kind, &cfg, &ds, &dir, data_reused, opts.verbose)?;
            reused += was_reused as usize;
            let report = evaluate(FieldSource::Learned(&model), &ds, &eval_opts)?;
            write(&dir.join(format!("{kind}.breakdown.csv")), &breakdown_csv(&report))?;
            reports.push(report);
            models.push(model);
        }
        write(&dir.join("report.csv"), &report_csv(&reports))?;
        if r == 0 {
            write_plot_bundle(&preset, &ds, &models, &root)?;
        }
        per_seed.push(reports);
    }

    let table = ModelKind::ALL
        .iter()
        .enumerate()
        .map(|(i, _)| aggregate_seeds(&per_seed.iter().map(|s| s[i].clone()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    write(&root.join("table.csv"), &report_csv(&table))?;
    let orderings = compare_orderings(&preset.name, &table);
    let outcome = ReproduceOutcome {
        preset: preset.name.clone(),
        seeds,
        table,
        per_seed,
        orderings,
        reused,
    };
    write(
        &root.join("summary.json"),
        &serde_json::to_string_pretty(&outcome).expect("outcome serializes"),
    )?;
    Ok(outcome)
}

/// `energy.csv` and `traj_<source>.csv` from the first test trajectory's start.
fn write_plot_bundle(preset: &ExperimentPreset, ds: &Dataset, models: &[Model], root: &Path) -> Result<(), EvalError> {
    let spec = ds.system();
    let z0 = &ds.test[0].z[0];
    let mut series = vec![(
        "true".to_string(),
        rollout(FieldSource::True(spec), spec, z0, preset.horizon, preset.rollout_samples)?,
    )];
    for m in models {
        let r = rollout(FieldSource::Learned(m), spec, z0, preset.horizon, preset.rollout_samples)?;
        series.push((m.kind().to_string(), r));
    }
    write(&root.join("energy.csv"), &energy_csv(&series))?;
    for (label, r) in &series {
        write(&root.join(format!("traj_{label}.csv")), &trajectory_csv(spec, r))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn tiny_run_writes_bundle_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let opts = ReproduceOptions {
            repeats: 2,
            seed: 11,
            out: dir.path().to_path_buf(),
            overrides: Overrides {
                trajectories: Some(4),
                steps: Some(3),
                steps_scale: None,
                clean: false,
            },
            max_rollouts: Some(1),
            verbose: false,
        };
        let p = preset("spring").unwrap();
        let first = reproduce_table(&p, &opts).unwrap();
        assert_eq!(first.seeds, vec![11, 12]);
        assert_eq!(first.table.len(), 3);
        assert_eq!(first.reused, 0);
        assert_eq!(first.orderings.as_ref().unwrap().total, 9);
        let root = dir.path().join("spring");
        for f in ["table.csv", "summary.json", "energy.csv", "traj_true.csv", "traj_kar.csv", "seed12/hnn.khm"] {
            assert!(root.join(f).exists(), "{f}");
        }
        let energy = fs::read_to_string(root.join("energy.csv")).unwrap();
        assert!(energy.starts_with("t,H_true,H_baseline,H_hnn,H_kar\n"));

        let second = reproduce_table(&p, &opts).unwrap();
        assert_eq!(second.reused, 6);
        assert_eq!(second.table, first.table);

        // new data invalidates models with an unchanged configuration
        let clean = ReproduceOptions {
            overrides: Overrides { clean: true, ..opts.overrides },
            ..opts
        };
        assert_eq!(reproduce_table(&p, &clean).unwrap().reused, 0);
    }
}
