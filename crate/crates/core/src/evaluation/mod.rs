//! Metrics (derivative MSE and energy drift), plot data and the
//! multi-seed comparison driver.

mod reference;
mod reproduce;
mod rollout;

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Model, ModelError};
use crate::systems::{stack, Dataset, DatasetError, SystemError, SystemKind, SystemSpec, Trajectory};
use crate::training::{loss_value, TrainError};

pub use reference::{reference_tables, OrderingCheck, OrderingSummary, ReferenceRow, ReferenceTable};
pub use reproduce::{reproduce_table, ReproduceOptions, ReproduceOutcome};
pub use rollout::{energy_drift, rollout, rollout_with, DriftReport, FieldSource, Rollout, ROLLOUT_TOLERANCE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Usage(String),
    #[error("all {count} rollouts diverged")]
    Divergence { count: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std: self.std * factor,
        }
    }
}

/// Per-trajectory derivative MSE of `source` against the stored targets.
pub fn trajectory_mse(source: FieldSource<'_>, trajs: &[Trajectory]) -> Result<Vec<f64>, EvalError> {
    if trajs.is_empty() {
        return Err(EvalError::Usage("no trajectories to evaluate".into()));
    }
    trajs
        .iter()
        .map(|t| {
            if t.is_empty() {
                return Err(EvalError::Usage("empty trajectory".into()));
            }
            match source {
                FieldSource::Learned(model) => {
                    let (z, dz) = stack(std::slice::from_ref(t));
                    Ok(loss_value(model, z.view(), dz.view())?)
                }
                FieldSource::True(spec) => {
                    let mut total = 0.0;
                    for (z, dz) in t.z.iter().zip(&t.dz) {
                        let f = spec.vector_field(z)?;
                        total += f.iter().zip(dz).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    }
                    Ok(total / t.len() as f64)
                }
            }
        })
        .collect()
}

/// Derivative MSE per trajectory, summarized as mean ± std over trajectories.
pub fn derivative_mse(model: &Model, trajs: &[Trajectory]) -> Result<MeanStd, EvalError> {
    Ok(MeanStd::of(&trajectory_mse(FieldSource::Learned(model), trajs)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdBasis {
    /// Spread over trajectories of one run.
    Trajectories,
    /// Spread of per-seed means.
    Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub split: String,
    pub index: usize,
    pub mse: f64,
    /// Only for test trajectories.
    pub energy_drift: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub system: SystemKind,
    /// Unscaled.
    pub train: MeanStd,
    pub test: MeanStd,
    pub energy: MeanStd,
    pub scale_exponent: i32,
    pub std_basis: StdBasis,
    pub horizon: f64,
    pub rollout_samples: usize,
    pub diverged: usize,
    pub rollouts: usize,
    pub per_trajectory: Vec<TrajectoryMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub horizon: f64,
    pub rollout_samples: usize,
    /// Use at most this many test trajectories as rollout starts.
    pub max_rollouts: Option<usize>,
    pub scale_exponent: i32,
    /// Report drift over truncated rollouts even when every rollout diverged.
    pub tolerate_divergence: bool,
}

/// Train/test MSE and energy drift of one model (or the true field).
/// Rollouts start from the first stored state of each test trajectory.
pub fn evaluate(source: FieldSource<'_>, dataset: &Dataset, opts: &EvalOptions) -> Result<MetricReport, EvalError> {
    let spec = dataset.system();
    if let FieldSource::Learned(m) = source {
        if m.input_dim() != spec.phase_dim() {
            return Err(EvalError::Usage(format!(
                "model input dimension {} does not match the {} dataset",
                m.input_dim(),
                spec.kind
            )));
        }
    }
    if opts.rollout_samples < 2 || !(opts.horizon > 0.0) {
        return Err(EvalError::Usage("rollouts need a positive horizon and at least 2 samples".into()));
    }
    let train = trajectory_mse(source, &dataset.train)?;
    let test = trajectory_mse(source, &dataset.test)?;
    let n_roll = opts.max_rollouts.unwrap_or(usize::MAX).min(dataset.test.len()).max(1);
    let initials: Vec<Vec<f64>> = dataset.test[..n_roll].iter().map(|t| t.z[0].clone()).collect();
    let drift = if opts.tolerate_divergence {
        rollout::drift_report(source, spec, &initials, opts.horizon, opts.rollout_samples)?
    } else {
        energy_drift(source, spec, &initials, opts.horizon, opts.rollout_samples)?
    };

    let mut per = Vec::with_capacity(train.len() + test.len());
    per.extend(train.iter().enumerate().map(|(i, &mse)| TrajectoryMetrics {
        split: "train".into(),
        index: i,
        mse,
        energy_drift: None,
        diverged: false,
    }));
    per.extend(test.iter().enumerate().map(|(i, &mse)| TrajectoryMetrics {
        split: "test".into(),
        index: i,
        mse,
        energy_drift: drift.per_trajectory.get(i).copied(),
        diverged: drift.diverged.get(i).copied().unwrap_or(false),
    }));
    Ok(MetricReport {
        model: source.label(),
        system: spec.kind,
        train: MeanStd::of(&train),
        test: MeanStd::of(&test),
        energy: drift.summary,
        scale_exponent: opts.scale_exponent,
        std_basis: StdBasis::Trajectories,
        horizon: opts.horizon,
        rollout_samples: opts.rollout_samples,
        diverged: drift.diverged.iter().filter(|&&d| d).count(),
        rollouts: initials.len(),
        per_trajectory: per,
    })
}

/// Combines per-seed reports of one model: mean ± std of the per-seed means.
pub fn aggregate_seeds(reports: &[MetricReport]) -> Result<MetricReport, EvalError> {
    let first = reports
        .first()
        .ok_or_else(|| EvalError::Usage("no reports to aggregate".into()))?;
    if reports.iter().any(|r| r.model != first.model) {
        return Err(EvalError::Usage("reports from different models".into()));
    }
    let col = |f: fn(&MetricReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        train: col(|r| r.train.mean),
        test: col(|r| r.test.mean),
        energy: col(|r| r.energy.mean),
        std_basis: StdBasis::Seeds,
        diverged: reports.iter().map(|r| r.diverged).sum(),
        rollouts: reports.iter().map(|r| r.rollouts).sum(),
        per_trajectory: Vec::new(),
        ..first.clone()
    })
}

pub const REPORT_CSV_HEADER: &str = "model,train_mean,train_std,test_mean,test_std,energy_mean,energy_std,scale";

/// One row per report; values multiplied by `10^scale_exponent`.
pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        let s = 10f64.powi(r.scale_exponent);
        let (a, b, c) = (r.train.scaled(s), r.test.scaled(s), r.energy.scaled(s));
        writeln!(
            out,
            "{},{},{},{},{},{},{},1e{}",
            r.model, a.mean, a.std, b.mean, b.std, c.mean, c.std, r.scale_exponent
        )
        .unwrap();
    }
    out
}

/// Per-trajectory breakdown as CSV.
pub fn breakdown_csv(report: &MetricReport) -> String {
    let mut out = String::from("split,index,mse,energy_drift,diverged\n");
    for t in &report.per_trajectory {
        let drift = t.energy_drift.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", t.split, t.index, t.mse, drift, t.diverged).unwrap();
    }
    out
}

/// `t,H_<label>...` for rollouts that share a time grid. Shorter
/// (truncated) series leave empty cells.
pub fn energy_csv(series: &[(String, Rollout)]) -> String {
    let mut out = String::from("t");
    for (label, _) in series {
        write!(out, ",H_{label}").unwrap();
    }
    out.push('\n');
    let longest = series
        .iter()
        .max_by_key(|(_, r)| r.times.len())
        .map(|(_, r)| r.times.clone())
        .unwrap_or_default();
    for (i, t) in longest.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for (_, r) in series {
            match r.true_energy.get(i) {
                Some(h) => write!(out, ",{h}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Positions along a rollout: `t,x_1,y_1,...` for planar bodies,
/// `t,q,p` for one-degree-of-freedom systems.
pub fn trajectory_csv(spec: &SystemSpec, rollout: &Rollout) -> String {
    let mut out = String::from("t");
    let d = spec.dim();
    let planar = matches!(spec.kind, SystemKind::TwoBody | SystemKind::ThreeBody);
    if planar {
        for b in 1..=d / 2 {
            write!(out, ",x_{b},y_{b}").unwrap();
        }
    } else {
        out.push_str(",q,p");
    }
    out.push('\n');
    for (t, z) in rollout.times.iter().zip(&rollout.states) {
        write!(out, "{t}").unwrap();
        let cols = if planar { &z[..d] } else { &z[..] };
        for v in cols {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}
