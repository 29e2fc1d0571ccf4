//! Built-in experiment presets: dataset rules, per-model training setups,
//! metric scaling and rollout horizons.

use serde::{Deserialize, Serialize};

use crate::models::ModelKind;
use crate::systems::{DatasetConfig, SystemSpec, TimeSpan};
use crate::training::{ArchitectureConfig, LbfgsConfig, OptimizerConfig, TrainConfig};

pub const PRESET_NAMES: [&str; 4] = ["spring", "pendulum", "two_body", "three_body"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub name: String,
    pub dataset: DatasetConfig,
    pub baseline: TrainConfig,
    pub hnn: TrainConfig,
    pub kar: TrainConfig,
    /// Reported metrics are multiplied by `10^scale_exponent`.
    pub scale_exponent: i32,
    /// Rollout length for energy drift, in time units.
    pub horizon: f64,
    pub rollout_samples: usize,
}

/// Desk-scale adjustments applied on top of a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    /// Total trajectory count; the train/test ratio is kept.
    pub trajectories: Option<usize>,
    /// Fixed step count for every model.
    pub steps: Option<usize>,
    /// Multiplier on each model's step count (applied when `steps` is unset).
    pub steps_scale: Option<f64>,
    /// Drop observation noise.
    pub clean: bool,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

fn adam(kind: ModelKind, steps: usize, batch_size: usize) -> TrainConfig {
    let hidden = vec![200, 200];
    TrainConfig {
        model: match kind {
            ModelKind::Baseline => ArchitectureConfig::Baseline { hidden },
            _ => ArchitectureConfig::Hnn { hidden },
        },
        optimizer: OptimizerConfig::Adam {
            lr: 1e-3,
            weight_decay: 1e-4,
        },
        steps,
        batch_size,
        seed: 0,
    }
}

fn kar(hidden: Vec<usize>, grid: usize, k: usize, steps: usize) -> TrainConfig {
    TrainConfig {
        model: ArchitectureConfig::Kar { hidden, grid, k },
        optimizer: OptimizerConfig::Lbfgs(LbfgsConfig::default()),
        steps,
        batch_size: 50,
        seed: 0,
    }
}

pub fn preset(name: &str) -> Option<ExperimentPreset> {
    let p = match name {
        "spring" => ExperimentPreset {
            name: name.into(),
            dataset: DatasetConfig {
                system: SystemSpec::spring_mass(),
                train_trajectories: 25,
                test_trajectories: 25,
                samples: 30,
                span: TimeSpan::Fixed { t_end: 3.0 },
                sigma2: 0.1,
            },
            baseline: adam(ModelKind::Baseline, 2000, 750),
            hnn: adam(ModelKind::Hnn, 2000, 750),
            kar: kar(vec![2], 2, 5, 200),
            scale_exponent: 3,
            horizon: 20.0,
            rollout_samples: 400,
        },
        "pendulum" => ExperimentPreset {
            name: name.into(),
            dataset: DatasetConfig {
                system: SystemSpec::pendulum(),
                train_trajectories: 25,
                test_trajectories: 25,
                samples: 45,
                span: TimeSpan::Fixed { t_end: 3.0 },
                sigma2: 0.1,
            },
            baseline: adam(ModelKind::Baseline, 2000, 1125),
            hnn: adam(ModelKind::Hnn, 2000, 1125),
            kar: kar(vec![2], 2, 3, 200),
            scale_exponent: 3,
            horizon: 20.0,
            rollout_samples: 400,
        },
        "two_body" => ExperimentPreset {
            name: name.into(),
            dataset: DatasetConfig {
                system: SystemSpec::two_body(),
                train_trajectories: 800,
                test_trajectories: 200,
                samples: 50,
                span: TimeSpan::Periods { periods: 1.0 },
                sigma2: 0.05,
            },
            baseline: adam(ModelKind::Baseline, 10_000, 200),
            hnn: adam(ModelKind::Hnn, 10_000, 200),
            kar: kar(vec![10, 10], 3, 3, 4000),
            scale_exponent: 6,
            horizon: 3.0 * SystemSpec::two_body().reference_period(),
            rollout_samples: 400,
        },
        "three_body" => ExperimentPreset {
            name: name.into(),
            dataset: DatasetConfig {
                system: SystemSpec::three_body(),
                train_trajectories: 4000,
                test_trajectories: 1000,
                samples: 20,
                span: TimeSpan::Periods { periods: 0.5 },
                sigma2: 0.2,
            },
            baseline: adam(ModelKind::Baseline, 10_000, 600),
            hnn: adam(ModelKind::Hnn, 10_000, 600),
            kar: kar(vec![15, 10], 2, 3, 200),
            scale_exponent: 3,
            horizon: 3.0 * SystemSpec::three_body().reference_period(),
            rollout_samples: 400,
        },
        _ => return None,
    };
    Some(p)
}

pub fn all_presets() -> Vec<ExperimentPreset> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("built-in preset")).collect()
}

impl ExperimentPreset {
    pub fn train_config(&self, kind: ModelKind) -> &TrainConfig {
        match kind {
            ModelKind::Baseline => &self.baseline,
            ModelKind::Hnn => &self.hnn,
            ModelKind::Kar => &self.kar,
        }
    }

    /// Training setup for `kind` with the run seed filled in.
    pub fn train_config_seeded(&self, kind: ModelKind, seed: u64) -> TrainConfig {
        let mut cfg = self.train_config(kind).clone();
        cfg.seed = seed;
        cfg
    }

    pub fn scale(&self) -> f64 {
        10f64.powi(self.scale_exponent)
    }

    pub fn with_overrides(&self, o: &Overrides) -> ExperimentPreset {
        let mut p = self.clone();
        if let Some(total) = o.trajectories {
            let d = &mut p.dataset;
            let all = d.train_trajectories + d.test_trajectories;
            let train = ((total as f64 * d.train_trajectories as f64 / all as f64).round() as usize).clamp(1, total.max(2) - 1);
            d.train_trajectories = train;
            d.test_trajectories = total.max(2) - train;
        }
        for cfg in [&mut p.baseline, &mut p.hnn, &mut p.kar] {
            if let Some(steps) = o.steps {
                cfg.steps = steps.max(1);
            } else if let Some(f) = o.steps_scale {
                cfg.steps = ((cfg.steps as f64 * f).round() as usize).max(1);
            }
        }
        if o.clean {
            p.dataset.sigma2 = 0.0;
        }
        p
    }
}
