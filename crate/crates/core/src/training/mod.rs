//! Optimizers and the training loop shared by all three model families.

mod adam;
mod lbfgs;
mod loss;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{save_model, BaselineNet, KarHamiltonian, MlpHamiltonian, Model, ModelError, ModelKind};
use crate::systems::{stack, Dataset, Trajectory};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lbfgs::{lbfgs_step, LbfgsConfig, LbfgsState, LbfgsStep, StepKind};
pub use loss::{baseline_loss, graph_loss_and_grad, hnn_loss, loss_and_grad, loss_value};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure{}: {message}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numerical { step: Option<usize>, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        TrainError::Numerical {
            step: None,
            message: message.into(),
        }
    }

    fn at_step(self, step: usize) -> Self {
        match self {
            TrainError::Numerical { message, .. } => TrainError::Numerical {
                step: Some(step),
                message,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchitectureConfig {
    Baseline { hidden: Vec<usize> },
    Hnn { hidden: Vec<usize> },
    /// `grid` counts knot intervals; `k` is the spline degree.
    Kar { hidden: Vec<usize>, grid: usize, k: usize },
}

impl ArchitectureConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ArchitectureConfig::Baseline { .. } => ModelKind::Baseline,
            ArchitectureConfig::Hnn { .. } => ModelKind::Hnn,
            ArchitectureConfig::Kar { .. } => ModelKind::Kar,
        }
    }

    /// Fresh model. Spline domains are fitted to `states` (rows of `z`).
    pub fn init_model<R: Rng + ?Sized>(&self, states: ArrayView2<'_, f64>, rng: &mut R) -> Result<Model, TrainError> {
        let dim = states.ncols();
        Ok(match self {
            ArchitectureConfig::Baseline { hidden } => BaselineNet::random(dim, hidden, rng).into(),
            ArchitectureConfig::Hnn { hidden } => MlpHamiltonian::random(dim, hidden, rng).into(),
            ArchitectureConfig::Kar { hidden, grid, k } => {
                let mut widths = vec![dim];
                widths.extend(hidden);
                widths.push(1);
                KarHamiltonian::fitted_to(&widths, *grid, *k, states, rng)
                    .map_err(ModelError::from)?
                    .into()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam { lr: f64, weight_decay: f64 },
    Lbfgs(LbfgsConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ArchitectureConfig,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Usage(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        match &self.optimizer {
            OptimizerConfig::Adam { lr, weight_decay } if !(*lr > 0.0) || !(*weight_decay >= 0.0) => {
                bad("Adam needs lr > 0 and weight_decay >= 0")
            }
            OptimizerConfig::Lbfgs(c) if c.memory == 0 || c.max_iter == 0 || c.max_trials == 0 || !(c.shrink > 0.0 && c.shrink < 1.0) => {
                bad("L-BFGS needs memory >= 1, max_trials >= 1 and 0 < shrink < 1")
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TrainError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Batch loss at the start of the step.
    pub loss: f64,
    pub grad_norm: f64,
    /// Wall time of the step.
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
}

impl TrainHistory {
    /// Equality ignoring wall times.
    pub fn same_run(&self, other: &Self) -> bool {
        let key = |h: &Self| -> Vec<(usize, u64, u64)> {
            h.steps
                .iter()
                .map(|r| (r.step, r.loss.to_bits(), r.grad_norm.to_bits()))
                .collect()
        };
        key(self) == key(other)
            && self.final_train_loss.to_bits() == other.final_train_loss.to_bits()
            && self.final_test_loss.to_bits() == other.final_test_loss.to_bits()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,grad_norm,ms\n");
        for r in &self.steps {
            writeln!(out, "{},{},{},{:.3}", r.step, r.loss, r.grad_norm, r.ms).unwrap();
        }
        out
    }
}

/// Visits each sample once per epoch in a fresh random order.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, size: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            size,
            rng,
        }
    }

    fn next(&mut self) -> &[usize] {
        let n = self.order.len();
        if self.size >= n {
            return &self.order;
        }
        if self.pos >= n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(n);
        let batch = &self.order[self.pos..end];
        self.pos = end;
        batch
    }
}

fn now_ms() -> f64 {
    #[cfg(not(target_arch = "wasm32"))]
    {
        use std::sync::OnceLock;
        use std::time::Instant;
        static START: OnceLock<Instant> = OnceLock::new();
        START.get_or_init(Instant::now).elapsed().as_secs_f64() * 1e3
    }
    #[cfg(target_arch = "wasm32")]
    {
        0.0
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where to save the last good model if training aborts.
    pub checkpoint: Option<&'a Path>,
    pub on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
    /// Start from this model instead of a fresh initialization.
    pub initial: Option<Model>,
}

/// Mean per-sample loss over every sample of `trajs`.
pub fn dataset_loss(model: &Model, trajs: &[Trajectory]) -> Result<f64, TrainError> {
    let (z, dz) = stack(trajs);
    loss_value(model, z.view(), dz.view())
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<(Model, TrainHistory), TrainError> {
    train_with(config, dataset, TrainOptions::default())
}

/// Trains a model of `config.model` on the training split and reports
/// final train and test losses. Deterministic given `config.seed`.
pub fn train_with(
    config: &TrainConfig,
    dataset: &Dataset,
    mut opts: TrainOptions<'_>,
) -> Result<(Model, TrainHistory), TrainError> {
    config.validate()?;
    let (z, dz) = stack(&dataset.train);
    if z.nrows() == 0 {
        return Err(TrainError::Usage("training split is empty".into()));
    }
    if z.ncols() != dataset.system().phase_dim() {
        return Err(TrainError::Usage("dataset width does not match its system".into()));
    }
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s);
        rng
    };
    let mut model = match opts.initial.take() {
        Some(m) if m.kind() == config.model.kind() && m.input_dim() == z.ncols() => m,
        Some(_) => return Err(TrainError::Usage("initial model does not match the configuration".into())),
        None => config.model.init_model(z.view(), &mut stream(0))?,
    };
    let mut batcher = Batcher::new(z.nrows(), config.batch_size, stream(1));
    let mut history = TrainHistory::default();
    let mut adam = AdamState::new(model.params().len());
    let mut lbfgs = LbfgsState::new();
    let mut trial = model.clone();
    let mut params = model.param_values().to_vec();

    for step in 0..config.steps {
        let idx = batcher.next();
        let zb = z.select(Axis(0), idx);
        let dzb = dz.select(Axis(0), idx);
        let start = now_ms();
        let outcome = match &config.optimizer {
            OptimizerConfig::Adam { lr, weight_decay } => loss_and_grad(&model, zb.view(), dzb.view()).and_then(|(l, g)| {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                adam_step(&mut params, &g, &mut adam, &AdamConfig::new(*lr, *weight_decay)).map(|_| (l, norm))
            }),
            OptimizerConfig::Lbfgs(cfg) => {
                // Each iteration starts where the previous one accepted, so the
                // last evaluation is reused.
                let mut last: Option<(Vec<f64>, f64, Vec<f64>)> = None;
                let mut eval = |x: &[f64]| -> Result<(f64, Vec<f64>), TrainError> {
                    if let Some((lx, l, g)) = &last {
                        if lx.as_slice() == x {
                            return Ok((*l, g.clone()));
                        }
                    }
                    trial.set_param_values(x);
                    let (l, g) = loss_and_grad(&trial, zb.view(), dzb.view())?;
                    last = Some((x.to_vec(), l, g.clone()));
                    Ok((l, g))
                };
                let mut first = None;
                let mut run = || -> Result<(f64, f64), TrainError> {
                    for _ in 0..cfg.max_iter {
                        let s = lbfgs_step(&mut params, &mut eval, &mut lbfgs, cfg)?;
                        first.get_or_insert((s.loss_before, s.grad_norm));
                        if matches!(s.kind, StepKind::Rejected | StepKind::Stationary) {
                            break;
                        }
                    }
                    Ok(first.expect("max_iter is positive"))
                };
                run()
            }
        };
        let (loss, grad_norm) = match outcome {
            Ok(v) => v,
            Err(e) => {
                if let Some(path) = opts.checkpoint {
                    save_model(&model, path)?;
                }
                return Err(e.at_step(step));
            }
        };
        model.set_param_values(&params);
        let record = StepRecord {
            step,
            loss,
            grad_norm,
            ms: now_ms() - start,
        };
        if let Some(cb) = opts.on_step.as_mut() {
            cb(&record);
        }
        history.steps.push(record);
    }
    history.final_train_loss = loss_value(&model, z.view(), dz.view())?;
    history.final_test_loss = if dataset.test.is_empty() {
        f64::NAN
    } else {
        dataset_loss(&model, &dataset.test)?
    };
    Ok((model, history))
}
