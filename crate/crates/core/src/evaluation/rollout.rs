use crate::models::Model;
use crate::systems::{linspace, solve, FieldError, IntegrationFailure, Method, SolveOptions, SystemSpec, VectorField};

use super::{EvalError, MeanStd};

pub const ROLLOUT_TOLERANCE: f64 = 1e-9;
const ROLLOUT_MAX_STEPS: usize = 500_000;

/// Where rollout dynamics come from.
#[derive(Debug, Clone, Copy)]
pub enum FieldSource<'a> {
    /// `J∇H_θ` for Hamiltonian models, the raw output for the baseline.
    Learned(&'a Model),
    True(&'a SystemSpec),
}

impl FieldSource<'_> {
    pub fn label(&self) -> String {
        match self {
            FieldSource::Learned(m) => m.kind().to_string(),
            FieldSource::True(_) => "true".into(),
        }
    }
}

impl VectorField for FieldSource<'_> {
    fn dim(&self) -> usize {
        match self {
            FieldSource::Learned(m) => m.input_dim(),
            FieldSource::True(s) => s.phase_dim(),
        }
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        match self {
            FieldSource::Learned(m) => {
                let f = m.vector_field(z).map_err(|e| FieldError(e.to_string()))?;
                out.copy_from_slice(&f);
                Ok(())
            }
            FieldSource::True(s) => s.eval(z, out),
        }
    }
}

/// An integrated trajectory with the true energy at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub true_energy: Vec<f64>,
    /// Set when the rollout stopped early.
    pub failure: Option<IntegrationFailure>,
}

impl Rollout {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }

    /// Time average of `(H(z(t)) − H(z(0)))²` over the recorded samples.
    pub fn energy_drift(&self) -> f64 {
        let Some(&h0) = self.true_energy.first() else {
            return 0.0;
        };
        self.true_energy.iter().map(|h| (h - h0).powi(2)).sum::<f64>() / self.true_energy.len() as f64
    }
}

/// Integrates `source` from `z0` over `[0, horizon]` with RK45 at
/// `atol = rtol = 1e-9`, sampling `samples` evenly spaced times. Blow-ups and
/// singular states truncate the rollout instead of failing.
pub fn rollout(
    source: FieldSource<'_>,
    system: &SystemSpec,
    z0: &[f64],
    horizon: f64,
    samples: usize,
) -> Result<Rollout, EvalError> {
    rollout_with(source, system, z0, &linspace(0.0, horizon, samples), ROLLOUT_TOLERANCE)
}

pub fn rollout_with(
    source: FieldSource<'_>,
    system: &SystemSpec,
    z0: &[f64],
    times: &[f64],
    tol: f64,
) -> Result<Rollout, EvalError> {
    if z0.len() != system.phase_dim() || source.dim() != system.phase_dim() {
        return Err(EvalError::Usage(format!(
            "initial state of width {} does not fit the {} system",
            z0.len(),
            system.kind
        )));
    }
    let opts = SolveOptions {
        max_steps: ROLLOUT_MAX_STEPS,
        ..SolveOptions::new(Method::rk45(tol))
    };
    let sol = solve(&source, z0, times, &opts);
    let mut out = Rollout {
        times: Vec::with_capacity(sol.times.len()),
        states: Vec::with_capacity(sol.times.len()),
        true_energy: Vec::with_capacity(sol.times.len()),
        failure: sol.failure,
    };
    for (t, z) in sol.times.into_iter().zip(sol.states) {
        match system.hamiltonian(&z) {
            Ok(h) if h.is_finite() => {
                out.times.push(t);
                out.states.push(z);
                out.true_energy.push(h);
            }
            Ok(_) | Err(_) => {
                out.failure = Some(IntegrationFailure {
                    t_last: out.times.last().copied().unwrap_or(t),
                    reason: "true energy undefined along the rollout".into(),
                });
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub summary: MeanStd,
    pub per_trajectory: Vec<f64>,
    pub diverged: Vec<bool>,
}

/// Energy drift of `source` from each initial state: the time-averaged
/// squared deviation of the true energy, then mean and std over states.
/// Truncated rollouts contribute their recorded part.
pub fn energy_drift(
    source: FieldSource<'_>,
    system: &SystemSpec,
    initials: &[Vec<f64>],
    horizon: f64,
    samples: usize,
) -> Result<DriftReport, EvalError> {
    let drift = drift_report(source, system, initials, horizon, samples)?;
    if drift.diverged.iter().all(|&d| d) {
        return Err(EvalError::Divergence { count: initials.len() });
    }
    Ok(drift)
}

/// [`energy_drift`] without the all-diverged check.
pub(crate) fn drift_report(
    source: FieldSource<'_>,
    system: &SystemSpec,
    initials: &[Vec<f64>],
    horizon: f64,
    samples: usize,
) -> Result<DriftReport, EvalError> {
    if initials.is_empty() {
        return Err(EvalError::Usage("no initial states".into()));
    }
    let mut per = Vec::with_capacity(initials.len());
    let mut diverged = Vec::with_capacity(initials.len());
    for z0 in initials {
        let r = rollout(source, system, z0, horizon, samples)?;
        per.push(r.energy_drift());
        diverged.push(r.diverged());
    }
    Ok(DriftReport {
        summary: MeanStd::of(&per),
        per_trajectory: per,
        diverged,
    })
}
