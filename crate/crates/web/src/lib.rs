//! Browser bindings: a spline edge explorer, an integrator energy
//! comparison and a small step-wise KAR training session.
//!
//! The plain functions carry the logic and are tested natively; the
//! `#[wasm_bindgen]` items only convert errors.

use ndarray::Array2;
use sympkan::models::{KarHamiltonian, Model};
use sympkan::spline::{SplineGrid, UnivariateEdge};
use sympkan::systems::{build_dataset, integrate, linspace, stack, Dataset, DatasetConfig, Method, SystemSpec, TimeSpan};
use sympkan::training::{lbfgs_step, loss_and_grad, loss_value, LbfgsConfig, LbfgsState};
use wasm_bindgen::prelude::*;

fn system(name: &str) -> Result<SystemSpec, String> {
    match name {
        "spring" | "spring_mass" => Ok(SystemSpec::spring_mass()),
        "pendulum" => Ok(SystemSpec::pendulum()),
        other => Err(format!("unsupported system '{other}' (spring or pendulum)")),
    }
}

/// Samples `φ(x) = w_b·silu(x) + w_s·Σ c_i B_i(x)` with its derivative on a
/// grid over `[-1, 1]`, plotted over `[-1.5, 1.5]` to show the linear
/// extension. Returns rows `[x, φ, φ']` flattened.
pub fn edge_curve(
    intervals: usize,
    degree: usize,
    coefficients: &[f64],
    base_weight: f64,
    spline_weight: f64,
    samples: usize,
) -> Result<Vec<f64>, String> {
    let grid = SplineGrid::new(-1.0, 1.0, intervals, degree).map_err(|e| e.to_string())?;
    let edge = UnivariateEdge::new(grid, coefficients.to_vec(), base_weight, spline_weight).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(3 * samples);
    for x in linspace(-1.5, 1.5, samples.max(2)) {
        out.extend([x, edge.eval(x), edge.eval_derivative(x)]);
    }
    Ok(out)
}

/// Number of spline coefficients for a grid setting.
pub fn basis_count(intervals: usize, degree: usize) -> Result<usize, String> {
    Ok(SplineGrid::new(-1.0, 1.0, intervals, degree)
        .map_err(|e| e.to_string())?
        .basis_count())
}

/// `|H(t) − H(0)|` for RK4 and leapfrog at step `dt` and adaptive RK45,
/// sampled at `samples` times. Rows `[t, rk4, leapfrog, rk45]` flattened.
pub fn energy_error_series(name: &str, q0: f64, p0: f64, dt: f64, t_end: f64, samples: usize) -> Result<Vec<f64>, String> {
    let spec = system(name)?;
    if !(dt > 0.0 && t_end > 0.0) {
        return Err("dt and t_end must be positive".into());
    }
    let times = linspace(0.0, t_end, samples.max(2));
    let z0 = [q0, p0];
    let run = |m: Method| integrate(&spec, &z0, &times, m).map_err(|e| e.to_string());
    let rk4 = run(Method::Rk4 { dt })?;
    let lf = run(Method::Leapfrog { dt })?;
    let rk45 = run(Method::rk45(1e-6))?;
    let h0 = rk4.energy[0];
    let mut out = Vec::with_capacity(4 * times.len());
    for (i, &t) in times.iter().enumerate() {
        out.extend([
            t,
            (rk4.energy[i] - h0).abs(),
            (lf.energy[i] - h0).abs(),
            (rk45.energy[i] - h0).abs(),
        ]);
    }
    Ok(out)
}

/// A KAR model trained with L-BFGS one step at a time on a small clean
/// dataset of a one-degree-of-freedom system.
pub struct Session {
    spec: SystemSpec,
    dataset: Dataset,
    z: Array2<f64>,
    dz: Array2<f64>,
    model: Model,
    state: LbfgsState,
    steps: usize,
}

impl Session {
    pub fn new(name: &str, seed: u64, hidden: usize, intervals: usize, degree: usize) -> Result<Self, String> {
        let spec = system(name)?;
        let config = DatasetConfig {
            system: spec.clone(),
            train_trajectories: 6,
            test_trajectories: 3,
            samples: 30,
            span: TimeSpan::Fixed { t_end: 3.0 },
            sigma2: 0.0,
        };
        let dataset = build_dataset(&config, name, seed).map_err(|e| e.to_string())?;
        let (z, dz) = stack(&dataset.train);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let model = KarHamiltonian::fitted_to(&[2, hidden.max(1), 1], intervals, degree, z.view(), &mut rng)
            .map_err(|e| e.to_string())?
            .into();
        Ok(Self {
            spec,
            dataset,
            z,
            dz,
            model,
            state: LbfgsState::new(),
            steps: 0,
        })
    }

    /// Runs `n` full-batch L-BFGS steps; returns the training loss.
    pub fn step(&mut self, n: usize) -> Result<f64, String> {
        let mut params = self.model.param_values().to_vec();
        let mut trial = self.model.clone();
        for _ in 0..n {
            lbfgs_step(
                &mut params,
                |x: &[f64]| {
                    trial.set_param_values(x);
                    loss_and_grad(&trial, self.z.view(), self.dz.view())
                },
                &mut self.state,
                &LbfgsConfig::default(),
            )
            .map_err(|e| e.to_string())?;
            self.steps += 1;
        }
        self.model.set_param_values(&params);
        self.train_loss()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn train_loss(&self) -> Result<f64, String> {
        loss_value(&self.model, self.z.view(), self.dz.view()).map_err(|e| e.to_string())
    }

    pub fn test_loss(&self) -> Result<f64, String> {
        let (z, dz) = stack(&self.dataset.test);
        loss_value(&self.model, z.view(), dz.view()).map_err(|e| e.to_string())
    }

    /// Learned and true energy on an `n × n` grid over `[-extent, extent]²`,
    /// each shifted to zero at the origin. Learned values first, then true.
    pub fn energy_maps(&self, n: usize, extent: f64) -> Result<Vec<f64>, String> {
        let axis = linspace(-extent, extent, n.max(2));
        let h_model0 = self.model.energy(&[0.0, 0.0]).map_err(|e| e.to_string())?;
        let h_true0 = self.spec.hamiltonian(&[0.0, 0.0]).map_err(|e| e.to_string())?;
        let mut learned = Vec::with_capacity(axis.len() * axis.len());
        let mut truth = Vec::with_capacity(axis.len() * axis.len());
        for &p in axis.iter().rev() {
            for &q in &axis {
                learned.push(self.model.energy(&[q, p]).map_err(|e| e.to_string())? - h_model0);
                truth.push(self.spec.hamiltonian(&[q, p]).map_err(|e| e.to_string())? - h_true0);
            }
        }
        learned.extend(truth);
        Ok(learned)
    }

    /// Learned and true rollouts from `(q0, p0)`: rows `[t, q, p, q_true, p_true]`.
    pub fn rollout(&self, q0: f64, p0: f64, t_end: f64, samples: usize) -> Result<Vec<f64>, String> {
        use sympkan::evaluation::{rollout, FieldSource};
        let z0 = [q0, p0];
        let learned = rollout(FieldSource::Learned(&self.model), &self.spec, &z0, t_end, samples).map_err(|e| e.to_string())?;
        let truth = rollout(FieldSource::True(&self.spec), &self.spec, &z0, t_end, samples).map_err(|e| e.to_string())?;
        let mut out = Vec::with_capacity(5 * learned.times.len());
        for (i, t) in learned.times.iter().enumerate() {
            out.extend([*t, learned.states[i][0], learned.states[i][1], truth.states[i][0], truth.states[i][1]]);
        }
        Ok(out)
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = edgeCurve)]
pub fn edge_curve_js(
    intervals: usize,
    degree: usize,
    coefficients: Vec<f64>,
    base_weight: f64,
    spline_weight: f64,
    samples: usize,
) -> Result<Vec<f64>, JsError> {
    edge_curve(intervals, degree, &coefficients, base_weight, spline_weight, samples).map_err(js)
}

#[wasm_bindgen(js_name = basisCount)]
pub fn basis_count_js(intervals: usize, degree: usize) -> Result<usize, JsError> {
    basis_count(intervals, degree).map_err(js)
}

#[wasm_bindgen(js_name = energyErrorSeries)]
pub fn energy_error_series_js(
    system: &str,
    q0: f64,
    p0: f64,
    dt: f64,
    t_end: f64,
    samples: usize,
) -> Result<Vec<f64>, JsError> {
    energy_error_series(system, q0, p0, dt, t_end, samples).map_err(js)
}

#[wasm_bindgen(js_name = Trainer)]
pub struct TrainerJs(Session);

#[wasm_bindgen(js_class = Trainer)]
impl TrainerJs {
    #[wasm_bindgen(constructor)]
    pub fn new(system: &str, seed: u64, hidden: usize, intervals: usize, degree: usize) -> Result<TrainerJs, JsError> {
        Session::new(system, seed, hidden, intervals, degree).map(TrainerJs).map_err(js)
    }

    pub fn step(&mut self, n: usize) -> Result<f64, JsError> {
        self.0.step(n).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.0.steps()
    }

    #[wasm_bindgen(js_name = testLoss)]
    pub fn test_loss(&self) -> Result<f64, JsError> {
        self.0.test_loss().map_err(js)
    }

    #[wasm_bindgen(js_name = energyMaps)]
    pub fn energy_maps(&self, n: usize, extent: f64) -> Result<Vec<f64>, JsError> {
        self.0.energy_maps(n, extent).map_err(js)
    }

    pub fn rollout(&self, q0: f64, p0: f64, t_end: f64, samples: usize) -> Result<Vec<f64>, JsError> {
        self.0.rollout(q0, p0, t_end, samples).map_err(js)
    }
}
