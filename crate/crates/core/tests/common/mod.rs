//! Measurements shared by the property, physics and acceptance suites.
//! Each returns the worst observed error so callers can assert or report.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sympkan::models::{deserialize_model, serialize_model, Model, ModelKind};
use sympkan::spline::SplineGrid;
use sympkan::systems::{
    build_dataset, integrate, linspace, sample_initial_conditions, DatasetConfig, Method, SystemKind, SystemSpec,
    TimeSpan,
};
use sympkan::training::{
    adam_step, lbfgs_step, loss_and_grad, loss_value, AdamConfig, AdamState, ArchitectureConfig, LbfgsConfig,
    LbfgsState,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn systems() -> Vec<SystemSpec> {
    SystemKind::ALL.iter().map(|&k| SystemSpec::standard(k)).collect()
}

/// `n` states drawn from the system's initial-condition sampler.
pub fn states(spec: &SystemSpec, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let d = spec.phase_dim();
    let mut z = Array2::zeros((n, d));
    for mut row in z.outer_iter_mut() {
        let s = sample_initial_conditions(spec, rng);
        row.assign(&ndarray::ArrayView1::from(&s[..]));
    }
    z
}

/// Small model of `kind` initialized on `states`.
pub fn small_model(kind: ModelKind, states: &Array2<f64>, rng: &mut ChaCha8Rng) -> Model {
    let arch = match kind {
        ModelKind::Baseline => ArchitectureConfig::Baseline { hidden: vec![12, 12] },
        ModelKind::Hnn => ArchitectureConfig::Hnn { hidden: vec![12, 12] },
        ModelKind::Kar => ArchitectureConfig::Kar {
            hidden: vec![3],
            grid: 3,
            k: 3,
        },
    };
    arch.init_model(states.view(), rng).expect("model initializes")
}

/// Worst `|Σ_i B_i(x) − 1|` over points inside random grids.
pub fn partition_of_unity_error(trials: usize) -> f64 {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let lo = r.random_range(-3.0..1.0);
        let hi = lo + r.random_range(0.5..4.0);
        let grid = SplineGrid::new(lo, hi, r.random_range(1..9), r.random_range(0..6)).unwrap();
        for _ in 0..50 {
            let x = r.random_range(lo..hi);
            let s: f64 = grid.bspline_basis(x).iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// Worst gap between basis derivatives and central differences, for degree ≥ 1.
pub fn basis_derivative_error(trials: usize) -> f64 {
    let mut r = rng(2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let grid = SplineGrid::new(-1.0, 1.0, r.random_range(1..8), r.random_range(1..6)).unwrap();
        for _ in 0..30 {
            let x = r.random_range(-0.99..0.99);
            // keep clear of knots, where low-degree derivatives jump
            if grid.knots().iter().any(|k| (k - x).abs() < 1e-4) {
                continue;
            }
            let d = grid.bspline_basis_derivative(x).unwrap();
            let up = grid.bspline_basis(x + h);
            let down = grid.bspline_basis(x - h);
            for i in 0..d.len() {
                worst = worst.max((d[i] - (up[i] - down[i]) / (2.0 * h)).abs());
            }
        }
    }
    worst
}

/// Relative error `‖g_ad − g_fd‖ / ‖g_fd‖` of the loss gradient for one model.
pub fn loss_gradient_relative_error(model: &Model, z: &Array2<f64>, dz: &Array2<f64>) -> f64 {
    let (_, g) = loss_and_grad(model, z.view(), dz.view()).unwrap();
    let mut m = model.clone();
    let base = model.param_values().to_vec();
    let h = 1e-6;
    let mut fd = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + h;
        m.set_param_values(&x);
        let up = loss_value(&m, z.view(), dz.view()).unwrap();
        x[i] = base[i] - h;
        m.set_param_values(&x);
        let down = loss_value(&m, z.view(), dz.view()).unwrap();
        fd[i] = (up - down) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Worst loss-gradient relative error over every family and system.
pub fn worst_loss_gradient_error() -> (f64, String) {
    let mut worst = (0.0f64, String::new());
    for (i, spec) in systems().into_iter().enumerate() {
        let mut r = rng(10 + i as u64);
        let z = states(&spec, 6, &mut r);
        let dz = Array2::from_shape_fn(z.dim(), |_| r.random_range(-1.0..1.0));
        for kind in ModelKind::ALL {
            let m = small_model(kind, &z, &mut r);
            let e = loss_gradient_relative_error(&m, &z, &dz);
            if e > worst.0 {
                worst = (e, format!("{kind} on {}", spec.kind));
            }
        }
    }
    worst
}

/// Worst `|∇·f|` of Hamiltonian model fields at `n` states per system,
/// from central differences of the field.
pub fn worst_symplectic_divergence(n: usize) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, spec) in systems().into_iter().enumerate() {
        let mut r = rng(20 + i as u64);
        let z = states(&spec, n, &mut r);
        for kind in [ModelKind::Hnn, ModelKind::Kar] {
            let m = small_model(kind, &z, &mut r);
            for row in z.outer_iter() {
                let mut div = 0.0;
                for k in 0..row.len() {
                    let mut a = row.to_vec();
                    a[k] += h;
                    let up = m.vector_field(&a).unwrap()[k];
                    a[k] -= 2.0 * h;
                    let down = m.vector_field(&a).unwrap()[k];
                    div += (up - down) / (2.0 * h);
                }
                worst = worst.max(div.abs());
            }
        }
    }
    worst
}

/// Number of models (out of `n`) whose serialized round trip is not bit-exact.
pub fn round_trip_mismatches(n: usize) -> usize {
    let mut r = rng(30);
    let mut bad = 0;
    for i in 0..n {
        let spec = &systems()[i % 4];
        let z = states(spec, 8, &mut r);
        let m = small_model(ModelKind::ALL[i % 3], &z, &mut r);
        let back = deserialize_model(&serialize_model(&m)).unwrap();
        let same_bits = back
            .param_values()
            .iter()
            .zip(m.param_values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !(same_bits && back == m && serialize_model(&back) == serialize_model(&m)) {
            bad += 1;
        }
    }
    bad
}

/// Worst gap between the analytic field and `J∇H` from central differences.
pub fn true_field_error() -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, spec) in systems().into_iter().enumerate() {
        let mut r = rng(40 + i as u64);
        let z = states(&spec, 50, &mut r);
        let d = spec.dim();
        for row in z.outer_iter() {
            let f = spec.vector_field(row.as_slice().unwrap()).unwrap();
            for k in 0..2 * d {
                let mut a = row.to_vec();
                a[k] += h;
                let up = spec.hamiltonian(&a).unwrap();
                a[k] -= 2.0 * h;
                let down = spec.hamiltonian(&a).unwrap();
                let grad = (up - down) / (2.0 * h);
                // q̇ = ∂H/∂p, ṗ = −∂H/∂q
                let expect = if k < d { -grad } else { grad };
                let idx = if k < d { k + d } else { k - d };
                worst = worst.max((f[idx] - expect).abs());
            }
        }
    }
    worst
}

/// Worst relative energy drift over clean generated trajectories.
pub fn clean_trajectory_drift(per_system: usize) -> f64 {
    let mut worst = 0.0f64;
    for spec in systems() {
        let span = match spec.kind {
            SystemKind::SpringMass | SystemKind::Pendulum => TimeSpan::Fixed { t_end: 3.0 },
            _ => TimeSpan::Periods { periods: 1.0 },
        };
        let cfg = DatasetConfig {
            system: spec.clone(),
            train_trajectories: per_system,
            test_trajectories: 1,
            samples: 30,
            span,
            sigma2: 0.0,
        };
        let ds = build_dataset(&cfg, "drift", 3).unwrap();
        for t in ds.train.iter().chain(&ds.test) {
            let h0 = t.energy[0];
            for h in &t.energy {
                worst = worst.max(((h - h0) / h0.abs().max(1e-12)).abs());
            }
        }
    }
    worst
}

/// `|z(π/2) − (cos, −sin)(π/2)|` for the unit spring from `(1, 0)` under RK45 at 1e-10.
pub fn spring_closed_form_error() -> f64 {
    let spec = SystemSpec::spring_mass();
    let t = integrate(&spec, &[1.0, 0.0], &[0.0, PI / 2.0], Method::rk45(1e-10)).unwrap();
    let z = &t.z[1];
    (z[0] - (PI / 2.0).cos()).abs().max((z[1] + (PI / 2.0).sin()).abs())
}

/// Worst change in total linear momentum along n-body trajectories.
pub fn momentum_drift() -> f64 {
    let mut worst = 0.0f64;
    for spec in [SystemSpec::two_body(), SystemSpec::three_body()] {
        let mut r = rng(50);
        for _ in 0..5 {
            let z0 = sample_initial_conditions(&spec, &mut r);
            let horizon = spec.nominal_period(&z0);
            let t = integrate(&spec, &z0, &linspace(0.0, horizon, 40), Method::rk45(1e-10)).unwrap();
            let p0 = spec.total_momentum(&t.z[0]).unwrap();
            for z in &t.z {
                let p = spec.total_momentum(z).unwrap();
                worst = worst.max((p[0] - p0[0]).abs()).max((p[1] - p0[1]).abs());
            }
        }
    }
    worst
}

/// L-BFGS iterations to reach `‖∇f‖ < 1e-8` on a random SPD quadratic in 10-D.
pub fn lbfgs_quadratic_iterations(seed: u64) -> Option<usize> {
    let mut r = rng(seed);
    let n = 10;
    let b = Array2::from_shape_fn((n, n), |_| r.random_range(-1.0..1.0));
    let a = b.t().dot(&b) + Array2::<f64>::eye(n);
    let c: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> {
        let xv = ndarray::ArrayView1::from(x);
        let ax = a.dot(&xv);
        let val = 0.5 * xv.dot(&ax) - c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>();
        Ok((val, ax.iter().zip(&c).map(|(g, c)| g - c).collect()))
    };
    let mut x = vec![0.0; n];
    let mut st = LbfgsState::new();
    for it in 0..=30 {
        let (_, g) = f(&x).unwrap();
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8 {
            return Some(it);
        }
        lbfgs_step(&mut x, f, &mut st, &LbfgsConfig::default()).unwrap();
    }
    None
}

/// L-BFGS iterations to reach `f < 1e-6` on Rosenbrock from (−1.2, 1).
pub fn lbfgs_rosenbrock_iterations() -> Option<usize> {
    let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        Ok((v, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
    };
    let mut x = vec![-1.2, 1.0];
    let mut st = LbfgsState::new();
    for it in 0..=200 {
        if f(&x).unwrap().0 < 1e-6 {
            return Some(it);
        }
        lbfgs_step(&mut x, f, &mut st, &LbfgsConfig::default()).unwrap();
    }
    None
}

/// Adam steps at lr 0.1 to bring θ² from θ = 1 below 1e-3.
pub fn adam_square_steps() -> Option<usize> {
    let mut theta = vec![1.0];
    let mut st = AdamState::new(1);
    let cfg = AdamConfig::new(0.1, 0.0);
    for step in 0..=500 {
        if theta[0] * theta[0] < 1e-3 {
            return Some(step);
        }
        let g = vec![2.0 * theta[0]];
        adam_step(&mut theta, &g, &mut st, &cfg).unwrap();
    }
    None
}
