//! Fixed-step RK4, adaptive Dormand–Prince RK45 and kick-drift-kick leapfrog.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SystemError, SystemSpec, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct FieldError(pub String);

/// An autonomous ODE right-hand side `ż = f(z)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<(), FieldError>;
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        (**self).eval(z, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Rk4 { dt: f64 },
    Rk45 { atol: f64, rtol: f64 },
    /// Assumes a separable field: `q̇` depends on `p` only and `ṗ` on `q` only.
    Leapfrog { dt: f64 },
}

impl Method {
    pub fn rk45(tol: f64) -> Self {
        Method::Rk45 { atol: tol, rtol: tol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub method: Method,
    /// Budget of attempted steps across the whole solve.
    pub max_steps: usize,
    /// States with a larger max-norm count as blown up.
    pub blowup_norm: f64,
}

impl SolveOptions {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            max_steps: 2_000_000,
            blowup_norm: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationFailure {
    /// Last time reached with a valid state.
    pub t_last: f64,
    pub reason: String,
}

/// States at the requested times; truncated if the solve failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub failure: Option<IntegrationFailure>,
}

impl Solution {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// `n` evenly spaced points from `t0` to `t1` inclusive (`[t0]` when `n == 1`).
pub fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t0],
        _ => (0..n)
            .map(|i| if i + 1 == n { t1 } else { t0 + (t1 - t0) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

struct Stepper<'f, F: ?Sized> {
    field: &'f F,
    opts: SolveOptions,
    steps: usize,
    t: f64,
    z: Vec<f64>,
    // rk45 state
    h: Option<f64>,
    k1: Option<Vec<f64>>,
}

impl<F: VectorField + ?Sized> Stepper<'_, F> {
    fn f(&self, z: &[f64]) -> Result<Vec<f64>, FieldError> {
        let mut out = vec![0.0; z.len()];
        self.field.eval(z, &mut out)?;
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(FieldError("non-finite derivative".into()))
        }
    }

    fn budget(&mut self) -> Result<(), String> {
        self.steps += 1;
        if self.steps > self.opts.max_steps {
            Err(format!("step budget of {} exhausted", self.opts.max_steps))
        } else {
            Ok(())
        }
    }

    fn check_state(&self, z: &[f64]) -> Result<(), String> {
        let norm = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !norm.is_finite() {
            Err("state became non-finite".into())
        } else if norm > self.opts.blowup_norm {
            Err(format!("state norm {norm:e} exceeds {:e}", self.opts.blowup_norm))
        } else {
            Ok(())
        }
    }

    fn advance_to(&mut self, target: f64) -> Result<(), String> {
        match self.opts.method {
            Method::Rk4 { dt } => self.fixed(target, dt, Self::rk4_step),
            Method::Leapfrog { dt } => self.fixed(target, dt, Self::leapfrog_step),
            Method::Rk45 { atol, rtol } => self.adaptive(target, atol, rtol),
        }
    }

    fn fixed(
        &mut self,
        target: f64,
        dt: f64,
        step: fn(&Self, f64) -> Result<Vec<f64>, FieldError>,
    ) -> Result<(), String> {
        if !(dt > 0.0) {
            return Err(format!("invalid step size {dt}"));
        }
        while self.t < target {
            self.budget()?;
            let remaining = target - self.t;
            let h = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
            let z = step(self, h).map_err(|e| e.0)?;
            self.check_state(&z)?;
            self.z = z;
            self.t = if h == remaining { target } else { self.t + h };
        }
        Ok(())
    }

    fn rk4_step(&self, h: f64) -> Result<Vec<f64>, FieldError> {
        let z = &self.z;
        let axpy = |k: &[f64], a: f64| -> Vec<f64> { z.iter().zip(k).map(|(y, k)| y + a * k).collect() };
        let k1 = self.f(z)?;
        let k2 = self.f(&axpy(&k1, h / 2.0))?;
        let k3 = self.f(&axpy(&k2, h / 2.0))?;
        let k4 = self.f(&axpy(&k3, h))?;
        Ok((0..z.len())
            .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    fn leapfrog_step(&self, h: f64) -> Result<Vec<f64>, FieldError> {
        let d = self.z.len() / 2;
        let mut z = self.z.clone();
        let f = self.f(&z)?;
        for i in 0..d {
            z[d + i] += 0.5 * h * f[d + i];
        }
        let f = self.f(&z)?;
        for i in 0..d {
            z[i] += h * f[i];
        }
        let f = self.f(&z)?;
        for i in 0..d {
            z[d + i] += 0.5 * h * f[d + i];
        }
        Ok(z)
    }

    fn initial_step(&self, f0: &[f64], atol: f64, rtol: f64) -> Result<f64, FieldError> {
        let z = &self.z;
        let sc: Vec<f64> = z.iter().map(|y| atol + rtol * y.abs()).collect();
        let norm = |v: &[f64]| (v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        let (d0, d1) = (norm(z), norm(f0));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let z1: Vec<f64> = z.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
        let f1 = self.f(&z1)?;
        let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1))
    }

    fn adaptive(&mut self, target: f64, atol: f64, rtol: f64) -> Result<(), String> {
        const A2: [f64; 1] = [1.0 / 5.0];
        const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
        const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
        const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
        const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
        const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let n = self.z.len();
        while self.t < target {
            let k1 = match self.k1.take() {
                Some(k) => k,
                None => self.f(&self.z).map_err(|e| e.0)?,
            };
            let mut h_nat = match self.h {
                Some(h) => h,
                None => self.initial_step(&k1, atol, rtol).map_err(|e| e.0)?,
            };
            loop {
                self.budget()?;
                let remaining = target - self.t;
                let clamped = h_nat >= remaining * (1.0 - 1e-12);
                let h = if clamped { remaining } else { h_nat };
                if h < 1e-14 * self.t.abs().max(1.0) {
                    self.k1 = Some(k1);
                    return Err(format!("step size underflow (h = {h:e})"));
                }
                let stage = |ks: &[&Vec<f64>], a: &[f64]| -> Vec<f64> {
                    (0..n)
                        .map(|i| self.z[i] + h * ks.iter().zip(a).map(|(k, a)| a * k[i]).sum::<f64>())
                        .collect()
                };
                let trial = (|| -> Result<(Vec<f64>, Vec<f64>, f64), FieldError> {
                    let k2 = self.f(&stage(&[&k1], &A2))?;
                    let k3 = self.f(&stage(&[&k1, &k2], &A3))?;
                    let k4 = self.f(&stage(&[&k1, &k2, &k3], &A4))?;
                    let k5 = self.f(&stage(&[&k1, &k2, &k3, &k4], &A5))?;
                    let k6 = self.f(&stage(&[&k1, &k2, &k3, &k4, &k5], &A6))?;
                    let y = stage(&[&k1, &k2, &k3, &k4, &k5, &k6], &B);
                    let k7 = self.f(&y)?;
                    let ks = [&k1, &k2, &k3, &k4, &k5, &k6, &k7];
                    let mut acc = 0.0;
                    for i in 0..n {
                        let e = h * ks.iter().zip(&E).map(|(k, e)| e * k[i]).sum::<f64>();
                        let sc = atol + rtol * self.z[i].abs().max(y[i].abs());
                        acc += (e / sc).powi(2);
                    }
                    Ok((y, k7, (acc / n as f64).sqrt()))
                })();
                match trial {
                    Ok((y, k7, err)) if err <= 1.0 => {
                        let factor = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
                        if let Err(e) = self.check_state(&y) {
                            self.k1 = Some(k1);
                            return Err(e);
                        }
                        if !(clamped && factor >= 1.0) {
                            h_nat = h * factor;
                        }
                        self.t = if clamped { target } else { self.t + h };
                        self.z = y;
                        self.k1 = Some(k7);
                        self.h = Some(h_nat);
                        break;
                    }
                    Ok((_, _, err)) if err.is_finite() => {
                        h_nat = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                    }
                    // failed stage evaluation or non-finite error: shrink hard
                    _ => h_nat = h * 0.25,
                }
            }
        }
        Ok(())
    }
}

/// Integrates `field` from `z0` at `t_eval[0]` and records the state at each
/// of `t_eval` (strictly increasing).
pub fn solve<F: VectorField + ?Sized>(field: &F, z0: &[f64], t_eval: &[f64], opts: &SolveOptions) -> Solution {
    assert_eq!(z0.len(), field.dim(), "initial state dimension");
    assert!(t_eval.windows(2).all(|w| w[1] > w[0]), "sample times must increase");
    let mut sol = Solution {
        times: Vec::with_capacity(t_eval.len()),
        states: Vec::with_capacity(t_eval.len()),
        failure: None,
    };
    let Some(&t0) = t_eval.first() else {
        return sol;
    };
    let mut stepper = Stepper {
        field,
        opts: *opts,
        steps: 0,
        t: t0,
        z: z0.to_vec(),
        h: None,
        k1: None,
    };
    if let Err(reason) = stepper.check_state(z0) {
        sol.failure = Some(IntegrationFailure { t_last: t0, reason });
        return sol;
    }
    sol.times.push(t0);
    sol.states.push(z0.to_vec());
    for &t in &t_eval[1..] {
        if let Err(reason) = stepper.advance_to(t) {
            sol.failure = Some(IntegrationFailure {
                t_last: stepper.t,
                reason,
            });
            break;
        }
        sol.times.push(t);
        sol.states.push(stepper.z.clone());
    }
    sol
}

/// Clean trajectory of the true system with analytic derivatives and energies.
pub fn integrate(spec: &SystemSpec, z0: &[f64], times: &[f64], method: Method) -> Result<Trajectory, SystemError> {
    spec.hamiltonian(z0)?;
    let sol = solve(spec, z0, times, &SolveOptions::new(method));
    if let Some(f) = sol.failure {
        return Err(SystemError::Integration {
            t_last: f.t_last,
            reason: f.reason,
        });
    }
    let mut traj = Trajectory::with_capacity(times.len());
    for (t, z) in sol.times.into_iter().zip(sol.states) {
        let dz = spec.vector_field(&z)?;
        let h = spec.hamiltonian(&z)?;
        traj.push(t, z, dz, h);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    struct Linear;
    impl VectorField for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
            out[0] = -z[0];
            Ok(())
        }
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 3.0, 4), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(linspace(2.0, 2.0, 1), vec![2.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }

    #[test]
    fn methods_solve_exponential_decay() {
        let t = linspace(0.0, 2.0, 5);
        for (method, tol) in [
            (Method::Rk4 { dt: 0.01 }, 1e-9),
            (Method::rk45(1e-10), 1e-9),
        ] {
            let sol = solve(&Linear, &[1.0], &t, &SolveOptions::new(method));
            for (ti, z) in sol.times.iter().zip(&sol.states) {
                assert!((z[0] - (-ti).exp()).abs() < tol, "{method:?} at {ti}");
            }
        }
    }

    #[test]
    fn spring_closed_form() {
        let spec = SystemSpec::spring_mass();
        let traj = integrate(&spec, &[1.0, 0.0], &[0.0, PI / 2.0, 2.0 * PI], Method::rk45(1e-10)).unwrap();
        let z = &traj.z[1];
        assert!(z[0].abs() < 1e-6 && (z[1] + 1.0).abs() < 1e-6);
        let z = &traj.z[2];
        assert!((z[0] - 1.0).abs() < 1e-5 && z[1].abs() < 1e-5);
    }

    #[test]
    fn leapfrog_energy_is_bounded() {
        let spec = SystemSpec::spring_mass();
        let t = linspace(0.0, 100.0, 1001);
        let z0 = [0.6, 0.5];
        let h0 = spec.hamiltonian(&z0).unwrap();
        let sol = solve(&spec, &z0, &t, &SolveOptions::new(Method::Leapfrog { dt: 0.1 }));
        assert!(sol.is_complete());
        let dev: Vec<f64> = sol.states.iter().map(|z| (spec.hamiltonian(z).unwrap() - h0).abs()).collect();
        let max_first = dev[..500].iter().copied().fold(0.0, f64::max);
        let max_second = dev[500..].iter().copied().fold(0.0, f64::max);
        assert!(max_first.max(max_second) <= 1e-3, "{max_first} {max_second}");
        assert!(max_second <= 1.01 * max_first, "secular drift: {max_first} -> {max_second}");
    }

    #[test]
    fn zero_length_span_returns_the_initial_state() {
        let spec = SystemSpec::pendulum();
        let traj = integrate(&spec, &[0.4, 0.1], &linspace(0.0, 0.0, 1), Method::rk45(1e-10)).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.z[0], vec![0.4, 0.1]);
    }

    #[test]
    fn blow_up_truncates() {
        struct Explode;
        impl VectorField for Explode {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
                out[0] = z[0] * z[0];
                Ok(())
            }
        }
        // z = 1/(1 - t) blows up at t = 1
        let sol = solve(&Explode, &[1.0], &linspace(0.0, 2.0, 21), &SolveOptions::new(Method::rk45(1e-9)));
        let f = sol.failure.expect("must fail");
        assert!(f.t_last < 1.0 && f.t_last > 0.9, "{f:?}");
        assert_eq!(sol.times.len(), sol.states.len());
        assert!(sol.times.len() <= 11);
    }

    #[test]
    fn collision_reports_integration_error() {
        let spec = SystemSpec::two_body();
        // head-on fall from rest
        let z0 = [-0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        let err = integrate(&spec, &z0, &linspace(0.0, 5.0, 6), Method::rk45(1e-10)).unwrap_err();
        assert!(matches!(err, SystemError::Integration { .. }), "{err:?}");
    }
}
