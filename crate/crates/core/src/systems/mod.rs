//! Ground-truth physics for the four benchmarks.
//!
//! Phase-space vectors are flat: `z = [q_1..q_d, p_1..p_d]`. For planar
//! n-body systems `q = [x_1, y_1, x_2, y_2, ..]` and `p` follows the same order.

mod dataset;
mod integrate;
mod sampling;

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    add_noise, build_dataset, meta_path, read_dataset, stack, write_dataset, Dataset, DatasetConfig, DatasetError,
    DatasetMeta, Split, TimeSpan, Trajectory,
};
pub use integrate::{
    integrate, linspace, solve, FieldError, IntegrationFailure, Method, SolveOptions, Solution, VectorField,
};
pub use sampling::sample_initial_conditions;

const COLLISION_DISTANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("state has dimension {found}, the system expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("bodies {i} and {j} coincide (distance {distance:e})")]
    Singularity { i: usize, j: usize, distance: f64 },
    #[error("integration failed after t = {t_last}: {reason}")]
    Integration { t_last: f64, reason: String },
    #[error("invalid system: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    SpringMass,
    Pendulum,
    TwoBody,
    ThreeBody,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::SpringMass,
        SystemKind::Pendulum,
        SystemKind::TwoBody,
        SystemKind::ThreeBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::SpringMass => "spring_mass",
            SystemKind::Pendulum => "pendulum",
            SystemKind::TwoBody => "two_body",
            SystemKind::ThreeBody => "three_body",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical coordinates split into positions and momenta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        Self { q, p }
    }

    pub fn from_flat(z: &[f64]) -> Self {
        assert!(z.len().is_multiple_of(2), "phase vector must have even length");
        let (q, p) = z.split_at(z.len() / 2);
        Self::new(q.to_vec(), p.to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    /// One mass per body (spring and pendulum have a single mass).
    pub masses: Vec<f64>,
    pub spring_constant: f64,
    pub length: f64,
    pub gravity: f64,
    pub grav_constant: f64,
}

impl SystemSpec {
    /// `H = p²/2m + k q²/2` with `m = k = 1`.
    pub fn spring_mass() -> Self {
        Self {
            kind: SystemKind::SpringMass,
            masses: vec![1.0],
            spring_constant: 1.0,
            length: 0.0,
            gravity: 0.0,
            grav_constant: 0.0,
        }
    }

    /// `H = p²/(2mℓ²) + 2mgℓ(1 − cos q)` with `m = ½`, `ℓ = 1`, `g = 3`.
    pub fn pendulum() -> Self {
        Self {
            kind: SystemKind::Pendulum,
            masses: vec![0.5],
            spring_constant: 0.0,
            length: 1.0,
            gravity: 3.0,
            grav_constant: 0.0,
        }
    }

    pub fn two_body() -> Self {
        Self::n_body(SystemKind::TwoBody, 2)
    }

    pub fn three_body() -> Self {
        Self::n_body(SystemKind::ThreeBody, 3)
    }

    fn n_body(kind: SystemKind, n: usize) -> Self {
        Self {
            kind,
            masses: vec![1.0; n],
            spring_constant: 0.0,
            length: 0.0,
            gravity: 0.0,
            grav_constant: 1.0,
        }
    }

    pub fn standard(kind: SystemKind) -> Self {
        match kind {
            SystemKind::SpringMass => Self::spring_mass(),
            SystemKind::Pendulum => Self::pendulum(),
            SystemKind::TwoBody => Self::two_body(),
            SystemKind::ThreeBody => Self::three_body(),
        }
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        let bodies = match self.kind {
            SystemKind::SpringMass | SystemKind::Pendulum => 1,
            SystemKind::TwoBody => 2,
            SystemKind::ThreeBody => 3,
        };
        if self.masses.len() != bodies {
            return Err(SystemError::InvalidSpec(format!(
                "{} needs {bodies} masses, got {}",
                self.kind,
                self.masses.len()
            )));
        }
        if self.masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(SystemError::InvalidSpec("masses must be positive".into()));
        }
        let bad = match self.kind {
            SystemKind::SpringMass => !(self.spring_constant > 0.0),
            SystemKind::Pendulum => !(self.length > 0.0 && self.gravity > 0.0),
            _ => !(self.grav_constant > 0.0),
        };
        if bad {
            return Err(SystemError::InvalidSpec(format!("non-positive constant for {}", self.kind)));
        }
        Ok(())
    }

    /// Configuration-space dimension `d`.
    pub fn dim(&self) -> usize {
        match self.kind {
            SystemKind::SpringMass | SystemKind::Pendulum => 1,
            SystemKind::TwoBody | SystemKind::ThreeBody => 2 * self.masses.len(),
        }
    }

    pub fn phase_dim(&self) -> usize {
        2 * self.dim()
    }

    fn check(&self, z: &[f64]) -> Result<(), SystemError> {
        if z.len() == self.phase_dim() {
            Ok(())
        } else {
            Err(SystemError::Dimension {
                expected: self.phase_dim(),
                found: z.len(),
            })
        }
    }

    pub fn hamiltonian(&self, z: &[f64]) -> Result<f64, SystemError> {
        self.check(z)?;
        let d = self.dim();
        let (q, p) = z.split_at(d);
        Ok(match self.kind {
            SystemKind::SpringMass => {
                p[0] * p[0] / (2.0 * self.masses[0]) + 0.5 * self.spring_constant * q[0] * q[0]
            }
            SystemKind::Pendulum => {
                let (m, l, g) = (self.masses[0], self.length, self.gravity);
                p[0] * p[0] / (2.0 * m * l * l) + 2.0 * m * g * l * (1.0 - q[0].cos())
            }
            SystemKind::TwoBody | SystemKind::ThreeBody => {
                let n = self.masses.len();
                let mut h = 0.0;
                for i in 0..n {
                    h += (p[2 * i].powi(2) + p[2 * i + 1].powi(2)) / (2.0 * self.masses[i]);
                }
                for i in 0..n {
                    for j in i + 1..n {
                        let r = self.distance(q, i, j)?;
                        h -= self.grav_constant * self.masses[i] * self.masses[j] / r;
                    }
                }
                h
            }
        })
    }

    fn distance(&self, q: &[f64], i: usize, j: usize) -> Result<f64, SystemError> {
        let r = (q[2 * i] - q[2 * j]).hypot(q[2 * i + 1] - q[2 * j + 1]);
        if r < COLLISION_DISTANCE {
            Err(SystemError::Singularity { i, j, distance: r })
        } else {
            Ok(r)
        }
    }

    /// `(∂H/∂p, −∂H/∂q)` written into `out`.
    pub fn vector_field_into(&self, z: &[f64], out: &mut [f64]) -> Result<(), SystemError> {
        self.check(z)?;
        let d = self.dim();
        let (q, p) = z.split_at(d);
        let (dq, dp) = out.split_at_mut(d);
        match self.kind {
            SystemKind::SpringMass => {
                dq[0] = p[0] / self.masses[0];
                dp[0] = -self.spring_constant * q[0];
            }
            SystemKind::Pendulum => {
                let (m, l, g) = (self.masses[0], self.length, self.gravity);
                dq[0] = p[0] / (m * l * l);
                dp[0] = -2.0 * m * g * l * q[0].sin();
            }
            SystemKind::TwoBody | SystemKind::ThreeBody => {
                let n = self.masses.len();
                for i in 0..n {
                    dq[2 * i] = p[2 * i] / self.masses[i];
                    dq[2 * i + 1] = p[2 * i + 1] / self.masses[i];
                }
                dp.fill(0.0);
                for i in 0..n {
                    for j in i + 1..n {
                        let r = self.distance(q, i, j)?;
                        let s = self.grav_constant * self.masses[i] * self.masses[j] / (r * r * r);
                        let fx = s * (q[2 * j] - q[2 * i]);
                        let fy = s * (q[2 * j + 1] - q[2 * i + 1]);
                        dp[2 * i] += fx;
                        dp[2 * i + 1] += fy;
                        dp[2 * j] -= fx;
                        dp[2 * j + 1] -= fy;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn vector_field(&self, z: &[f64]) -> Result<Vec<f64>, SystemError> {
        let mut out = vec![0.0; z.len()];
        self.vector_field_into(z, &mut out)?;
        Ok(out)
    }

    /// Total linear momentum `Σ p_i` of an n-body state.
    pub fn total_momentum(&self, z: &[f64]) -> Option<[f64; 2]> {
        if !matches!(self.kind, SystemKind::TwoBody | SystemKind::ThreeBody) || z.len() != self.phase_dim() {
            return None;
        }
        let p = &z[self.dim()..];
        Some(p.chunks(2).fold([0.0, 0.0], |acc, c| [acc[0] + c[0], acc[1] + c[1]]))
    }

    /// Characteristic period used to scale time spans.
    ///
    /// Oscillators use their small-amplitude period. n-body systems use the
    /// circular-orbit period at the state's mean distance from the centre of mass.
    pub fn nominal_period(&self, z: &[f64]) -> f64 {
        match self.kind {
            SystemKind::SpringMass => 2.0 * PI * (self.masses[0] / self.spring_constant).sqrt(),
            SystemKind::Pendulum => 2.0 * PI * (self.length / self.gravity).sqrt(),
            SystemKind::TwoBody | SystemKind::ThreeBody => {
                let n = self.masses.len();
                let r = mean_radius(&z[..2 * n]);
                let g = self.grav_constant * self.masses[0];
                match self.kind {
                    // separation 2r, total mass 2m
                    SystemKind::TwoBody => 2.0 * PI * ((2.0 * r).powi(3) / (2.0 * g)).sqrt(),
                    // equilateral ring: v² = G m / (√3 r)
                    _ => 2.0 * PI * (3f64.sqrt() * r.powi(3) / g).sqrt(),
                }
            }
        }
    }

    /// Nominal period of the reference configuration (unit radius for n-body).
    pub fn reference_period(&self) -> f64 {
        let n = self.masses.len();
        match self.kind {
            SystemKind::TwoBody | SystemKind::ThreeBody => {
                let q: Vec<f64> = (0..n)
                    .flat_map(|i| {
                        let a = 2.0 * PI * i as f64 / n as f64;
                        [a.cos(), a.sin()]
                    })
                    .collect();
                self.nominal_period(&q)
            }
            _ => self.nominal_period(&[]),
        }
    }
}

fn mean_radius(q: &[f64]) -> f64 {
    let n = q.len() / 2;
    let cx = q.iter().step_by(2).sum::<f64>() / n as f64;
    let cy = q.iter().skip(1).step_by(2).sum::<f64>() / n as f64;
    q.chunks(2).map(|c| (c[0] - cx).hypot(c[1] - cy)).sum::<f64>() / n as f64
}

pub fn hamiltonian(spec: &SystemSpec, z: &[f64]) -> Result<f64, SystemError> {
    spec.hamiltonian(z)
}

pub fn true_vector_field(spec: &SystemSpec, z: &PhaseState) -> Result<PhaseState, SystemError> {
    spec.vector_field(&z.to_flat()).map(|v| PhaseState::from_flat(&v))
}

impl VectorField for SystemSpec {
    fn dim(&self) -> usize {
        self.phase_dim()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        self.vector_field_into(z, out).map_err(|e| FieldError(e.to_string()))
    }
}
