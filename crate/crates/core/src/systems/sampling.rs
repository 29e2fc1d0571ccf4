use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{SystemKind, SystemSpec};

const SPRING_ENERGY: (f64, f64) = (0.2, 1.0);
const PENDULUM_RADIUS: (f64, f64) = (1.3, 2.3);
const TWO_BODY_RADIUS: (f64, f64) = (0.5, 1.5);
const TWO_BODY_SPEED_FACTOR: (f64, f64) = (0.8, 1.2);
const THREE_BODY_RADIUS: (f64, f64) = (0.9, 1.2);
const THREE_BODY_POSITION_JITTER: f64 = 0.02;
const THREE_BODY_SPEED_JITTER: f64 = 0.05;
const MIN_SEPARATION: f64 = 0.1;

/// Draws one initial phase-space state.
///
/// * spring: total energy uniform in `[0.2, 1]`, uniform phase angle
/// * pendulum: `(q, p)` on a ring of radius uniform in `[1.3, 2.3]`
/// * two-body: bodies opposite each other at radius `R ∈ [0.5, 1.5]` from the
///   centre of mass, tangential speed `f/(2√R)` with `f ∈ [0.8, 1.2]`
///   (`f = 1` is circular)
/// * three-body: equilateral ring of radius `r ∈ [0.9, 1.2]` with circular
///   speeds, small Gaussian jitter, then shifted to zero total momentum and
///   a centred centre of mass
pub fn sample_initial_conditions<R: Rng + ?Sized>(spec: &SystemSpec, rng: &mut R) -> Vec<f64> {
    let angle = rng.random_range(0.0..2.0 * PI);
    match spec.kind {
        SystemKind::SpringMass => {
            let e = rng.random_range(SPRING_ENERGY.0..=SPRING_ENERGY.1);
            let (m, k) = (spec.masses[0], spec.spring_constant);
            vec![(2.0 * e / k).sqrt() * angle.cos(), (2.0 * m * e).sqrt() * angle.sin()]
        }
        SystemKind::Pendulum => {
            let r = rng.random_range(PENDULUM_RADIUS.0..=PENDULUM_RADIUS.1);
            vec![r * angle.cos(), r * angle.sin()]
        }
        SystemKind::TwoBody => {
            let r = rng.random_range(TWO_BODY_RADIUS.0..=TWO_BODY_RADIUS.1);
            let f = rng.random_range(TWO_BODY_SPEED_FACTOR.0..=TWO_BODY_SPEED_FACTOR.1);
            let (m, g) = (spec.masses[0], spec.grav_constant);
            // centripetal balance at separation 2r: m v²/r = G m² / (2r)²
            let v = f * (g * m / (4.0 * r)).sqrt();
            let (c, s) = (angle.cos(), angle.sin());
            let (x, y) = (r * c, r * s);
            let (px, py) = (-m * v * s, m * v * c);
            vec![x, y, -x, -y, px, py, -px, -py]
        }
        SystemKind::ThreeBody => loop {
            let z = three_body_ring(spec, rng, angle);
            if min_separation(&z[..6]) > MIN_SEPARATION {
                return z;
            }
        },
    }
}

fn three_body_ring<R: Rng + ?Sized>(spec: &SystemSpec, rng: &mut R, phase: f64) -> Vec<f64> {
    let r = rng.random_range(THREE_BODY_RADIUS.0..=THREE_BODY_RADIUS.1);
    let (m, g) = (spec.masses[0], spec.grav_constant);
    let v = (g * m / (3f64.sqrt() * r)).sqrt();
    let pos_noise = Normal::new(0.0, THREE_BODY_POSITION_JITTER).expect("valid sd");
    let vel_noise = Normal::new(0.0, THREE_BODY_SPEED_JITTER * v).expect("valid sd");
    let mut q = vec![0.0; 6];
    let mut p = vec![0.0; 6];
    for i in 0..3 {
        let a = phase + 2.0 * PI * i as f64 / 3.0;
        q[2 * i] = r * a.cos() + pos_noise.sample(rng);
        q[2 * i + 1] = r * a.sin() + pos_noise.sample(rng);
        p[2 * i] = m * (-v * a.sin() + vel_noise.sample(rng));
        p[2 * i + 1] = m * (v * a.cos() + vel_noise.sample(rng));
    }
    for axis in 0..2 {
        let qc = (0..3).map(|i| q[2 * i + axis]).sum::<f64>() / 3.0;
        let pc = (0..3).map(|i| p[2 * i + axis]).sum::<f64>() / 3.0;
        for i in 0..3 {
            q[2 * i + axis] -= qc;
            p[2 * i + axis] -= pc;
        }
    }
    q.extend(p);
    q
}

pub(crate) fn min_separation(q: &[f64]) -> f64 {
    let n = q.len() / 2;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            best = best.min((q[2 * i] - q[2 * j]).hypot(q[2 * i + 1] - q[2 * j + 1]));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spring_energy_in_range() {
        let spec = SystemSpec::spring_mass();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let h = spec.hamiltonian(&sample_initial_conditions(&spec, &mut rng)).unwrap();
            assert!((0.2 - 1e-12..=1.0 + 1e-12).contains(&h), "{h}");
        }
    }

    #[test]
    fn two_body_is_bound_with_zero_momentum() {
        let spec = SystemSpec::two_body();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z = sample_initial_conditions(&spec, &mut rng);
            assert!(spec.hamiltonian(&z).unwrap() < 0.0);
            let [px, py] = spec.total_momentum(&z).unwrap();
            assert!(px.abs() < 1e-15 && py.abs() < 1e-15);
        }
    }

    #[test]
    fn three_body_bodies_are_separated() {
        let spec = SystemSpec::three_body();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let z = sample_initial_conditions(&spec, &mut rng);
            assert!(min_separation(&z[..6]) > 0.1);
            let [px, py] = spec.total_momentum(&z).unwrap();
            assert!(px.abs() < 1e-14 && py.abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        for kind in SystemKind::ALL {
            let spec = SystemSpec::standard(kind);
            let a = sample_initial_conditions(&spec, &mut ChaCha8Rng::seed_from_u64(42));
            let b = sample_initial_conditions(&spec, &mut ChaCha8Rng::seed_from_u64(42));
            assert_eq!(a, b);
            assert_eq!(a.len(), spec.phase_dim());
        }
    }
}
