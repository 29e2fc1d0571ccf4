//! Derivative-matching losses: mean over samples of `‖f_θ(z) − ż‖²`.

use ndarray::ArrayView2;

use super::TrainError;
use crate::diffcore::{Graph, Var};
use crate::models::{Model, ModelKind};

fn check_batch(model: &Model, z: ArrayView2<'_, f64>, dz: ArrayView2<'_, f64>) -> Result<(), TrainError> {
    if z.nrows() == 0 {
        return Err(TrainError::Usage("empty batch".into()));
    }
    if z.dim() != dz.dim() || z.ncols() != model.input_dim() {
        return Err(TrainError::Usage(format!(
            "batch shapes {:?}/{:?} do not fit a model with input dimension {}",
            z.dim(),
            dz.dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

fn squared_error_mean(
    g: &mut Graph,
    model: &Model,
    z: ArrayView2<'_, f64>,
    dz: ArrayView2<'_, f64>,
) -> Result<Var, TrainError> {
    let bound = model.bind(g);
    let mut terms = Vec::with_capacity(z.nrows() * z.ncols());
    for (zr, dzr) in z.outer_iter().zip(dz.outer_iter()) {
        let inputs = g.inputs(zr.as_slice().expect("contiguous rows"));
        let pred = bound.predicted_derivative(g, &inputs)?;
        for (&p, &target) in pred.iter().zip(dzr.iter()) {
            let r = g.offset(p, -target);
            terms.push(g.square(r));
        }
    }
    let total = g.sum(&terms);
    Ok(g.scale(total, 1.0 / z.nrows() as f64))
}

/// `(1/M) Σ ‖q̇ − ∂H/∂p‖² + ‖ṗ + ∂H/∂q‖²` as a graph node.
pub fn hnn_loss(g: &mut Graph, model: &Model, z: ArrayView2<'_, f64>, dz: ArrayView2<'_, f64>) -> Result<Var, TrainError> {
    if !model.kind().is_hamiltonian() {
        return Err(TrainError::Usage(format!("hnn_loss needs a Hamiltonian model, got {}", model.kind())));
    }
    check_batch(model, z, dz)?;
    squared_error_mean(g, model, z, dz)
}

/// `(1/M) Σ ‖net(z) − ż‖²` as a graph node.
pub fn baseline_loss(
    g: &mut Graph,
    model: &Model,
    z: ArrayView2<'_, f64>,
    dz: ArrayView2<'_, f64>,
) -> Result<Var, TrainError> {
    if model.kind() != ModelKind::Baseline {
        return Err(TrainError::Usage(format!("baseline_loss needs a baseline net, got {}", model.kind())));
    }
    check_batch(model, z, dz)?;
    squared_error_mean(g, model, z, dz)
}

/// Loss through the graph, with its parameter gradient.
pub fn graph_loss_and_grad(
    model: &Model,
    z: ArrayView2<'_, f64>,
    dz: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut g = Graph::new(model.param_values());
    let loss = match model.kind() {
        ModelKind::Baseline => baseline_loss(&mut g, model, z, dz)?,
        _ => hnn_loss(&mut g, model, z, dz)?,
    };
    let value = g.forward(loss).map_err(|e| TrainError::numerical(e.to_string()))?;
    let grad = g
        .backward(loss)
        .map_err(|e| TrainError::numerical(e.to_string()))?
        .into_param_gradient();
    Ok((value, grad))
}

/// Loss and gradient by the fastest exact route: the graph for spline
/// models, batched closed-form kernels for the dense nets.
pub fn loss_and_grad(
    model: &Model,
    z: ArrayView2<'_, f64>,
    dz: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<f64>), TrainError> {
    check_batch(model, z, dz)?;
    let (loss, grad) = match model {
        Model::Kar(_) => graph_loss_and_grad(model, z, dz)?,
        Model::Mlp(m) => m.net().symplectic_loss_and_grad(z, dz, true),
        Model::Baseline(m) => m.net().direct_loss_and_grad(z, dz, true),
    };
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::numerical(format!("non-finite loss or gradient (loss = {loss})")));
    }
    Ok((loss, grad))
}

/// Loss value only.
pub fn loss_value(model: &Model, z: ArrayView2<'_, f64>, dz: ArrayView2<'_, f64>) -> Result<f64, TrainError> {
    check_batch(model, z, dz)?;
    let loss = match model {
        Model::Kar(_) => {
            let mut total = 0.0;
            for (zr, dzr) in z.outer_iter().zip(dz.outer_iter()) {
                let pred = model.vector_field(&zr.to_vec())?;
                total += pred.iter().zip(dzr).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
            }
            total / z.nrows() as f64
        }
        Model::Mlp(m) => m.net().symplectic_loss_and_grad(z, dz, false).0,
        Model::Baseline(m) => m.net().direct_loss_and_grad(z, dz, false).0,
    };
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BaselineNet, KarArchitecture, KarHamiltonian, MlpHamiltonian};
    use ndarray::{s, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spring_batch(n: usize) -> (Array2<f64>, Array2<f64>) {
        let z = Array2::from_shape_fn((n, 2), |(i, c)| ((i * 7 + c * 3) as f64 * 0.37).sin());
        let dz = Array2::from_shape_fn((n, 2), |(i, c)| if c == 0 { z[[i, 1]] } else { -z[[i, 0]] });
        (z, dz)
    }

    fn models(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Model> {
        let arch = KarArchitecture {
            widths: vec![dim, 3, 1],
            intervals: 2,
            degree: 3,
            domains: vec![vec![(-1.2, 1.2); dim], vec![(-3.0, 3.0); 3]],
        };
        vec![
            KarHamiltonian::random(arch, rng).unwrap().into(),
            MlpHamiltonian::random(dim, &[6, 5], rng).into(),
            BaselineNet::random(dim, &[6, 5], rng).into(),
        ]
    }

    #[test]
    fn zero_model_loss_is_mean_squared_norm() {
        let (z, dz) = spring_batch(9);
        let expect = dz.iter().map(|v| v * v).sum::<f64>() / 9.0;
        for m in [
            Model::from(MlpHamiltonian::zeros(2, &[4, 4])),
            Model::from(BaselineNet::zeros(2, &[4])),
        ] {
            let (l, _) = loss_and_grad(&m, z.view(), dz.view()).unwrap();
            assert!((l - expect).abs() < 1e-14);
            let (lg, _) = graph_loss_and_grad(&m, z.view(), dz.view()).unwrap();
            assert!((lg - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = Model::from(MlpHamiltonian::zeros(2, &[4, 4]));
        let z = Array2::<f64>::zeros((0, 2));
        assert!(matches!(loss_and_grad(&m, z.view(), z.view()), Err(TrainError::Usage(_))));
        let mut g = Graph::new(m.param_values());
        assert!(matches!(hnn_loss(&mut g, &m, z.view(), z.view()), Err(TrainError::Usage(_))));
    }

    #[test]
    fn wrong_family_is_rejected() {
        let (z, dz) = spring_batch(3);
        let b = Model::from(BaselineNet::zeros(2, &[4]));
        let mut g = Graph::new(b.param_values());
        assert!(hnn_loss(&mut g, &b, z.view(), dz.view()).is_err());
        let h = Model::from(MlpHamiltonian::zeros(2, &[4, 4]));
        let mut g = Graph::new(h.param_values());
        assert!(baseline_loss(&mut g, &h, z.view(), dz.view()).is_err());
    }

    #[test]
    fn batch_loss_is_sample_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (z, dz) = spring_batch(10);
        for m in models(2, &mut rng) {
            let full = loss_value(&m, z.view(), dz.view()).unwrap();
            let a = loss_value(&m, z.slice(s![..4, ..]), dz.slice(s![..4, ..])).unwrap();
            let b = loss_value(&m, z.slice(s![4.., ..]), dz.slice(s![4.., ..])).unwrap();
            assert!((full - (4.0 * a + 6.0 * b) / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (z, dz) = spring_batch(8);
        let order = [3, 7, 0, 5, 1, 6, 2, 4];
        let zp = z.select(ndarray::Axis(0), &order);
        let dzp = dz.select(ndarray::Axis(0), &order);
        for m in models(2, &mut rng) {
            let a = loss_value(&m, z.view(), dz.view()).unwrap();
            let b = loss_value(&m, zp.view(), dzp.view()).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn kernels_match_the_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Array2::from_shape_fn((6, 4), |(i, c)| ((i + 2 * c) as f64 * 0.61).cos());
        let dz = Array2::from_shape_fn((6, 4), |(i, c)| ((3 * i + c) as f64 * 0.29).sin());
        for m in models(4, &mut rng) {
            let (l1, g1) = loss_and_grad(&m, z.view(), dz.view()).unwrap();
            let (l2, g2) = graph_loss_and_grad(&m, z.view(), dz.view()).unwrap();
            assert!((l1 - l2).abs() < 1e-12 * l1.max(1.0));
            let scale = g2.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for (a, b) in g1.iter().zip(&g2) {
                assert!((a - b).abs() < 1e-11 * scale, "{} vs {b}", a);
            }
            assert!((loss_value(&m, z.view(), dz.view()).unwrap() - l1).abs() < 1e-12 * l1.max(1.0));
        }
    }
}
