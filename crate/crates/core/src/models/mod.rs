//! The three competing function families and the symplectic vector field.
//!
//! * [`KarHamiltonian`]: Kolmogorov–Arnold spline network, scalar energy.
//! * [`MlpHamiltonian`]: tanh MLP, scalar energy.
//! * [`BaselineNet`]: tanh MLP predicting `ż` directly.
//!
//! Both Hamiltonian families produce dynamics through `ż = J ∇_z H`.

mod dense;
mod io;
mod kar;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{Graph, GraphError, ParameterStore, Var};
use crate::spline::{EdgeVars, SplineError};

pub use dense::DenseNet;
pub use io::{deserialize_model, load_model, save_model, serialize_model, MODEL_FORMAT_VERSION};
pub use kar::{KanLayer, KarArchitecture, KarHamiltonian, LayerDomains};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected input dimension {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("{operation} is not defined for the {kind} model")]
    Kind { operation: &'static str, kind: ModelKind },
    #[error("malformed model file at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("model file version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    Hnn,
    Kar,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Baseline, ModelKind::Hnn, ModelKind::Kar];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Hnn => "hnn",
            ModelKind::Kar => "kar",
        }
    }

    pub fn is_hamiltonian(self) -> bool {
        !matches!(self, ModelKind::Baseline)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "hnn" | "mlp" => Ok(ModelKind::Hnn),
            "kar" => Ok(ModelKind::Kar),
            other => Err(format!("unknown model kind `{other}` (expected baseline, hnn or kar)")),
        }
    }
}

/// `J = [[0, I_d], [-I_d, 0]]`, applied without materializing the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticMatrix {
    d: usize,
}

impl SymplecticMatrix {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    pub fn half_dim(&self) -> usize {
        self.d
    }

    /// `J v = (v_p, -v_q)`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), 2 * self.d);
        let (vq, vp) = v.split_at(self.d);
        vp.iter().copied().chain(vq.iter().map(|x| -x)).collect()
    }

    pub fn apply_vars(&self, g: &mut Graph, v: &[Var]) -> Vec<Var> {
        assert_eq!(v.len(), 2 * self.d);
        let (vq, vp) = v.split_at(self.d);
        let mut out = vp.to_vec();
        out.extend(vq.iter().map(|&x| g.neg(x)));
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = 2 * self.d;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i < self.d && j == i + self.d {
                            1.0
                        } else if i >= self.d && j + self.d == i {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Scalar-energy tanh MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHamiltonian {
    net: DenseNet,
}

impl MlpHamiltonian {
    /// `hidden` widths between the `input_dim` phase-space input and the scalar output.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self {
            net: DenseNet::random(&widths(input_dim, hidden, 1), rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        Self {
            net: DenseNet::zeros(&widths(input_dim, hidden, 1)),
        }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }
}

/// Unconstrained tanh MLP mapping `z` to a predicted `ż`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineNet {
    net: DenseNet,
}

impl BaselineNet {
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self {
            net: DenseNet::random(&widths(input_dim, hidden, input_dim), rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        Self {
            net: DenseNet::zeros(&widths(input_dim, hidden, input_dim)),
        }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Kar(KarHamiltonian),
    Mlp(MlpHamiltonian),
    Baseline(BaselineNet),
}

impl From<KarHamiltonian> for Model {
    fn from(m: KarHamiltonian) -> Self {
        Model::Kar(m)
    }
}

impl From<MlpHamiltonian> for Model {
    fn from(m: MlpHamiltonian) -> Self {
        Model::Mlp(m)
    }
}

impl From<BaselineNet> for Model {
    fn from(m: BaselineNet) -> Self {
        Model::Baseline(m)
    }
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Kar(_) => ModelKind::Kar,
            Model::Mlp(_) => ModelKind::Hnn,
            Model::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Kar(m) => m.input_dim(),
            Model::Mlp(m) => m.net.input_dim(),
            Model::Baseline(m) => m.net.input_dim(),
        }
    }

    pub fn params(&self) -> &ParameterStore {
        match self {
            Model::Kar(m) => m.params(),
            Model::Mlp(m) => m.net.params(),
            Model::Baseline(m) => m.net.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        match self {
            Model::Kar(m) => m.params_mut(),
            Model::Mlp(m) => m.net.params_mut(),
            Model::Baseline(m) => m.net.params_mut(),
        }
    }

    pub fn param_values(&self) -> &[f64] {
        self.params().values()
    }

    /// Panics if the length differs from the fixed parameter count.
    pub fn set_param_values(&mut self, values: &[f64]) {
        self.params_mut()
            .set_values(values)
            .unwrap_or_else(|n| panic!("parameter count is fixed; got {n} values"));
    }

    fn check_dim(&self, found: usize) -> Result<(), ModelError> {
        let expected = self.input_dim();
        if expected == found {
            Ok(())
        } else {
            Err(ModelError::Shape { expected, found })
        }
    }

    fn require_hamiltonian(&self, operation: &'static str) -> Result<(), ModelError> {
        if self.kind().is_hamiltonian() {
            Ok(())
        } else {
            Err(ModelError::Kind {
                operation,
                kind: self.kind(),
            })
        }
    }

    /// H_θ(z).
    pub fn energy(&self, z: &[f64]) -> Result<f64, ModelError> {
        self.require_hamiltonian("eval_hamiltonian")?;
        self.check_dim(z.len())?;
        Ok(match self {
            Model::Kar(m) => m.energy(z),
            Model::Mlp(m) => m.net.forward(z)[0],
            Model::Baseline(_) => unreachable!(),
        })
    }

    /// ∇_z H_θ(z).
    pub fn energy_gradient(&self, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.require_hamiltonian("grad_wrt_inputs")?;
        self.check_dim(z.len())?;
        Ok(match self {
            Model::Kar(m) => m.energy_gradient(z),
            Model::Mlp(m) => m.net.input_gradient(z),
            Model::Baseline(_) => unreachable!(),
        })
    }

    /// Predicted `ż`: `J ∇H` for Hamiltonian models, the raw output for the baseline.
    pub fn vector_field(&self, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(z.len())?;
        match self {
            Model::Baseline(b) => Ok(b.net.forward(z)),
            _ => {
                let grad = self.energy_gradient(z)?;
                Ok(SymplecticMatrix::new(z.len() / 2).apply(&grad))
            }
        }
    }

    /// Registers the model's parameters as leaves of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundModel<'_> {
        let vars = match self {
            Model::Kar(m) => Binding::Kar(m.bind(g)),
            Model::Mlp(m) => Binding::Dense(m.net.bind(g)),
            Model::Baseline(m) => Binding::Dense(m.net.bind(g)),
        };
        BoundModel { model: self, vars }
    }
}

enum Binding {
    Kar(Vec<Vec<Vec<EdgeVars>>>),
    Dense(dense::DenseVars),
}

/// A model whose parameters are leaves of one particular graph.
pub struct BoundModel<'m> {
    model: &'m Model,
    vars: Binding,
}

impl BoundModel<'_> {
    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn energy(&self, g: &mut Graph, z: &[Var]) -> Result<Var, ModelError> {
        self.model.require_hamiltonian("eval_hamiltonian")?;
        self.model.check_dim(z.len())?;
        Ok(match (self.model, &self.vars) {
            (Model::Kar(m), Binding::Kar(e)) => m.graph_energy(g, e, z),
            (Model::Mlp(m), Binding::Dense(v)) => m.net.graph_forward(g, v, z).1[0],
            _ => unreachable!("binding matches model"),
        })
    }

    pub fn input_gradient(&self, g: &mut Graph, z: &[Var]) -> Result<Vec<Var>, ModelError> {
        self.model.require_hamiltonian("grad_wrt_inputs")?;
        self.model.check_dim(z.len())?;
        Ok(match (self.model, &self.vars) {
            (Model::Kar(m), Binding::Kar(e)) => m.graph_input_gradient(g, e, z),
            (Model::Mlp(m), Binding::Dense(v)) => m.net.graph_input_gradient(g, v, z),
            _ => unreachable!("binding matches model"),
        })
    }

    pub fn vector_field(&self, g: &mut Graph, z: &[Var]) -> Result<Vec<Var>, ModelError> {
        self.model.require_hamiltonian("symplectic_vector_field")?;
        let grad = self.input_gradient(g, z)?;
        Ok(SymplecticMatrix::new(z.len() / 2).apply_vars(g, &grad))
    }

    pub fn baseline_output(&self, g: &mut Graph, z: &[Var]) -> Result<Vec<Var>, ModelError> {
        self.model.check_dim(z.len())?;
        match (self.model, &self.vars) {
            (Model::Baseline(m), Binding::Dense(v)) => Ok(m.net.graph_forward(g, v, z).1),
            _ => Err(ModelError::Kind {
                operation: "baseline_forward",
                kind: self.model.kind(),
            }),
        }
    }

    /// The model's prediction of `ż` at `z` as nodes.
    pub fn predicted_derivative(&self, g: &mut Graph, z: &[Var]) -> Result<Vec<Var>, ModelError> {
        match self.model {
            Model::Baseline(_) => self.baseline_output(g, z),
            _ => self.vector_field(g, z),
        }
    }
}

/// Energy node H_θ(z).
pub fn eval_hamiltonian(g: &mut Graph, model: &Model, z: &[Var]) -> Result<Var, ModelError> {
    model.bind(g).energy(g, z)
}

/// ∇_z H_θ as nodes that stay differentiable in θ.
pub fn grad_wrt_inputs(g: &mut Graph, model: &Model, z: &[Var]) -> Result<Vec<Var>, ModelError> {
    model.bind(g).input_gradient(g, z)
}

/// `(∂H/∂p, -∂H/∂q)` as nodes.
pub fn symplectic_vector_field(g: &mut Graph, model: &Model, z: &[Var]) -> Result<Vec<Var>, ModelError> {
    model.bind(g).vector_field(g, z)
}

pub fn baseline_forward(g: &mut Graph, model: &Model, z: &[Var]) -> Result<Vec<Var>, ModelError> {
    model.bind(g).baseline_output(g, z)
}
