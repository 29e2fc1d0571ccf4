//! Kolmogorov–Arnold Hamiltonian: stacked layers whose outputs are sums of
//! learnable univariate edges, `x'_j = Σ_s φ_{s,j}(x_s)`, ending in one scalar.

use std::sync::Arc;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParameterStore, Var};
use crate::spline::{
    edge_eval, edge_eval_derivative, edge_param_count, edge_value_and_derivatives, EdgeVars, SplineError,
    SplineGrid, UnivariateEdge,
};

/// Per-layer domains `(lower, upper)`, one per layer input.
pub type LayerDomains = Vec<Vec<(f64, f64)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    in_dim: usize,
    out_dim: usize,
    grids: Vec<Arc<SplineGrid>>,
    offset: usize,
    edge_len: usize,
}

impl KanLayer {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Grid shared by every edge leaving input `s`.
    pub fn grid(&self, s: usize) -> &Arc<SplineGrid> {
        &self.grids[s]
    }

    /// Offset of edge `s -> j` in the flat parameter vector.
    pub fn edge_offset(&self, s: usize, j: usize) -> usize {
        self.offset + (s * self.out_dim + j) * self.edge_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KarArchitecture {
    /// `[2d, hidden.., 1]`
    pub widths: Vec<usize>,
    pub intervals: usize,
    pub degree: usize,
    pub domains: LayerDomains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KarHamiltonian {
    arch: KarArchitecture,
    layers: Vec<KanLayer>,
    params: ParameterStore,
}

impl KarHamiltonian {
    /// Layers with the given domains and all-zero parameters.
    pub fn zeros(arch: KarArchitecture) -> Result<Self, SplineError> {
        assert!(arch.widths.len() >= 2, "need input and output widths");
        assert_eq!(*arch.widths.last().unwrap(), 1, "a Hamiltonian has one output");
        assert_eq!(arch.domains.len(), arch.widths.len() - 1, "one domain list per layer");
        let mut builder = ParameterStore::builder();
        let mut layers = Vec::new();
        for (l, domains) in arch.domains.iter().enumerate() {
            let (in_dim, out_dim) = (arch.widths[l], arch.widths[l + 1]);
            assert_eq!(domains.len(), in_dim, "one domain per layer input");
            let grids = domains
                .iter()
                .map(|&(a, b)| SplineGrid::new(a, b, arch.intervals, arch.degree).map(Arc::new))
                .collect::<Result<Vec<_>, _>>()?;
            let edge_len = edge_param_count(&grids[0]);
            let offset = builder.len();
            for s in 0..in_dim {
                for j in 0..out_dim {
                    builder.push(format!("layer{l}.edge{s}_{j}"), vec![0.0; edge_len]);
                }
            }
            layers.push(KanLayer {
                in_dim,
                out_dim,
                grids,
                offset,
                edge_len,
            });
        }
        Ok(Self {
            arch,
            layers,
            params: builder.build(),
        })
    }

    /// Random edges (see [`UnivariateEdge::random`]) on the given domains.
    pub fn random<R: Rng + ?Sized>(arch: KarArchitecture, rng: &mut R) -> Result<Self, SplineError> {
        let mut model = Self::zeros(arch)?;
        for l in 0..model.layers.len() {
            model.randomize_layer(l, rng);
        }
        Ok(model)
    }

    fn randomize_layer<R: Rng + ?Sized>(&mut self, l: usize, rng: &mut R) {
        let layer = self.layers[l].clone();
        for s in 0..layer.in_dim {
            for j in 0..layer.out_dim {
                let edge = UnivariateEdge::random((*layer.grids[s]).clone(), rng);
                let off = layer.edge_offset(s, j);
                self.params.values_mut()[off..off + layer.edge_len].copy_from_slice(&edge.params());
            }
        }
    }

    /// Random initialization whose first-layer domains span the data (per
    /// dimension, padded by 10%) and whose hidden-layer domains span the
    /// activations of the freshly initialized preceding layers on that data.
    pub fn fitted_to<R: Rng + ?Sized>(
        widths: &[usize],
        intervals: usize,
        degree: usize,
        states: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<Self, SplineError> {
        assert_eq!(states.ncols(), widths[0], "data width must match the input layer");
        let mut domains: LayerDomains = Vec::new();
        let mut acts: Vec<Vec<f64>> = states.outer_iter().map(|r| r.to_vec()).collect();
        let mut model = None;
        for l in 0..widths.len() - 1 {
            domains.push(padded_ranges(&acts, widths[l]));
            // Pad remaining layers with placeholders so the partial model is constructible.
            let mut full = domains.clone();
            for w in &widths[l + 1..widths.len() - 1] {
                full.push(vec![(-1.0, 1.0); *w]);
            }
            let arch = KarArchitecture {
                widths: widths.to_vec(),
                intervals,
                degree,
                domains: full,
            };
            let mut m = Self::zeros(arch)?;
            if let Some(prev) = &model {
                let prev: &KarHamiltonian = prev;
                let end = m.layers[l].offset;
                m.params.values_mut()[..end].copy_from_slice(&prev.params.values()[..end]);
            }
            m.randomize_layer(l, rng);
            acts = acts.iter().map(|x| m.layer_forward(l, x)).collect();
            model = Some(m);
        }
        Ok(model.expect("at least one layer"))
    }

    pub fn architecture(&self) -> &KarArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.widths[0]
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    /// The edge `s -> j` of layer `l` as a standalone function.
    pub fn edge(&self, l: usize, s: usize, j: usize) -> UnivariateEdge {
        let layer = &self.layers[l];
        let off = layer.edge_offset(s, j);
        let p = &self.params.values()[off..off + layer.edge_len];
        let n = layer.edge_len - 2;
        UnivariateEdge {
            grid: (*layer.grids[s]).clone(),
            coefficients: p[..n].to_vec(),
            base_weight: p[n],
            spline_weight: p[n + 1],
        }
    }

    fn edge_parts(&self, l: usize, s: usize, j: usize, x: f64) -> [f64; 3] {
        let layer = &self.layers[l];
        let off = layer.edge_offset(s, j);
        edge_value_and_derivatives(&layer.grids[s], &self.params.values()[off..off + layer.edge_len], x)
    }

    fn layer_forward(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let layer = &self.layers[l];
        let mut out = vec![0.0; layer.out_dim];
        for (s, &xs) in x.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.edge_parts(l, s, j, xs)[0];
            }
        }
        out
    }

    /// Inputs of every layer, ending with the scalar output.
    fn activations(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![z.to_vec()];
        for l in 0..self.layers.len() {
            let next = self.layer_forward(l, acts.last().unwrap());
            acts.push(next);
        }
        acts
    }

    pub fn energy(&self, z: &[f64]) -> f64 {
        self.activations(z).last().unwrap()[0]
    }

    pub fn energy_gradient(&self, z: &[f64]) -> Vec<f64> {
        let acts = self.activations(z);
        let mut upstream = vec![1.0];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            upstream = (0..layer.in_dim)
                .map(|s| {
                    (0..layer.out_dim)
                        .map(|j| upstream[j] * self.edge_parts(l, s, j, acts[l][s])[1])
                        .sum()
                })
                .collect();
        }
        upstream
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> Vec<Vec<Vec<EdgeVars>>> {
        self.layers
            .iter()
            .map(|layer| {
                (0..layer.in_dim)
                    .map(|s| {
                        (0..layer.out_dim)
                            .map(|j| EdgeVars::from_params(g, &layer.grids[s], layer.edge_offset(s, j)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn graph_layer(&self, g: &mut Graph, edges: &[Vec<EdgeVars>], l: usize, x: &[Var]) -> Vec<Var> {
        let layer = &self.layers[l];
        (0..layer.out_dim)
            .map(|j| {
                let terms: Vec<Var> = (0..layer.in_dim)
                    .map(|s| edge_eval(g, &layer.grids[s], &edges[s][j], x[s]))
                    .collect();
                g.sum(&terms)
            })
            .collect()
    }

    pub(crate) fn graph_energy(&self, g: &mut Graph, edges: &[Vec<Vec<EdgeVars>>], z: &[Var]) -> Var {
        let mut x = z.to_vec();
        for l in 0..self.layers.len() {
            x = self.graph_layer(g, &edges[l], l, &x);
        }
        x[0]
    }

    /// ∇_z H as nodes: forward to each layer's input, then the chain rule
    /// through edge derivatives φ'_{s,j}, which remain differentiable in θ.
    pub(crate) fn graph_input_gradient(&self, g: &mut Graph, edges: &[Vec<Vec<EdgeVars>>], z: &[Var]) -> Vec<Var> {
        let depth = self.layers.len();
        let mut inputs = vec![z.to_vec()];
        for l in 0..depth - 1 {
            let next = self.graph_layer(g, &edges[l], l, inputs.last().unwrap());
            inputs.push(next);
        }
        let mut upstream: Option<Vec<Var>> = None;
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let x = &inputs[l];
            let next: Vec<Var> = (0..layer.in_dim)
                .map(|s| {
                    let slopes: Vec<Var> = (0..layer.out_dim)
                        .map(|j| edge_eval_derivative(g, &layer.grids[s], &edges[l][s][j], x[s]))
                        .collect();
                    match &upstream {
                        None => g.sum(&slopes),
                        Some(u) => g.dot(u, &slopes),
                    }
                })
                .collect();
            upstream = Some(next);
        }
        upstream.expect("at least one layer")
    }
}

fn padded_ranges(rows: &[Vec<f64>], width: usize) -> Vec<(f64, f64)> {
    (0..width)
        .map(|c| {
            let (lo, hi) = rows
                .iter()
                .map(|r| r[c])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !(lo.is_finite() && hi.is_finite()) {
                return (-1.0, 1.0);
            }
            let span = hi - lo;
            if span <= 1e-12 * lo.abs().max(1.0) {
                (lo - 1.0, hi + 1.0)
            } else {
                (lo - 0.1 * span, hi + 0.1 * span)
            }
        })
        .collect()
}
