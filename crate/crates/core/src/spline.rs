//! B-spline bases on uniform knot grids and the learnable univariate edge
//! functions of a Kolmogorov–Arnold layer.
//!
//! A grid with `G` intervals on `[a, b]` and degree `k` has `G + 2k + 1`
//! uniformly spaced knots (the domain extended by `k` knots on each side)
//! and `G + k` basis functions. Outside `[a, b]` every spline is continued
//! linearly from the nearest boundary, so values and first derivatives are
//! continuous everywhere.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{Graph, Var};

/// Largest supported spline degree.
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("invalid domain [{lower}, {upper}]")]
    Domain { lower: f64, upper: f64 },
    #[error("grid needs at least one interval")]
    NoIntervals,
    #[error("degree {degree} not supported (need {requirement})")]
    Degree { degree: usize, requirement: &'static str },
    #[error("expected {expected} coefficients, got {found}")]
    CoefficientCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct SplineGrid {
    lower: f64,
    upper: f64,
    intervals: usize,
    degree: usize,
    step: f64,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    lower: f64,
    upper: f64,
    intervals: usize,
    degree: usize,
}

impl TryFrom<GridSpec> for SplineGrid {
    type Error = SplineError;
    fn try_from(s: GridSpec) -> Result<Self, Self::Error> {
        SplineGrid::new(s.lower, s.upper, s.intervals, s.degree)
    }
}

impl From<SplineGrid> for GridSpec {
    fn from(g: SplineGrid) -> Self {
        GridSpec {
            lower: g.lower,
            upper: g.upper,
            intervals: g.intervals,
            degree: g.degree,
        }
    }
}

/// The up-to `k + 1` nonzero entries of a basis (or basis-derivative) vector.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    first: usize,
    len: usize,
    values: [f64; MAX_DEGREE + 1],
}

impl LocalBasis {
    /// Index of the first entry in the full basis vector.
    pub fn first(&self) -> usize {
        self.first
    }

    pub fn values(&self) -> &[f64] {
        &self.values[..self.len]
    }

    /// Σ c_i · entry_i over the nonzero entries.
    pub fn combine(&self, coefficients: &[f64]) -> f64 {
        self.values()
            .iter()
            .zip(&coefficients[self.first..])
            .map(|(b, c)| b * c)
            .sum()
    }

    fn scaled_sum(mut self, slope: &LocalBasis, offset: f64) -> LocalBasis {
        for (v, s) in self.values[..self.len].iter_mut().zip(slope.values()) {
            *v += offset * s;
        }
        self
    }

    fn zero_like(mut self) -> LocalBasis {
        self.values = [0.0; MAX_DEGREE + 1];
        self
    }

    fn to_dense(self, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; count];
        out[self.first..self.first + self.len].copy_from_slice(self.values());
        out
    }
}

/// Where an out-of-domain point is evaluated from: `value(anchor) + offset · slope(anchor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryExtension {
    pub anchor: f64,
    pub offset: f64,
}

impl SplineGrid {
    pub fn new(lower: f64, upper: f64, intervals: usize, degree: usize) -> Result<Self, SplineError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(SplineError::Domain { lower, upper });
        }
        if intervals == 0 {
            return Err(SplineError::NoIntervals);
        }
        if degree > MAX_DEGREE {
            return Err(SplineError::Degree {
                degree,
                requirement: "degree <= 8",
            });
        }
        let step = (upper - lower) / intervals as f64;
        let knots = (0..intervals + 2 * degree + 1)
            .map(|j| lower + (j as f64 - degree as f64) * step)
            .collect();
        Ok(Self {
            lower,
            upper,
            intervals,
            degree,
            step,
            knots,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }
    pub fn upper(&self) -> f64 {
        self.upper
    }
    pub fn intervals(&self) -> usize {
        self.intervals
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
    pub fn basis_count(&self) -> usize {
        self.intervals + self.degree
    }
    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }

    /// `None` inside `[a, b]`; otherwise the boundary the point continues from.
    pub fn out_of_domain_rule(&self, x: f64) -> Option<BoundaryExtension> {
        if x > self.upper {
            Some(BoundaryExtension {
                anchor: self.upper,
                offset: x - self.upper,
            })
        } else if x < self.lower {
            Some(BoundaryExtension {
                anchor: self.lower,
                offset: x - self.lower,
            })
        } else {
            None
        }
    }

    /// Knot-interval index (into the extended knot vector) containing `x ∈ [a, b]`.
    /// The right boundary belongs to the last interval.
    fn span(&self, x: f64) -> usize {
        let cell = ((x - self.lower) / self.step).floor();
        let cell = if cell.is_nan() { 0.0 } else { cell };
        (cell.max(0.0) as usize).min(self.intervals - 1) + self.degree
    }

    /// `order`-th derivative of the basis at `x ∈ [a, b]`, nonzero entries only.
    fn interior_local(&self, x: f64, order: usize) -> LocalBasis {
        let k = self.degree;
        let s = self.span(x);
        let mut out = LocalBasis {
            first: s - k,
            len: k + 1,
            values: [0.0; MAX_DEGREE + 1],
        };
        if order > k {
            return out;
        }
        // tri[j] holds B_{s-p+j, p} for the current degree p.
        let mut tri = [0.0; MAX_DEGREE + 1];
        tri[0] = 1.0;
        let t = &self.knots;
        for p in 1..=k - order {
            let inv = 1.0 / (p as f64 * self.step);
            let mut next = [0.0; MAX_DEGREE + 1];
            for j in 0..=p {
                let i = s + j - p;
                let mut v = 0.0;
                if j >= 1 {
                    v += (x - t[i]) * inv * tri[j - 1];
                }
                if j < p {
                    v += (t[i + p + 1] - x) * inv * tri[j];
                }
                next[j] = v;
            }
            tri = next;
        }
        if order == 0 {
            out.values[..=k].copy_from_slice(&tri[..=k]);
            return out;
        }
        // Uniform knots: B^{(r)}_{i,k} = h^{-r} Σ_j (-1)^j C(r,j) B_{i+j,k-r}.
        let low = k - order;
        let scale = self.step.powi(-(order as i32));
        let mut binom = [0.0; MAX_DEGREE + 1];
        binom[0] = 1.0;
        for j in 1..=order {
            binom[j] = binom[j - 1] * (order - j + 1) as f64 / j as f64;
        }
        for m in 0..=k {
            let mut acc = 0.0;
            for (j, c) in binom.iter().enumerate().take(order + 1) {
                // B_{s-k+m+j, low} sits at tri[m + j - order] when in range.
                let idx = m + j;
                if idx >= order && idx - order <= low {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * c * tri[idx - order];
                }
            }
            out.values[m] = acc * scale;
        }
        out
    }

    /// `order`-th derivative of the (boundary-extended) basis at any finite `x`.
    pub fn local_basis(&self, x: f64, order: usize) -> LocalBasis {
        match self.out_of_domain_rule(x) {
            None => self.interior_local(x, order),
            Some(ext) => {
                let base = self.interior_local(ext.anchor, order);
                match order {
                    0 => base.scaled_sum(&self.interior_local(ext.anchor, 1), ext.offset),
                    1 => base,
                    _ => base.zero_like(),
                }
            }
        }
    }

    /// All `G + k` basis values at `x` (Cox–de Boor).
    pub fn bspline_basis(&self, x: f64) -> Vec<f64> {
        self.local_basis(x, 0).to_dense(self.basis_count())
    }

    /// All `G + k` basis first derivatives at `x`.
    pub fn bspline_basis_derivative(&self, x: f64) -> Result<Vec<f64>, SplineError> {
        if self.degree == 0 {
            return Err(SplineError::Degree {
                degree: 0,
                requirement: "degree >= 1 for derivatives",
            });
        }
        Ok(self.local_basis(x, 1).to_dense(self.basis_count()))
    }

    /// Higher derivatives of the basis; entries vanish once `order > k`.
    pub fn bspline_basis_derivative_of_order(&self, x: f64, order: usize) -> Vec<f64> {
        self.local_basis(x, order).to_dense(self.basis_count())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// σ(x) = x / (1 + e^{-x}), the smooth base nonlinearity of every edge.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_second_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

/// Parameters per edge: `G + k` spline coefficients, base weight, spline weight.
pub fn edge_param_count(grid: &SplineGrid) -> usize {
    grid.basis_count() + 2
}

/// Value, first and second derivative of the edge stored in `params`
/// (layout `[c_0 .. c_{n-1}, w_b, w_s]`).
pub fn edge_value_and_derivatives(grid: &SplineGrid, params: &[f64], x: f64) -> [f64; 3] {
    let n = grid.basis_count();
    let (coeffs, wb, ws) = (&params[..n], params[n], params[n + 1]);
    let s0 = grid.local_basis(x, 0).combine(coeffs);
    let s1 = grid.local_basis(x, 1).combine(coeffs);
    let s2 = grid.local_basis(x, 2).combine(coeffs);
    [
        wb * silu(x) + ws * s0,
        wb * silu_derivative(x) + ws * s1,
        wb * silu_second_derivative(x) + ws * s2,
    ]
}

/// One learnable univariate function φ(x) = w_b·σ(x) + w_s·Σ c_i B_i(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateEdge {
    pub grid: SplineGrid,
    pub coefficients: Vec<f64>,
    pub base_weight: f64,
    pub spline_weight: f64,
}

impl UnivariateEdge {
    pub fn new(
        grid: SplineGrid,
        coefficients: Vec<f64>,
        base_weight: f64,
        spline_weight: f64,
    ) -> Result<Self, SplineError> {
        if coefficients.len() != grid.basis_count() {
            return Err(SplineError::CoefficientCount {
                expected: grid.basis_count(),
                found: coefficients.len(),
            });
        }
        Ok(Self {
            grid,
            coefficients,
            base_weight,
            spline_weight,
        })
    }

    /// Coefficients ~ N(0, 0.1/√(G+k)), both weights 1.
    pub fn random<R: Rng + ?Sized>(grid: SplineGrid, rng: &mut R) -> Self {
        let n = grid.basis_count();
        let normal = Normal::new(0.0, 0.1 / (n as f64).sqrt()).expect("positive std");
        let coefficients = (0..n).map(|_| normal.sample(rng)).collect();
        Self {
            grid,
            coefficients,
            base_weight: 1.0,
            spline_weight: 1.0,
        }
    }

    /// Flat parameter layout shared with [`edge_value_and_derivatives`].
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.coefficients.clone();
        p.push(self.base_weight);
        p.push(self.spline_weight);
        p
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_all(x)[0]
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.eval_all(x)[1]
    }

    pub fn eval_second_derivative(&self, x: f64) -> f64 {
        self.eval_all(x)[2]
    }

    fn eval_all(&self, x: f64) -> [f64; 3] {
        edge_value_and_derivatives(&self.grid, &self.params(), x)
    }
}

/// Graph leaves for one edge's parameters.
#[derive(Debug, Clone)]
pub struct EdgeVars {
    pub coefficients: Vec<Var>,
    pub base_weight: Var,
    pub spline_weight: Var,
}

impl EdgeVars {
    /// Edge parameters at `offset..offset + G + k + 2` of the graph's θ.
    pub fn from_params(g: &mut Graph, grid: &SplineGrid, offset: usize) -> Self {
        let n = grid.basis_count();
        Self {
            coefficients: g.params(offset..offset + n),
            base_weight: g.param(offset + n),
            spline_weight: g.param(offset + n + 1),
        }
    }
}

/// Node for φ(x).
pub fn edge_eval(g: &mut Graph, grid: &Arc<SplineGrid>, edge: &EdgeVars, x: Var) -> Var {
    edge_term(g, grid, edge, x, 0)
}

/// Node for φ'(x); itself differentiable in both `x` and the edge parameters.
pub fn edge_eval_derivative(g: &mut Graph, grid: &Arc<SplineGrid>, edge: &EdgeVars, x: Var) -> Var {
    edge_term(g, grid, edge, x, 1)
}

fn edge_term(g: &mut Graph, grid: &Arc<SplineGrid>, edge: &EdgeVars, x: Var, order: u8) -> Var {
    let base = if order == 0 { g.silu(x) } else { g.silu_derivative(x) };
    let base = g.mul(edge.base_weight, base);
    let spline = g.spline(grid, order, x, &edge.coefficients);
    let spline = g.mul(edge.spline_weight, spline);
    g.add(base, spline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive Cox–de Boor over the full knot vector.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, last_interval: usize) -> f64 {
        if p == 0 {
            let inside = knots[i] <= x && x < knots[i + 1];
            let right_end = i == last_interval && x == knots[i + 1];
            return if inside || right_end { 1.0 } else { 0.0 };
        }
        let left = (x - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(knots, i, p - 1, x, last_interval);
        let right = (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1])
            * cox_de_boor(knots, i + 1, p - 1, x, last_interval);
        left + right
    }

    fn oracle_basis(grid: &SplineGrid, x: f64) -> Vec<f64> {
        let last = grid.degree() + grid.intervals() - 1;
        (0..grid.basis_count())
            .map(|i| cox_de_boor(grid.knots(), i, grid.degree(), x, last))
            .collect()
    }

    #[test]
    fn knot_vector_shape() {
        let g = SplineGrid::new(-1.0, 1.0, 2, 3).unwrap();
        assert_eq!(g.knots().len(), 2 + 2 * 3 + 1);
        assert_eq!(g.basis_count(), 5);
        assert!(g.knots().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(g.knots()[3], -1.0);
        assert_eq!(g.knots()[5], 1.0);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(matches!(SplineGrid::new(1.0, 1.0, 2, 3), Err(SplineError::Domain { .. })));
        assert_eq!(SplineGrid::new(0.0, 1.0, 0, 3), Err(SplineError::NoIntervals));
        assert!(matches!(SplineGrid::new(0.0, 1.0, 2, 9), Err(SplineError::Degree { .. })));
    }

    #[test]
    fn degree_zero_indicator() {
        let g = SplineGrid::new(0.0, 1.0, 2, 0).unwrap();
        assert_eq!(g.bspline_basis(0.25), vec![1.0, 0.0]);
        assert_eq!(g.bspline_basis(1.0), vec![0.0, 1.0]);
    }

    #[test]
    fn cubic_at_origin_matches_recursive_oracle() {
        let g = SplineGrid::new(-1.0, 1.0, 2, 3).unwrap();
        let fast = g.bspline_basis(0.0);
        let slow = oracle_basis(&g, 0.0);
        // At a knot of a uniform cubic grid: (1/6, 2/3, 1/6) centred on the knot.
        assert_eq!(slow.len(), 5);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-15, "{fast:?} vs {slow:?}");
        }
        assert!((slow[2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_oracle_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for intervals in 1..=5 {
            for degree in 0..=5 {
                let g = SplineGrid::new(-0.7, 1.9, intervals, degree).unwrap();
                for _ in 0..50 {
                    let x = rng.random_range(-0.7..=1.9);
                    let fast = g.bspline_basis(x);
                    let slow = oracle_basis(&g, x);
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() < 1e-13, "G={intervals} k={degree} x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn derivative_requires_degree() {
        let g = SplineGrid::new(0.0, 1.0, 3, 0).unwrap();
        assert!(matches!(g.bspline_basis_derivative(0.5), Err(SplineError::Degree { .. })));
    }

    #[test]
    fn hat_function_slopes() {
        let g = SplineGrid::new(0.0, 2.0, 2, 1).unwrap();
        // basis 1 is the hat peaking at x = 1 with h = 1
        let d_left = g.bspline_basis_derivative(0.5).unwrap();
        let d_right = g.bspline_basis_derivative(1.5).unwrap();
        assert_eq!(d_left[1], 1.0);
        assert_eq!(d_right[1], -1.0);
    }

    #[test]
    fn derivative_sums_vanish_inside() {
        let g = SplineGrid::new(-2.0, 3.0, 4, 4).unwrap();
        for x in [-1.9, -0.3, 0.0, 1.7, 2.99] {
            let s: f64 = g.bspline_basis_derivative(x).unwrap().iter().sum();
            assert!(s.abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn extension_is_linear_and_c1() {
        let grid = SplineGrid::new(-1.0, 1.0, 3, 3).unwrap();
        let mut edge = UnivariateEdge::random(grid, &mut ChaCha8Rng::seed_from_u64(3));
        // only the spline term is extended linearly
        edge.base_weight = 0.0;
        for (anchor, sign) in [(1.0, 1.0), (-1.0, -1.0)] {
            let t = 0.8 * sign;
            let expect = edge.eval(anchor) + t * edge.eval_derivative(anchor);
            assert!((edge.eval(anchor + t) - expect).abs() < 1e-12);
            assert!((edge.eval(anchor + sign * 1e-12) - edge.eval(anchor)).abs() < 1e-10);
        }
        assert_eq!(edge.grid.out_of_domain_rule(0.3), None);
        assert_eq!(
            edge.grid.out_of_domain_rule(1.5),
            Some(BoundaryExtension { anchor: 1.0, offset: 0.5 })
        );
    }

    #[test]
    fn zero_edge_is_identically_zero() {
        let grid = SplineGrid::new(0.0, 1.0, 2, 3).unwrap();
        let edge = UnivariateEdge::new(grid, vec![0.0; 5], 0.0, 1.0).unwrap();
        for x in [-3.0, 0.0, 0.4, 7.0] {
            assert_eq!(edge.eval(x), 0.0);
        }
    }

    #[test]
    fn unit_coefficients_reproduce_one() {
        let grid = SplineGrid::new(-2.0, 2.0, 2, 5).unwrap();
        let edge = UnivariateEdge::new(grid, vec![1.0; 7], 0.0, 1.0).unwrap();
        for x in [-2.0, -1.3, 0.0, 0.9, 2.0] {
            assert!((edge.eval(x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_count_checked() {
        let grid = SplineGrid::new(0.0, 1.0, 2, 3).unwrap();
        assert_eq!(
            UnivariateEdge::new(grid, vec![0.0; 4], 1.0, 1.0),
            Err(SplineError::CoefficientCount { expected: 5, found: 4 })
        );
    }

    #[test]
    fn graph_edge_matches_direct_evaluation() {
        let grid = SplineGrid::new(-1.0, 2.0, 3, 3).unwrap();
        let edge = UnivariateEdge::random(grid.clone(), &mut ChaCha8Rng::seed_from_u64(11));
        let shared = Arc::new(grid);
        for x0 in [-1.7, -0.2, 0.5, 1.99, 2.6] {
            let mut g = Graph::new(&edge.params());
            let vars = EdgeVars::from_params(&mut g, &shared, 0);
            let x = g.input(x0);
            let phi = edge_eval(&mut g, &shared, &vars, x);
            let dphi = edge_eval_derivative(&mut g, &shared, &vars, x);
            assert!((g.forward(phi).unwrap() - edge.eval(x0)).abs() < 1e-14);
            assert!((g.forward(dphi).unwrap() - edge.eval_derivative(x0)).abs() < 1e-14);
            // d/dx of the derivative node is φ''
            let adj = g.backward(dphi).unwrap();
            assert!((adj.wrt(x) - edge.eval_second_derivative(x0)).abs() < 1e-12);
        }
    }
}
