//! Fully connected tanh networks shared by the MLP Hamiltonian (scalar
//! output) and the unconstrained baseline (vector output).
//!
//! Besides graph construction, this module carries batched closed-form
//! kernels for the two training losses. The HNN kernel differentiates
//! through the network's input gradient (a double backward pass written
//! out by hand); tests cross-check both kernels against the graph engine.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::diffcore::{Graph, ParameterStore, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    widths: Vec<usize>,
    params: ParameterStore,
}

/// Per-layer parameter leaves: weight rows and bias.
#[derive(Debug, Clone)]
pub(crate) struct DenseVars {
    layers: Vec<(Vec<Vec<Var>>, Vec<Var>)>,
}

impl DenseNet {
    /// `widths = [input, hidden.., output]`; weights and biases ~ U(-1/√fan_in, 1/√fan_in).
    pub fn random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(widths);
        let mut offset = 0;
        for (fan_in, fan_out) in widths.iter().zip(&widths[1..]) {
            let bound = 1.0 / (*fan_in as f64).sqrt();
            let count = fan_in * fan_out + fan_out;
            for v in &mut net.params.values_mut()[offset..offset + count] {
                *v = rng.random_range(-bound..bound);
            }
            offset += count;
        }
        net
    }

    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "a dense net needs input and output widths");
        let mut b = ParameterStore::builder();
        for (l, (fan_in, fan_out)) in widths.iter().zip(&widths[1..]).enumerate() {
            b.push(format!("dense{l}.weight"), vec![0.0; fan_in * fan_out]);
            b.push(format!("dense{l}.bias"), vec![0.0; *fan_out]);
        }
        Self {
            widths: widths.to_vec(),
            params: b.build(),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    fn ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let s = self.params.slices();
        (s[2 * l].range.clone(), s[2 * l + 1].range.clone())
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, _) = self.ranges(l);
        ArrayView2::from_shape((self.widths[l + 1], self.widths[l]), &self.params.values()[w]).unwrap()
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.ranges(l);
        ArrayView1::from(&self.params.values()[b])
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> DenseVars {
        let layers = (0..self.layer_count())
            .map(|l| {
                let (w, b) = self.ranges(l);
                let fan_in = self.widths[l];
                let rows = (0..self.widths[l + 1])
                    .map(|j| g.params(w.start + j * fan_in..w.start + (j + 1) * fan_in))
                    .collect();
                (rows, g.params(b))
            })
            .collect();
        DenseVars { layers }
    }

    /// Graph forward pass; returns hidden activations and the output nodes.
    pub(crate) fn graph_forward(&self, g: &mut Graph, vars: &DenseVars, z: &[Var]) -> (Vec<Vec<Var>>, Vec<Var>) {
        let mut acts = vec![z.to_vec()];
        let last = self.layer_count() - 1;
        for (l, (rows, bias)) in vars.layers.iter().enumerate() {
            let input = acts.last().unwrap().clone();
            let out: Vec<Var> = rows
                .iter()
                .zip(bias)
                .map(|(row, b)| {
                    let d = g.dot(row, &input);
                    let pre = g.add(d, *b);
                    if l == last {
                        pre
                    } else {
                        g.tanh(pre)
                    }
                })
                .collect();
            if l == last {
                return (acts, out);
            }
            acts.push(out);
        }
        unreachable!("dense net has at least one layer")
    }

    /// Graph nodes for ∇_z of the scalar output (requires output width 1).
    pub(crate) fn graph_input_gradient(&self, g: &mut Graph, vars: &DenseVars, z: &[Var]) -> Vec<Var> {
        assert_eq!(self.output_dim(), 1);
        let (acts, _) = self.graph_forward(g, vars, z);
        let last = self.layer_count() - 1;
        // adjoint of the last hidden layer's output
        let mut upstream: Vec<Var> = vars.layers[last].0[0].clone();
        for l in (0..last).rev() {
            let h = &acts[l + 1];
            let local: Vec<Var> = h
                .iter()
                .zip(&upstream)
                .map(|(&hv, &u)| {
                    let sq = g.square(hv);
                    let ds = g.neg(sq);
                    let ds = g.offset(ds, 1.0);
                    g.mul(u, ds)
                })
                .collect();
            let rows = &vars.layers[l].0;
            upstream = (0..self.widths[l])
                .map(|i| {
                    let column: Vec<Var> = rows.iter().map(|r| r[i]).collect();
                    g.dot(&column, &local)
                })
                .collect();
        }
        upstream
    }

    /// Hidden activations (tanh) and linear output for a batch of row vectors.
    fn forward_batch(&self, z: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut acts = vec![z.to_owned()];
        let last = self.layer_count() - 1;
        for l in 0..=last {
            let mut pre = acts[l].dot(&self.weight(l).t());
            pre += &self.bias(l);
            if l == last {
                return (acts, pre);
            }
            pre.mapv_inplace(f64::tanh);
            acts.push(pre);
        }
        unreachable!()
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        let zv = ArrayView2::from_shape((1, z.len()), z).unwrap();
        self.forward_batch(zv).1.into_raw_vec_and_offset().0
    }

    /// ∇_z of the scalar output for each row of `z`.
    pub(crate) fn input_gradient_batch(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let (acts, _) = self.forward_batch(z);
        let last = self.layer_count() - 1;
        let w_out = self.weight(last);
        let mut upstream = Array2::from_shape_fn((z.nrows(), self.widths[last]), |(_, j)| w_out[[0, j]]);
        for l in (0..last).rev() {
            let h = &acts[l + 1];
            upstream.zip_mut_with(h, |u, &hv| *u *= 1.0 - hv * hv);
            upstream = upstream.dot(&self.weight(l));
        }
        upstream
    }

    pub fn input_gradient(&self, z: &[f64]) -> Vec<f64> {
        let zv = ArrayView2::from_shape((1, z.len()), z).unwrap();
        self.input_gradient_batch(zv).into_raw_vec_and_offset().0
    }

    fn grad_views<'a>(&self, grad: &'a mut [f64]) -> Vec<(ArrayViewMut2<'a, f64>, &'a mut [f64])> {
        let mut rest = grad;
        let mut out = Vec::with_capacity(self.layer_count());
        for l in 0..self.layer_count() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w, tail) = rest.split_at_mut(fan_in * fan_out);
            let (b, tail) = tail.split_at_mut(fan_out);
            out.push((ArrayViewMut2::from_shape((fan_out, fan_in), w).unwrap(), b));
            rest = tail;
        }
        out
    }

    /// Mean over rows of ‖output − target‖², with its parameter gradient.
    pub(crate) fn direct_loss_and_grad(
        &self,
        z: ArrayView2<'_, f64>,
        target: ArrayView2<'_, f64>,
        with_grad: bool,
    ) -> (f64, Vec<f64>) {
        let m = z.nrows() as f64;
        let (acts, out) = self.forward_batch(z);
        let resid = out - target;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / m;
        if !with_grad {
            return (loss, Vec::new());
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut views = self.grad_views(&mut grad);
        let last = self.layer_count() - 1;
        let mut pre_bar = resid * (2.0 / m);
        for l in (0..=last).rev() {
            let (dw, db) = &mut views[l];
            dw.assign(&pre_bar.t().dot(&acts[l]));
            for (d, s) in db.iter_mut().zip(pre_bar.sum_axis(Axis(0))) {
                *d = s;
            }
            if l == 0 {
                break;
            }
            let mut act_bar = pre_bar.dot(&self.weight(l));
            act_bar.zip_mut_with(&acts[l], |a, &h| *a *= 1.0 - h * h);
            pre_bar = act_bar;
        }
        (loss, grad)
    }

    /// Mean over rows of ‖J∇_z H − target‖² for the scalar-output net, with
    /// the parameter gradient obtained by reversing the input-gradient pass.
    pub(crate) fn symplectic_loss_and_grad(
        &self,
        z: ArrayView2<'_, f64>,
        target: ArrayView2<'_, f64>,
        with_grad: bool,
    ) -> (f64, Vec<f64>) {
        assert_eq!(self.output_dim(), 1);
        assert!(self.layer_count() >= 2, "needs at least one hidden layer");
        let rows = z.nrows();
        let m = rows as f64;
        let n = self.widths[0];
        let d = n / 2;
        let last = self.layer_count() - 1;
        let (acts, _) = self.forward_batch(z);
        let slopes: Vec<Array2<f64>> = acts.iter().map(|a| a.mapv(|h| 1.0 - h * h)).collect();
        let w_out: Array1<f64> = self.weight(last).row(0).to_owned();

        // gates[l] = ∂H/∂(pre-activation of hidden layer l+1); uppers[l] = ∂H/∂(activation l).
        let mut gates: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); last];
        let mut uppers: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); last + 1];
        let mut gate = &slopes[last] * &w_out;
        for l in (0..last).rev() {
            let upper = gate.dot(&self.weight(l));
            gates[l] = gate;
            if l > 0 {
                gate = &upper * &slopes[l];
            } else {
                gate = Array2::zeros((0, 0));
            }
            uppers[l] = upper;
        }
        let grad_h = &uppers[0];
        let mut resid = Array2::zeros((rows, n));
        resid.slice_mut(s![.., ..d]).assign(&grad_h.slice(s![.., d..]));
        resid.slice_mut(s![.., d..]).assign(&(-&grad_h.slice(s![.., ..d])));
        resid -= &target;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / m;
        if !with_grad {
            return (loss, Vec::new());
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut views = self.grad_views(&mut grad);
        let mut upper_bar = Array2::zeros((rows, n));
        upper_bar
            .slice_mut(s![.., ..d])
            .assign(&(&resid.slice(s![.., d..]) * (-2.0 / m)));
        upper_bar
            .slice_mut(s![.., d..])
            .assign(&(&resid.slice(s![.., ..d]) * (2.0 / m)));

        // act_bar[l] accumulates ∂L/∂(activation l) for hidden layers 1..=last.
        let mut act_bar: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); last + 1];
        for l in 0..last {
            // upper_l = gate_l · W_l
            let gate_l = &gates[l];
            views[l].0.assign(&gate_l.t().dot(&upper_bar));
            let gate_bar = upper_bar.dot(&self.weight(l).t());
            let slope_bar;
            if l + 1 < last {
                // gate_l = upper_{l+1} ⊙ slope_{l+1}
                upper_bar = &gate_bar * &slopes[l + 1];
                slope_bar = &gate_bar * &uppers[l + 1];
            } else {
                // gate_{last-1} = slope_last ⊙ w_out
                let w_bar = (&gate_bar * &slopes[last]).sum_axis(Axis(0));
                views[last].0.row_mut(0).assign(&w_bar);
                slope_bar = &gate_bar * &w_out;
            }
            let h = &acts[l + 1];
            act_bar[l + 1] = &slope_bar * h * -2.0;
        }
        // reverse of the forward pass through the hidden layers
        for l in (1..=last).rev() {
            let pre_bar = &act_bar[l] * &slopes[l];
            let (dw, db) = &mut views[l - 1];
            *dw += &pre_bar.t().dot(&acts[l - 1]);
            for (d, s) in db.iter_mut().zip(pre_bar.sum_axis(Axis(0))) {
                *d += s;
            }
            if l > 1 {
                let back = pre_bar.dot(&self.weight(l - 1));
                act_bar[l - 1] = &act_bar[l - 1] + &back;
            }
        }
        (loss, grad)
    }
}
