//! Kolmogorov-Arnold networks: every edge carries a learnable univariate
//! function `phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x)` on the layer's
//! shared spline grid, and a layer output is the plain sum of its incoming
//! edge values. Jet propagation and the analytic backward pass share the same
//! layer walk; the jet backward needs basis and silu derivatives up to order
//! three internally because second-derivative channels are differentiated
//! with respect to the edge inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::jet::{Jet2, JetAdjoint};
use crate::model::{InputScaler, Model};
use crate::scalar::{from_f64, Scalar};
use crate::spline::{build_grid, local_basis, KnotGrid, SplineError, MAX_LOCAL};

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("a network needs an input and an output layer")]
    TooFewLayers,
    #[error("layer widths must be positive")]
    ZeroWidth,
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("flat parameter vector has length {got}, expected {want}")]
    FlatLength { got: usize, want: usize },
}

/// Numerically robust logistic sigmoid (saturates cleanly at both ends).
#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// `silu(x) = x * sigmoid(x)`, the basis branch shared by every edge.
#[inline]
pub fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

/// silu value with first and second derivative.
pub fn silu_jet<S: Scalar>(x: S) -> (S, S, S) {
    let d = silu_derivs(x);
    (d[0], d[1], d[2])
}

/// silu derivatives through order three; the backward pass through jet
/// channels needs the third.
#[inline]
pub(crate) fn silu_derivs<S: Scalar>(x: S) -> [S; 4] {
    let s = sigmoid(x);
    let s1 = s * (S::one() - s);
    let one_minus_2s = S::one() - from_f64::<S>(2.0) * s;
    let s2 = s1 * one_minus_2s;
    let s3 = s2 * one_minus_2s - from_f64::<S>(2.0) * s1 * s1;
    let two = from_f64::<S>(2.0);
    let three = from_f64::<S>(3.0);
    [
        x * s,
        s + x * s1,
        two * s1 + x * s2,
        three * s2 + x * s3,
    ]
}

/// One learnable edge function on its layer's shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFunction<S> {
    pub w_b: S,
    pub w_s: S,
    pub coeffs: Vec<S>,
}

/// Evaluates a single edge function at `x` on a grid.
pub fn edge_eval<S: Scalar>(edge: &EdgeFunction<S>, grid: &KnotGrid<S>, x: S) -> S {
    debug_assert_eq!(edge.coeffs.len(), grid.basis_count());
    let lb = local_basis(grid, x, 0);
    let mut spline = S::zero();
    for r in 0..lb.len {
        spline += lb.rows[0][r] * edge.coeffs[lb.start + r];
    }
    edge.w_b * silu(x) + edge.w_s * spline
}

/// A KAN layer: `out_width * in_width` edges sharing one grid, stored
/// out-major (`edges[q * in_width + p]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer<S> {
    pub in_width: usize,
    pub out_width: usize,
    pub grid: KnotGrid<S>,
    pub edges: Vec<EdgeFunction<S>>,
}

/// `y_q = sum_p phi_{q,p}(x_p)`.
pub fn layer_forward<S: Scalar>(layer: &KanLayer<S>, x: &[S]) -> Vec<S> {
    assert_eq!(x.len(), layer.in_width, "layer input width mismatch");
    let state = JetState::seed(x, &[], None);
    let mut out = JetState::zeros(layer.out_width, 0);
    layer_propagate(layer, &state, &mut out);
    out.values().to_vec()
}

/// Flat per-neuron jet storage: `1 + 2a` scalars per neuron
/// (value, `a` first derivatives, `a` diagonal second derivatives).
#[derive(Debug, Clone)]
pub(crate) struct JetState<S> {
    pub n: usize,
    pub a: usize,
    data: Vec<S>,
}

impl<S: Scalar> JetState<S> {
    pub fn zeros(n: usize, a: usize) -> Self {
        JetState {
            n,
            a,
            data: vec![S::zero(); n * (1 + 2 * a)],
        }
    }

    /// Input seed: values from `x`; neuron `p` carries first-derivative 1
    /// (or `scales[d]`) against active dim `d` exactly when `p == dims[d]`.
    pub fn seed(x: &[S], dims: &[usize], scales: Option<&[S]>) -> Self {
        let mut s = Self::zeros(x.len(), dims.len());
        for (p, &v) in x.iter().enumerate() {
            s.set_value(p, v);
        }
        for (d, &dim) in dims.iter().enumerate() {
            let scale = scales.map_or(S::one(), |sc| sc[d]);
            s.set_d1(dim, d, scale);
        }
        s
    }

    #[inline]
    fn stride(&self) -> usize {
        1 + 2 * self.a
    }

    #[inline]
    pub fn value(&self, i: usize) -> S {
        self.data[i * self.stride()]
    }

    #[inline]
    pub fn d1(&self, i: usize, d: usize) -> S {
        self.data[i * self.stride() + 1 + d]
    }

    #[inline]
    pub fn d2(&self, i: usize, d: usize) -> S {
        self.data[i * self.stride() + 1 + self.a + d]
    }

    #[inline]
    pub fn set_value(&mut self, i: usize, v: S) {
        let idx = i * self.stride();
        self.data[idx] = v;
    }

    #[inline]
    pub fn set_d1(&mut self, i: usize, d: usize, v: S) {
        let idx = i * self.stride() + 1 + d;
        self.data[idx] = v;
    }

    #[inline]
    pub fn set_d2(&mut self, i: usize, d: usize, v: S) {
        let idx = i * self.stride() + 1 + self.a + d;
        self.data[idx] = v;
    }

    #[inline]
    pub fn add_value(&mut self, i: usize, v: S) {
        let idx = i * self.stride();
        self.data[idx] += v;
    }

    #[inline]
    pub fn add_d1(&mut self, i: usize, d: usize, v: S) {
        let idx = i * self.stride() + 1 + d;
        self.data[idx] += v;
    }

    #[inline]
    pub fn add_d2(&mut self, i: usize, d: usize, v: S) {
        let idx = i * self.stride() + 1 + self.a + d;
        self.data[idx] += v;
    }

    /// Values only; valid when `a == 0`.
    pub fn values(&self) -> &[S] {
        debug_assert_eq!(self.a, 0);
        &self.data
    }

    pub fn to_jets(&self) -> Vec<Jet2<S>> {
        (0..self.n)
            .map(|i| Jet2 {
                value: self.value(i),
                d1: (0..self.a).map(|d| self.d1(i, d)).collect(),
                d2: (0..self.a).map(|d| self.d2(i, d)).collect(),
            })
            .collect()
    }

    pub fn from_adjoints(adj: &[JetAdjoint<S>], a: usize) -> Self {
        let mut s = Self::zeros(adj.len(), a);
        for (q, aj) in adj.iter().enumerate() {
            debug_assert_eq!(aj.d1.len(), a);
            debug_assert_eq!(aj.d2.len(), a);
            s.set_value(q, aj.value);
            for d in 0..a {
                s.set_d1(q, d, aj.d1[d]);
                s.set_d2(q, d, aj.d2[d]);
            }
        }
        s
    }
}

fn layer_propagate<S: Scalar>(layer: &KanLayer<S>, input: &JetState<S>, out: &mut JetState<S>) {
    let a = input.a;
    let order = if a > 0 { 2 } else { 0 };
    for p in 0..layer.in_width {
        let u = input.value(p);
        let lb = local_basis(&layer.grid, u, order);
        let sl = silu_derivs(u);
        for q in 0..layer.out_width {
            let edge = &layer.edges[q * layer.in_width + p];
            let mut f = [S::zero(); 3];
            for r in 0..=order {
                let mut spline = S::zero();
                for t in 0..lb.len {
                    spline += lb.rows[r][t] * edge.coeffs[lb.start + t];
                }
                f[r] = edge.w_b * sl[r] + edge.w_s * spline;
            }
            out.add_value(q, f[0]);
            for d in 0..a {
                let p1 = input.d1(p, d);
                let p2 = input.d2(p, d);
                out.add_d1(q, d, f[1] * p1);
                out.add_d2(q, d, f[2] * p1 * p1 + f[1] * p2);
            }
        }
    }
}

/// A stack of KAN layers. `widths` lists the neuron count per level,
/// including input and output; layer grids live on `[-1, 1]`.
///
/// With `fixed_basis_weight` set, every `w_b` is pinned (the silu branch is
/// disabled) and excluded from the flat parameter vector; the multi-fidelity
/// linear branch uses this to stay an exact affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanNetwork<S> {
    pub widths: Vec<usize>,
    pub layers: Vec<KanLayer<S>>,
    pub seed: u64,
    pub fixed_basis_weight: bool,
}

impl<S: Scalar> KanNetwork<S> {
    /// Fresh network with spline coefficients drawn from `Normal(0, 0.1)` and
    /// both branch weights set to one, seeded deterministically.
    pub fn init(
        widths: &[usize],
        intervals: usize,
        degree: usize,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_from_rng(widths, intervals, degree, seed, false, &mut rng)
    }

    /// As [`KanNetwork::init`] but with the silu branch pinned to zero.
    pub fn init_fixed_basis_weight(
        widths: &[usize],
        intervals: usize,
        degree: usize,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_from_rng(widths, intervals, degree, seed, true, &mut rng)
    }

    pub(crate) fn init_from_rng(
        widths: &[usize],
        intervals: usize,
        degree: usize,
        seed: u64,
        fixed_basis_weight: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        if widths.len() < 2 {
            return Err(NetworkError::TooFewLayers);
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NetworkError::ZeroWidth);
        }
        let normal = Normal::new(0.0, 0.1).expect("valid normal parameters");
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let grid = build_grid(-S::one(), S::one(), intervals, degree)?;
            let nb = grid.basis_count();
            let edges = (0..widths[l] * widths[l + 1])
                .map(|_| EdgeFunction {
                    w_b: if fixed_basis_weight { S::zero() } else { S::one() },
                    w_s: S::one(),
                    coeffs: (0..nb).map(|_| from_f64(normal.sample(rng))).collect(),
                })
                .collect();
            layers.push(KanLayer {
                in_width: widths[l],
                out_width: widths[l + 1],
                grid,
                edges,
            });
        }
        Ok(KanNetwork {
            widths: widths.to_vec(),
            layers,
            seed,
            fixed_basis_weight,
        })
    }

    fn per_edge(&self, layer: &KanLayer<S>) -> usize {
        layer.grid.basis_count() + if self.fixed_basis_weight { 1 } else { 2 }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_width * l.out_width * self.per_edge(l))
            .sum()
    }

    /// Flat parameter order: layer-major, then output index, then input
    /// index, and per edge `[coeffs..., w_b, w_s]` (`w_b` omitted when the
    /// basis weight is fixed).
    pub fn flatten_params(&self) -> Vec<S> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for edge in &layer.edges {
                flat.extend_from_slice(&edge.coeffs);
                if !self.fixed_basis_weight {
                    flat.push(edge.w_b);
                }
                flat.push(edge.w_s);
            }
        }
        flat
    }

    pub fn set_flat_params(&mut self, flat: &[S]) -> Result<(), NetworkError> {
        if flat.len() != self.param_count() {
            return Err(NetworkError::FlatLength {
                got: flat.len(),
                want: self.param_count(),
            });
        }
        let fixed = self.fixed_basis_weight;
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for edge in &mut layer.edges {
                for c in &mut edge.coeffs {
                    *c = it.next().unwrap();
                }
                if !fixed {
                    edge.w_b = it.next().unwrap();
                }
                edge.w_s = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.in_width(), "network input width mismatch");
        let states = self.propagate(JetState::seed(x, &[], None));
        states.last().unwrap().values().to_vec()
    }

    pub fn forward_jet(&self, x: &[S], dims: &[usize]) -> Vec<Jet2<S>> {
        assert_eq!(x.len(), self.in_width(), "network input width mismatch");
        debug_assert!(dims.iter().all(|&d| d < self.in_width()));
        let states = self.propagate(JetState::seed(x, dims, None));
        states.last().unwrap().to_jets()
    }

    /// Runs the jet forward pass, keeping each layer's input state as the
    /// tape for [`KanNetwork::backprop`].
    pub(crate) fn propagate(&self, seed: JetState<S>) -> Vec<JetState<S>> {
        let a = seed.a;
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        states.push(seed);
        for layer in &self.layers {
            let mut out = JetState::zeros(layer.out_width, a);
            layer_propagate(layer, states.last().unwrap(), &mut out);
            states.push(out);
        }
        states
    }

    /// Walks the layers in reverse, accumulating parameter gradients into
    /// `grad` (laid out like [`KanNetwork::flatten_params`]) and returning the
    /// adjoint of the input jet state.
    pub(crate) fn backprop(
        &self,
        states: &[JetState<S>],
        out_adj: JetState<S>,
        grad: &mut [S],
    ) -> JetState<S> {
        debug_assert_eq!(grad.len(), self.param_count());
        let a = out_adj.a;
        let order = if a > 0 { 3 } else { 1 };
        let mut layer_offset = self.param_count();
        let mut adj = out_adj;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let per_edge = self.per_edge(layer);
            let nb = layer.grid.basis_count();
            layer_offset -= layer.in_width * layer.out_width * per_edge;
            let input = &states[l];
            let mut in_adj = JetState::zeros(layer.in_width, a);
            for p in 0..layer.in_width {
                let u = input.value(p);
                let lb = local_basis(&layer.grid, u, order);
                let sl = silu_derivs(u);
                for q in 0..layer.out_width {
                    let edge = &layer.edges[q * layer.in_width + p];
                    let mut spl = [S::zero(); 4];
                    let mut f = [S::zero(); 4];
                    for r in 0..=order {
                        let mut s = S::zero();
                        for t in 0..lb.len {
                            s += lb.rows[r][t] * edge.coeffs[lb.start + t];
                        }
                        spl[r] = s;
                        f[r] = edge.w_b * sl[r] + edge.w_s * s;
                    }
                    let vbar = adj.value(q);
                    let mut f1bar = S::zero(); // adjoint of phi'(u)
                    let mut f2bar = S::zero(); // adjoint of phi''(u)
                    for d in 0..a {
                        let abar = adj.d1(q, d);
                        let bbar = adj.d2(q, d);
                        let p1 = input.d1(p, d);
                        let p2 = input.d2(p, d);
                        f1bar += abar * p1 + bbar * p2;
                        f2bar += bbar * p1 * p1;
                        in_adj.add_d1(p, d, abar * f[1] + from_f64::<S>(2.0) * bbar * f[2] * p1);
                        in_adj.add_d2(p, d, bbar * f[1]);
                    }
                    // phi and its derivatives are linear in the parameters
                    let base = layer_offset + (q * layer.in_width + p) * per_edge;
                    for t in 0..lb.len {
                        let db =
                            vbar * lb.rows[0][t] + f1bar * lb.rows[1][t] + f2bar * lb.rows[2][t];
                        grad[base + lb.start + t] += edge.w_s * db;
                    }
                    let spl_bar = vbar * spl[0] + f1bar * spl[1] + f2bar * spl[2];
                    if self.fixed_basis_weight {
                        grad[base + nb] += spl_bar;
                    } else {
                        grad[base + nb] += vbar * sl[0] + f1bar * sl[1] + f2bar * sl[2];
                        grad[base + nb + 1] += spl_bar;
                    }
                    // chain into the edge input: all channels depend on u
                    in_adj.add_value(p, vbar * f[1] + f1bar * f[2] + f2bar * f[3]);
                }
            }
            adj = in_adj;
        }
        adj
    }

}

impl<S: Scalar> Model<S> for KanNetwork<S> {
    fn in_width(&self) -> usize {
        KanNetwork::in_width(self)
    }

    fn out_width(&self) -> usize {
        KanNetwork::out_width(self)
    }

    fn param_count(&self) -> usize {
        KanNetwork::param_count(self)
    }

    fn params(&self) -> Vec<S> {
        self.flatten_params()
    }

    fn set_params(&mut self, flat: &[S]) {
        self.set_flat_params(flat).expect("flat length mismatch");
    }

    fn forward(&self, x: &[S]) -> Vec<S> {
        KanNetwork::forward(self, x)
    }

    fn forward_jet(&self, x: &[S], dims: &[usize]) -> Vec<Jet2<S>> {
        KanNetwork::forward_jet(self, x, dims)
    }

    fn backward_jet(&self, x: &[S], dims: &[usize], adj: &[JetAdjoint<S>], grad: &mut [S]) {
        assert_eq!(adj.len(), self.out_width(), "adjoint count mismatch");
        let states = self.propagate(JetState::seed(x, dims, None));
        let out_adj = JetState::from_adjoints(adj, dims.len());
        self.backprop(&states, out_adj, grad);
    }

    fn backward_jet_map(
        &self,
        x: &[S],
        dims: &[usize],
        adj_of: &dyn Fn(&[Jet2<S>]) -> Vec<JetAdjoint<S>>,
        grad: &mut [S],
    ) -> Vec<Jet2<S>> {
        let states = self.propagate(JetState::seed(x, dims, None));
        let jets = states.last().unwrap().to_jets();
        let out_adj = JetState::from_adjoints(&adj_of(&jets), dims.len());
        self.backprop(&states, out_adj, grad);
        jets
    }
}

/// A KAN together with the affine map that takes its working box onto
/// `[-1, 1]^d`; the standard single-model configuration of the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledKan<S> {
    pub scaler: InputScaler<S>,
    pub net: KanNetwork<S>,
}

impl<S: Scalar> ScaledKan<S> {
    fn seed_state(&self, x: &[S], dims: &[usize]) -> JetState<S> {
        let scaled = self.scaler.scale_point(x);
        let scales: Vec<S> = dims.iter().map(|&d| self.scaler.jet_scale(d)).collect();
        JetState::seed(&scaled, dims, Some(&scales))
    }
}

impl<S: Scalar> Model<S> for ScaledKan<S> {
    fn in_width(&self) -> usize {
        self.net.in_width()
    }

    fn out_width(&self) -> usize {
        self.net.out_width()
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn params(&self) -> Vec<S> {
        self.net.flatten_params()
    }

    fn set_params(&mut self, flat: &[S]) {
        self.net.set_flat_params(flat).expect("flat length mismatch");
    }

    fn forward(&self, x: &[S]) -> Vec<S> {
        self.net.forward(&self.scaler.scale_point(x))
    }

    fn forward_jet(&self, x: &[S], dims: &[usize]) -> Vec<Jet2<S>> {
        let states = self.net.propagate(self.seed_state(x, dims));
        states.last().unwrap().to_jets()
    }

    fn backward_jet(&self, x: &[S], dims: &[usize], adj: &[JetAdjoint<S>], grad: &mut [S]) {
        assert_eq!(adj.len(), self.out_width(), "adjoint count mismatch");
        let states = self.net.propagate(self.seed_state(x, dims));
        let out_adj = JetState::from_adjoints(adj, dims.len());
        self.net.backprop(&states, out_adj, grad);
    }

    fn backward_jet_map(
        &self,
        x: &[S],
        dims: &[usize],
        adj_of: &dyn Fn(&[Jet2<S>]) -> Vec<JetAdjoint<S>>,
        grad: &mut [S],
    ) -> Vec<Jet2<S>> {
        let states = self.net.propagate(self.seed_state(x, dims));
        let jets = states.last().unwrap().to_jets();
        let out_adj = JetState::from_adjoints(&adj_of(&jets), dims.len());
        self.net.backprop(&states, out_adj, grad);
        jets
    }
}

// keep the stack buffers honest: MAX_LOCAL bounds every row used above
const _: () = assert!(MAX_LOCAL >= 4);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_kan_matches_manual_scaling() {
        let net = KanNetwork::<f64>::init(&[2, 3, 1], 5, 3, 3).unwrap();
        let scaler = InputScaler::new(vec![0.0, 0.0], vec![2.0, 4.0]).unwrap();
        let model = ScaledKan {
            scaler,
            net: net.clone(),
        };
        let x = [0.5, 3.0];
        let manual = net.forward(&[-0.5, 0.5]);
        assert_eq!(Model::forward(&model, &x), manual);

        // jets pick up the affine chain factor
        let jet = model.forward_jet(&x, &[0, 1]);
        let inner = net.forward_jet(&[-0.5, 0.5], &[0, 1]);
        assert!((jet[0].d1[0] - inner[0].d1[0] * 1.0).abs() < 1e-14);
        assert!((jet[0].d1[1] - inner[0].d1[1] * 0.5).abs() < 1e-14);
        assert!((jet[0].d2[1] - inner[0].d2[1] * 0.25).abs() < 1e-14);
    }

    #[test]
    fn fixed_basis_weight_networks_exclude_wb_from_the_flat_vector() {
        let net = KanNetwork::<f64>::init_fixed_basis_weight(&[2, 1], 1, 1, 9).unwrap();
        // two edges, each [c0, c1, w_s]
        assert_eq!(net.param_count(), 6);
        let flat = net.flatten_params();
        assert_eq!(flat.len(), 6);
        let mut copy = net.clone();
        copy.set_flat_params(&flat).unwrap();
        for layer in &copy.layers {
            for e in &layer.edges {
                assert_eq!(e.w_b, 0.0);
            }
        }
    }
}
