//! Multi-fidelity KANs: a frozen low-fidelity network feeds, together with
//! the raw input, a pair of correction networks — one globally affine, one
//! nonlinear — blended by a trainable mixing weight clamped to [0, 1].
//!
//! Trainable parameters are `[theta_linear..., theta_nonlinear..., alpha]`;
//! the low-fidelity weights never enter the flat vector, which is what
//! "frozen" means operationally.

use serde::{Deserialize, Serialize};

use crate::jet::{Jet2, JetAdjoint};
use crate::model::{DomainBox, Model};
use crate::network::{silu, JetState, KanNetwork, NetworkError, ScaledKan};
use crate::scalar::{from_f64, Scalar};
use crate::spline::local_basis;
use crate::train::{
    train, DataMse, Dataset, Loss, LossBreakdown, TrainConfig, TrainError, TrainHistory,
};

#[derive(Debug, thiserror::Error)]
pub enum MfkanError {
    #[error("nonlinear branch input width {got} must be input dim + low-fidelity outputs {want}")]
    NonlinearInputWidth { got: usize, want: usize },
    #[error("nonlinear branch needs at least one hidden layer")]
    NoHiddenLayer,
    #[error("nonlinear branch needs spline degree of at least 2")]
    DegreeTooLow,
    #[error("high-fidelity training requires the low-fidelity network to be frozen")]
    LowNotFrozen,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Pretrains the low-fidelity surrogate on its dataset; the result is
/// frozen by convention once embedded in an [`MfkanModel`].
pub fn train_low_fidelity<S: Scalar>(
    lf_dataset: &Dataset<S>,
    domain: &DomainBox<S>,
    widths: &[usize],
    intervals: usize,
    degree: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<ScaledKan<S>, MfkanError> {
    let mut model = ScaledKan {
        scaler: domain.scaler(),
        net: KanNetwork::init(widths, intervals, degree, seed)?,
    };
    let loss = DataMse::new(lf_dataset.clone())?;
    train(&mut model, &loss, cfg)?;
    Ok(model)
}

/// `K_H(x) = alpha * K_nl(z) + (1 - alpha) * K_l(z)` with
/// `z = concat(x, K_L(x))` normalized per-dimension onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfkanModel<S> {
    pub kan_low: ScaledKan<S>,
    pub low_frozen: bool,
    pub kan_linear: KanNetwork<S>,
    pub kan_nonlinear: KanNetwork<S>,
    pub mixing_alpha: S,
    /// Affine normalization of the concatenated `z`; input dimensions reuse
    /// the low-fidelity box, the low-fidelity output range is measured on a
    /// dense grid and padded by 10%.
    pub z_scaler: crate::model::InputScaler<S>,
}

impl<S: Scalar> MfkanModel<S> {
    /// Builds the correction pair around a pretrained low-fidelity network.
    /// `nl_widths` is the full nonlinear architecture (input width must be
    /// `m0 + low-fidelity outputs`); the linear branch is derived from it.
    pub fn new(
        kan_low: ScaledKan<S>,
        nl_widths: &[usize],
        nl_intervals: usize,
        nl_degree: usize,
        seed: u64,
    ) -> Result<Self, MfkanError> {
        let m0 = kan_low.in_width();
        let z_dim = m0 + kan_low.out_width();
        if nl_widths.first() != Some(&z_dim) {
            return Err(MfkanError::NonlinearInputWidth {
                got: nl_widths.first().copied().unwrap_or(0),
                want: z_dim,
            });
        }
        if nl_widths.len() < 3 {
            return Err(MfkanError::NoHiddenLayer);
        }
        if nl_degree < 2 {
            return Err(MfkanError::DegreeTooLow);
        }
        let out = *nl_widths.last().unwrap();

        let z_scaler = z_scaler_from_low(&kan_low)?;

        let mut rng = rand::SeedableRng::seed_from_u64(seed);
        let kan_linear =
            KanNetwork::init_from_rng(&[z_dim, out], 1, 1, seed, true, &mut rng)?;
        let kan_nonlinear =
            KanNetwork::init_from_rng(nl_widths, nl_intervals, nl_degree, seed, false, &mut rng)?;

        Ok(MfkanModel {
            kan_low,
            low_frozen: true,
            kan_linear,
            kan_nonlinear,
            mixing_alpha: from_f64(0.5),
            z_scaler,
        })
    }

    fn linear_params(&self) -> usize {
        self.kan_linear.param_count()
    }

    /// Shared jet evaluation; with `want_tapes` the propagation states of
    /// both correction branches are returned for the backward pass (the
    /// low-fidelity branch needs no tape — it is frozen).
    #[allow(clippy::type_complexity)]
    fn eval(
        &self,
        x: &[S],
        dims: &[usize],
        want_tapes: bool,
    ) -> (Vec<Jet2<S>>, Option<(Vec<JetState<S>>, Vec<JetState<S>>)>) {
        assert_eq!(x.len(), self.in_width(), "input width mismatch");
        let m0 = x.len();
        let a = dims.len();
        let low_jets = self.kan_low.forward_jet(x, dims);

        // z = concat(x, K_L(x)), then per-dimension affine normalization;
        // the diagonal jet rule stays exact because every downstream
        // nonlinearity is univariate
        let mut z = JetState::zeros(m0 + low_jets.len(), a);
        for (p, &v) in x.iter().enumerate() {
            z.set_value(p, v);
            for (slot, &d) in dims.iter().enumerate() {
                if d == p {
                    z.set_d1(p, slot, S::one());
                }
            }
        }
        for (q, jet) in low_jets.iter().enumerate() {
            z.set_value(m0 + q, jet.value);
            for slot in 0..a {
                z.set_d1(m0 + q, slot, jet.d1[slot]);
                z.set_d2(m0 + q, slot, jet.d2[slot]);
            }
        }
        for i in 0..z.n {
            let scale = self.z_scaler.jet_scale(i);
            z.set_value(i, self.z_scaler.scale_value(i, z.value(i)));
            for slot in 0..a {
                z.set_d1(i, slot, z.d1(i, slot) * scale);
                z.set_d2(i, slot, z.d2(i, slot) * scale);
            }
        }

        let states_l = self.kan_linear.propagate(z.clone());
        let states_nl = self.kan_nonlinear.propagate(z);
        let last_l = states_l.last().unwrap();
        let last_nl = states_nl.last().unwrap();

        let alpha = self.mixing_alpha;
        let rest = S::one() - alpha;
        let out = self.out_width();
        let mut jets = Vec::with_capacity(out);
        for q in 0..out {
            jets.push(Jet2 {
                value: alpha * last_nl.value(q) + rest * last_l.value(q),
                d1: (0..a)
                    .map(|d| alpha * last_nl.d1(q, d) + rest * last_l.d1(q, d))
                    .collect(),
                d2: (0..a)
                    .map(|d| alpha * last_nl.d2(q, d) + rest * last_l.d2(q, d))
                    .collect(),
            });
        }
        let tapes = want_tapes.then_some((states_l, states_nl));
        (jets, tapes)
    }

    fn backprop_tapes(
        &self,
        tapes: &(Vec<JetState<S>>, Vec<JetState<S>>),
        adj: &[JetAdjoint<S>],
        grad: &mut [S],
    ) {
        let (states_l, states_nl) = tapes;
        let a = adj.first().map_or(0, |j| j.d1.len());
        let alpha = self.mixing_alpha;
        let rest = S::one() - alpha;
        let n_l = self.linear_params();
        let n_nl = self.kan_nonlinear.param_count();
        let last_l = states_l.last().unwrap();
        let last_nl = states_nl.last().unwrap();

        // d(out)/d(alpha) = K_nl - K_l channel-wise
        let mut alpha_bar = S::zero();
        let mut adj_l = JetState::zeros(adj.len(), a);
        let mut adj_nl = JetState::zeros(adj.len(), a);
        for (q, aq) in adj.iter().enumerate() {
            alpha_bar += aq.value * (last_nl.value(q) - last_l.value(q));
            adj_l.set_value(q, aq.value * rest);
            adj_nl.set_value(q, aq.value * alpha);
            for d in 0..a {
                alpha_bar += aq.d1[d] * (last_nl.d1(q, d) - last_l.d1(q, d))
                    + aq.d2[d] * (last_nl.d2(q, d) - last_l.d2(q, d));
                adj_l.set_d1(q, d, aq.d1[d] * rest);
                adj_l.set_d2(q, d, aq.d2[d] * rest);
                adj_nl.set_d1(q, d, aq.d1[d] * alpha);
                adj_nl.set_d2(q, d, aq.d2[d] * alpha);
            }
        }
        // z adjoints are discarded: the low-fidelity net is frozen and the
        // raw inputs carry no parameters
        self.kan_linear.backprop(states_l, adj_l, &mut grad[..n_l]);
        self.kan_nonlinear
            .backprop(states_nl, adj_nl, &mut grad[n_l..n_l + n_nl]);
        grad[n_l + n_nl] += alpha_bar;
    }
}

/// Measures the low-fidelity output range over a dense grid of its domain
/// and pads it by 10%, so the concatenated input to the correction branches
/// always lands inside their spline grids.
fn z_scaler_from_low<S: Scalar>(
    kan_low: &ScaledKan<S>,
) -> Result<crate::model::InputScaler<S>, MfkanError> {
    let m0 = kan_low.in_width();
    let out = kan_low.out_width();
    let per_dim = (4096f64.powf(1.0 / m0 as f64).floor() as usize).max(2);
    let total: usize = per_dim.pow(m0 as u32);
    let mut y_lo = vec![S::infinity(); out];
    let mut y_hi = vec![S::neg_infinity(); out];
    let mut x = vec![S::zero(); m0];
    for j in 0..total {
        let mut rest = j;
        for d in 0..m0 {
            let i = rest % per_dim;
            rest /= per_dim;
            let frac = from_f64::<S>(i as f64 / (per_dim - 1) as f64);
            x[d] = kan_low.scaler.lo[d]
                + (kan_low.scaler.hi[d] - kan_low.scaler.lo[d]) * frac;
        }
        let y = kan_low.forward(&x);
        for q in 0..out {
            y_lo[q] = y_lo[q].min(y[q]);
            y_hi[q] = y_hi[q].max(y[q]);
        }
    }
    let mut lo = kan_low.scaler.lo.clone();
    let mut hi = kan_low.scaler.hi.clone();
    let tenth = from_f64::<S>(0.1);
    for q in 0..out {
        let span = y_hi[q] - y_lo[q];
        let pad = if span > S::zero() {
            tenth * span
        } else {
            // constant output: fabricate a symmetric window around it
            (tenth * y_lo[q].abs()).max(from_f64(1e-3))
        };
        lo.push(y_lo[q] - pad);
        hi.push(y_hi[q] + pad);
    }
    Ok(crate::model::InputScaler { lo, hi })
}

impl<S: Scalar> Model<S> for MfkanModel<S> {
    fn in_width(&self) -> usize {
        self.kan_low.in_width()
    }

    fn out_width(&self) -> usize {
        self.kan_nonlinear.out_width()
    }

    fn param_count(&self) -> usize {
        self.linear_params() + self.kan_nonlinear.param_count() + 1
    }

    fn params(&self) -> Vec<S> {
        let mut flat = self.kan_linear.flatten_params();
        flat.extend(self.kan_nonlinear.flatten_params());
        flat.push(self.mixing_alpha);
        flat
    }

    fn set_params(&mut self, flat: &[S]) {
        assert_eq!(flat.len(), self.param_count(), "flat length mismatch");
        let n_l = self.linear_params();
        let n_nl = self.kan_nonlinear.param_count();
        self.kan_linear
            .set_flat_params(&flat[..n_l])
            .expect("linear branch length");
        self.kan_nonlinear
            .set_flat_params(&flat[n_l..n_l + n_nl])
            .expect("nonlinear branch length");
        self.mixing_alpha = flat[n_l + n_nl];
    }

    fn forward(&self, x: &[S]) -> Vec<S> {
        self.eval(x, &[], false).0.into_iter().map(|j| j.value).collect()
    }

    fn forward_jet(&self, x: &[S], dims: &[usize]) -> Vec<Jet2<S>> {
        self.eval(x, dims, false).0
    }

    fn backward_jet(&self, x: &[S], dims: &[usize], adj: &[JetAdjoint<S>], grad: &mut [S]) {
        assert_eq!(adj.len(), self.out_width(), "adjoint count mismatch");
        let (_, tapes) = self.eval(x, dims, true);
        self.backprop_tapes(&tapes.unwrap(), adj, grad);
    }

    fn backward_jet_map(
        &self,
        x: &[S],
        dims: &[usize],
        adj_of: &dyn Fn(&[Jet2<S>]) -> Vec<JetAdjoint<S>>,
        grad: &mut [S],
    ) -> Vec<Jet2<S>> {
        let (jets, tapes) = self.eval(x, dims, true);
        self.backprop_tapes(&tapes.unwrap(), &adj_of(&jets), grad);
        jets
    }

    /// Keeps the blend a convex combination.
    fn project_params(&mut self) {
        self.mixing_alpha = self.mixing_alpha.max(S::zero()).min(S::one());
    }
}

/// Per-layer mean (over edges) of the mean square of each edge function over
/// 64 equispaced samples of the layer's grid domain. With `grad`, also
/// accumulates `weight * d(sum of norms)/d(theta)` into the slice, which
/// must be laid out like the network's flat parameters.
fn phi_norms_with_grad<S: Scalar>(
    net: &KanNetwork<S>,
    mut grad: Option<(&mut [S], S)>,
) -> Vec<S> {
    const SAMPLES: usize = 64;
    let inv = from_f64::<S>(1.0 / SAMPLES as f64);
    let two = from_f64::<S>(2.0);
    let mut norms = Vec::with_capacity(net.layers.len());
    let mut offset = 0usize;
    for layer in &net.layers {
        let grid = &layer.grid;
        let nb = grid.basis_count();
        let per_edge = nb + if net.fixed_basis_weight { 1 } else { 2 };
        let edge_weight = from_f64::<S>(1.0 / layer.edges.len() as f64);
        let mut layer_norm = S::zero();
        for s in 0..SAMPLES {
            let frac = from_f64::<S>(s as f64 / (SAMPLES - 1) as f64);
            let x = grid.domain_lo() + (grid.domain_hi() - grid.domain_lo()) * frac;
            let lb = local_basis(grid, x, 0);
            let sx = silu(x);
            for (e, edge) in layer.edges.iter().enumerate() {
                let mut spline = S::zero();
                for t in 0..lb.len {
                    spline += lb.rows[0][t] * edge.coeffs[lb.start + t];
                }
                let phi = edge.w_b * sx + edge.w_s * spline;
                layer_norm += phi * phi * inv * edge_weight;
                if let Some((g, w)) = grad.as_mut() {
                    let factor = *w * two * phi * inv * edge_weight;
                    let base = offset + e * per_edge;
                    for t in 0..lb.len {
                        g[base + lb.start + t] += factor * edge.w_s * lb.rows[0][t];
                    }
                    if net.fixed_basis_weight {
                        g[base + nb] += factor * spline;
                    } else {
                        g[base + nb] += factor * sx;
                        g[base + nb + 1] += factor * spline;
                    }
                }
            }
        }
        norms.push(layer_norm);
        offset += layer.edges.len() * per_edge;
    }
    norms
}

/// Per-layer edge-magnitude norms of a network (value only).
pub fn phi_nl_norm<S: Scalar>(net: &KanNetwork<S>) -> Vec<S> {
    phi_norms_with_grad(net, None)
}

/// High-fidelity objective: a summed (not averaged) data term, the
/// `lambda * alpha^n` penalty pushing the blend toward the linear branch,
/// and `w` times the nonlinear branch's edge norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfLoss<S> {
    pub hf_dataset: Dataset<S>,
    pub lambda_alpha: S,
    pub exponent_n: u32,
    pub linear_weight_w: S,
}

impl<S: Scalar> HfLoss<S> {
    pub fn new(
        hf_dataset: Dataset<S>,
        lambda_alpha: S,
        exponent_n: u32,
        linear_weight_w: S,
    ) -> Result<Self, TrainError> {
        if hf_dataset.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if exponent_n == 0
            || !(lambda_alpha.is_finite() && lambda_alpha >= S::zero())
            || !(linear_weight_w.is_finite() && linear_weight_w >= S::zero())
        {
            return Err(TrainError::BadWeight);
        }
        Ok(HfLoss {
            hf_dataset,
            lambda_alpha,
            exponent_n,
            linear_weight_w,
        })
    }
}

impl<S: Scalar> Loss<S, MfkanModel<S>> for HfLoss<S> {
    fn evaluate(&self, model: &MfkanModel<S>, mut grad: Option<&mut [S]>) -> LossBreakdown<S> {
        assert_eq!(model.out_width(), 1, "hf loss expects scalar outputs");
        let two = from_f64::<S>(2.0);
        let mut data_sum = S::zero();
        for (x, y) in self.hf_dataset.iter() {
            match grad.as_deref_mut() {
                Some(g) => {
                    let jets = model.backward_jet_map(
                        x,
                        &[],
                        &|jets| vec![JetAdjoint::value_only(two * (jets[0].value - y), 0)],
                        g,
                    );
                    let r = jets[0].value - y;
                    data_sum += r * r;
                }
                None => {
                    let r = model.forward(x)[0] - y;
                    data_sum += r * r;
                }
            }
        }

        let alpha = model.mixing_alpha;
        let alpha_pen = alpha.powi(self.exponent_n as i32);
        let alpha_idx = model.param_count() - 1;
        if let Some(g) = grad.as_deref_mut() {
            g[alpha_idx] += self.lambda_alpha
                * from_f64::<S>(self.exponent_n as f64)
                * alpha.powi(self.exponent_n as i32 - 1);
        }

        let n_l = model.kan_linear.param_count();
        let n_nl = model.kan_nonlinear.param_count();
        let norms = match grad.as_deref_mut() {
            Some(g) if self.linear_weight_w > S::zero() => phi_norms_with_grad(
                &model.kan_nonlinear,
                Some((&mut g[n_l..n_l + n_nl], self.linear_weight_w)),
            ),
            _ => phi_nl_norm(&model.kan_nonlinear),
        };
        let norm_sum = norms.iter().fold(S::zero(), |acc, &v| acc + v);

        LossBreakdown {
            total: data_sum + self.lambda_alpha * alpha_pen + self.linear_weight_w * norm_sum,
            components: vec![
                ("data", data_sum),
                ("alpha_penalty", alpha_pen),
                ("phi_nl", norm_sum),
            ],
        }
    }
}

/// Value of the high-fidelity loss at the model's current parameters.
pub fn hf_loss<S: Scalar>(
    model: &MfkanModel<S>,
    hf_dataset: &Dataset<S>,
    lambda_alpha: S,
    exponent_n: u32,
    linear_weight_w: S,
) -> S {
    let loss = HfLoss::new(
        hf_dataset.clone(),
        lambda_alpha,
        exponent_n,
        linear_weight_w,
    )
    .expect("valid hf loss parameters");
    loss.evaluate(model, None).total
}

/// Joint optimization of both correction branches and the mixing weight;
/// the low-fidelity parameters stay bit-identical throughout.
pub fn train_high_fidelity<S: Scalar>(
    model: &mut MfkanModel<S>,
    hf_dataset: &Dataset<S>,
    lambda_alpha: S,
    exponent_n: u32,
    linear_weight_w: S,
    cfg: &TrainConfig,
) -> Result<TrainHistory<S>, MfkanError> {
    if !model.low_frozen {
        return Err(MfkanError::LowNotFrozen);
    }
    let loss = HfLoss::new(
        hf_dataset.clone(),
        lambda_alpha,
        exponent_n,
        linear_weight_w,
    )?;
    Ok(train(model, &loss, cfg)?)
}
