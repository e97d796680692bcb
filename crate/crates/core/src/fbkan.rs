//! Finite-basis KANs: an overlapping domain decomposition with
//! cosine-squared partition-of-unity windows, blending one member KAN per
//! subdomain. Members are evaluated (and differentiated) only where their
//! window is positive, which both bounds the cost and guarantees strict
//! parameter locality.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jet::{Jet2, JetAdjoint};
use crate::model::{DomainBox, Model};
use crate::network::{JetState, KanNetwork, NetworkError};
use crate::scalar::{from_f64, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum FbkanError {
    #[error("per-dimension subdomain counts must match the domain dimension")]
    CountDimensionMismatch,
    #[error("subdomain counts must be at least 1")]
    ZeroCount,
    #[error("overlap fraction must lie strictly between 0 and 1")]
    BadOverlap,
    #[error("member input width {got} does not match the domain dimension {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// One window's geometry: per-dimension center and half-width of its
/// support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subdomain<S> {
    pub center: Vec<S>,
    pub half_width: Vec<S>,
}

impl<S: Scalar> Subdomain<S> {
    /// Strict interior of the window support.
    pub fn support_contains(&self, x: &[S]) -> bool {
        x.iter()
            .zip(self.center.iter().zip(&self.half_width))
            .all(|(v, (c, h))| (*v - *c).abs() < *h)
    }

    /// Affine map from the support onto `[-1, 1]` per dimension.
    fn to_local(&self, x: &[S]) -> Vec<S> {
        x.iter()
            .zip(self.center.iter().zip(&self.half_width))
            .map(|(v, (c, h))| (*v - *c) / *h)
            .collect()
    }
}

/// A cover of the domain by overlapping subdomains (tensor-product layout in
/// several dimensions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition<S> {
    pub domain: DomainBox<S>,
    pub subdomains: Vec<Subdomain<S>>,
    pub per_dim_counts: Vec<usize>,
    pub overlap_fraction: f64,
}

impl<S: Scalar> Decomposition<S> {
    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }
}

/// Equispaced tensor-product decomposition. Per dimension the centers sit at
/// `lo + (i + 1/2) * span / count` and every half-width is
/// `(1 + overlap) * (span / count) / 2`, so neighbouring supports overlap by
/// the given fraction of a cell and the union covers the whole domain.
pub fn uniform_decomposition<S: Scalar>(
    domain: &DomainBox<S>,
    per_dim_counts: &[usize],
    overlap_fraction: f64,
) -> Result<Decomposition<S>, FbkanError> {
    if per_dim_counts.len() != domain.dims() {
        return Err(FbkanError::CountDimensionMismatch);
    }
    if per_dim_counts.iter().any(|&c| c == 0) {
        return Err(FbkanError::ZeroCount);
    }
    if !(overlap_fraction > 0.0 && overlap_fraction < 1.0) {
        return Err(FbkanError::BadOverlap);
    }
    let dim = domain.dims();
    let over = from_f64::<S>(1.0 + overlap_fraction);
    let half = from_f64::<S>(0.5);
    let cell: Vec<S> = (0..dim)
        .map(|d| domain.span(d) / from_f64(per_dim_counts[d] as f64))
        .collect();
    let total: usize = per_dim_counts.iter().product();
    let mut subdomains = Vec::with_capacity(total);
    // first dimension slowest (row-major over the multi-index)
    for j in 0..total {
        let mut rest = j;
        let mut idx = vec![0usize; dim];
        for d in (0..dim).rev() {
            idx[d] = rest % per_dim_counts[d];
            rest /= per_dim_counts[d];
        }
        let center = (0..dim)
            .map(|d| domain.lo[d] + (from_f64::<S>(idx[d] as f64) + half) * cell[d])
            .collect();
        let half_width = (0..dim).map(|d| over * cell[d] * half).collect();
        subdomains.push(Subdomain { center, half_width });
    }
    Ok(Decomposition {
        domain: domain.clone(),
        subdomains,
        per_dim_counts: per_dim_counts.to_vec(),
        overlap_fraction,
    })
}

/// Raw window `prod_d [1 + cos(pi (x_d - mu_d) / sigma_d)]^2` with diagonal
/// first/second derivatives over `dims`; identically zero (all channels) on
/// and outside the support boundary, where the factor has a quartic root.
pub fn window_jet<S: Scalar>(sub: &Subdomain<S>, x: &[S], dims: &[usize]) -> Jet2<S> {
    let dim = x.len();
    let zero_jet = Jet2 {
        value: S::zero(),
        d1: vec![S::zero(); dims.len()],
        d2: vec![S::zero(); dims.len()],
    };
    if !sub.support_contains(x) {
        return zero_jet;
    }
    let pi = S::PI();
    let two = from_f64::<S>(2.0);
    // per-dimension factor and its first two derivatives in x_d
    let mut f = vec![S::zero(); dim];
    let mut f1 = vec![S::zero(); dim];
    let mut f2 = vec![S::zero(); dim];
    for d in 0..dim {
        let rate = pi / sub.half_width[d];
        let t = (x[d] - sub.center[d]) * rate;
        let u = S::one() + t.cos();
        let u1 = -t.sin() * rate;
        let u2 = -t.cos() * rate * rate;
        f[d] = u * u;
        f1[d] = two * u * u1;
        f2[d] = two * (u1 * u1 + u * u2);
    }
    let mut jet = zero_jet;
    jet.value = f.iter().fold(S::one(), |acc, &v| acc * v);
    for (slot, &d) in dims.iter().enumerate() {
        let rest = (0..dim)
            .filter(|&e| e != d)
            .fold(S::one(), |acc, e| acc * f[e]);
        jet.d1[slot] = f1[d] * rest;
        jet.d2[slot] = f2[d] * rest;
    }
    jet
}

/// Normalized partition-of-unity weights `w_j = w-hat_j / sum w-hat` at `x`.
///
/// Panics if every raw window is zero, which means `x` lies outside the
/// decomposition's coverage — a broken invariant, not a data condition.
pub fn pou_weights<S: Scalar>(decomp: &Decomposition<S>, x: &[S]) -> Vec<S> {
    let raw: Vec<S> = decomp
        .subdomains
        .iter()
        .map(|s| window_jet(s, x, &[]).value)
        .collect();
    let total = raw.iter().fold(S::zero(), |acc, &v| acc + v);
    assert!(
        total > S::zero(),
        "point lies outside every subdomain support; the decomposition does not cover it"
    );
    raw.into_iter().map(|v| v / total).collect()
}

/// Per-member state captured during the jet forward pass, reused by the
/// backward pass.
struct MemberTape<S> {
    index: usize,
    /// normalized weight and its diagonal first/second derivatives
    w: S,
    w1: Vec<S>,
    w2: Vec<S>,
    states: Vec<JetState<S>>,
}

/// The windowed sum `sum_j w_j(x) K_j(x)`; each member KAN sees its
/// subdomain's support affinely mapped onto `[-1, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbkanModel<S> {
    pub decomposition: Decomposition<S>,
    pub kans: Vec<KanNetwork<S>>,
}

impl<S: Scalar> FbkanModel<S> {
    /// One member per subdomain, identical architectures, all drawn from a
    /// single seeded stream.
    pub fn init(
        decomposition: Decomposition<S>,
        widths: &[usize],
        intervals: usize,
        degree: usize,
        seed: u64,
    ) -> Result<Self, FbkanError> {
        if widths.first() != Some(&decomposition.domain.dims()) {
            return Err(FbkanError::WidthMismatch {
                got: widths.first().copied().unwrap_or(0),
                want: decomposition.domain.dims(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kans = (0..decomposition.len())
            .map(|_| KanNetwork::init_from_rng(widths, intervals, degree, seed, false, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FbkanModel {
            decomposition,
            kans,
        })
    }

    fn member_offset(&self, j: usize) -> usize {
        self.kans[..j].iter().map(KanNetwork::param_count).sum()
    }

    /// Jet evaluation shared by every public path: computes the model jets
    /// and, when `tapes` is requested, keeps each active member's weight
    /// jets and propagation states.
    fn eval_jets(
        &self,
        x: &[S],
        dims: &[usize],
        mut tapes: Option<&mut Vec<MemberTape<S>>>,
    ) -> Vec<Jet2<S>> {
        assert_eq!(x.len(), self.in_width(), "input width mismatch");
        let a = dims.len();
        let out = self.out_width();

        // raw window jets for active members and their plain sum
        let mut raw: Vec<(usize, Jet2<S>)> = Vec::new();
        let mut total = Jet2 {
            value: S::zero(),
            d1: vec![S::zero(); a],
            d2: vec![S::zero(); a],
        };
        for (j, sub) in self.decomposition.subdomains.iter().enumerate() {
            if !sub.support_contains(x) {
                continue;
            }
            let wj = window_jet(sub, x, dims);
            total.value += wj.value;
            for d in 0..a {
                total.d1[d] += wj.d1[d];
                total.d2[d] += wj.d2[d];
            }
            raw.push((j, wj));
        }
        assert!(
            total.value > S::zero(),
            "point lies outside every subdomain support; the decomposition does not cover it"
        );

        let mut jets = vec![
            Jet2 {
                value: S::zero(),
                d1: vec![S::zero(); a],
                d2: vec![S::zero(); a],
            };
            out
        ];
        let two = from_f64::<S>(2.0);
        let big_w = total.value;
        for (j, wj) in raw {
            let sub = &self.decomposition.subdomains[j];
            // quotient rule for the normalized weight
            let w = wj.value / big_w;
            let mut w1 = vec![S::zero(); a];
            let mut w2 = vec![S::zero(); a];
            for d in 0..a {
                let wp = wj.d1[d];
                let wpp = wj.d2[d];
                let gp = total.d1[d];
                let gpp = total.d2[d];
                w1[d] = wp / big_w - wj.value * gp / (big_w * big_w);
                w2[d] = wpp / big_w - two * wp * gp / (big_w * big_w)
                    - wj.value * gpp / (big_w * big_w)
                    + two * wj.value * gp * gp / (big_w * big_w * big_w);
            }

            // member jets in local coordinates, chain factor 1 / half_width
            let local = sub.to_local(x);
            let scales: Vec<S> = dims.iter().map(|&d| S::one() / sub.half_width[d]).collect();
            let states = self.kans[j].propagate(JetState::seed(&local, dims, Some(&scales)));
            {
                let last = states.last().unwrap();
                for q in 0..out {
                    let kv = last.value(q);
                    jets[q].value += w * kv;
                    for d in 0..a {
                        let k1 = last.d1(q, d);
                        let k2 = last.d2(q, d);
                        jets[q].d1[d] += w1[d] * kv + w * k1;
                        jets[q].d2[d] += w2[d] * kv + two * w1[d] * k1 + w * k2;
                    }
                }
            }
            if let Some(tapes) = tapes.as_deref_mut() {
                tapes.push(MemberTape {
                    index: j,
                    w,
                    w1,
                    w2,
                    states,
                });
            }
        }
        jets
    }

    /// Windows do not depend on parameters, so the member adjoint is the
    /// model adjoint filtered through the product rule.
    fn backprop_tapes(&self, tapes: &[MemberTape<S>], adj: &[JetAdjoint<S>], grad: &mut [S]) {
        let a = adj.first().map_or(0, |j| j.d1.len());
        let two = from_f64::<S>(2.0);
        for tape in tapes {
            let net = &self.kans[tape.index];
            let offset = self.member_offset(tape.index);
            let mut member_adj = JetState::zeros(net.out_width(), a);
            for (q, aq) in adj.iter().enumerate() {
                let mut value = aq.value * tape.w;
                for d in 0..a {
                    value += aq.d1[d] * tape.w1[d] + aq.d2[d] * tape.w2[d];
                    member_adj.set_d1(q, d, aq.d1[d] * tape.w + two * aq.d2[d] * tape.w1[d]);
                    member_adj.set_d2(q, d, aq.d2[d] * tape.w);
                }
                member_adj.set_value(q, value);
            }
            net.backprop(
                &tape.states,
                member_adj,
                &mut grad[offset..offset + net.param_count()],
            );
        }
    }
}

impl<S: Scalar> Model<S> for FbkanModel<S> {
    fn in_width(&self) -> usize {
        self.decomposition.domain.dims()
    }

    fn out_width(&self) -> usize {
        self.kans.first().map_or(0, |k| k.out_width())
    }

    fn param_count(&self) -> usize {
        self.kans.iter().map(KanNetwork::param_count).sum()
    }

    fn params(&self) -> Vec<S> {
        let mut flat = Vec::with_capacity(self.param_count());
        for k in &self.kans {
            flat.extend(k.flatten_params());
        }
        flat
    }

    fn set_params(&mut self, flat: &[S]) {
        assert_eq!(flat.len(), self.param_count(), "flat length mismatch");
        let mut offset = 0;
        for k in &mut self.kans {
            let n = k.param_count();
            k.set_flat_params(&flat[offset..offset + n])
                .expect("member length mismatch");
            offset += n;
        }
    }

    fn forward(&self, x: &[S]) -> Vec<S> {
        self.eval_jets(x, &[], None)
            .into_iter()
            .map(|j| j.value)
            .collect()
    }

    fn forward_jet(&self, x: &[S], dims: &[usize]) -> Vec<Jet2<S>> {
        self.eval_jets(x, dims, None)
    }

    fn backward_jet(&self, x: &[S], dims: &[usize], adj: &[JetAdjoint<S>], grad: &mut [S]) {
        assert_eq!(adj.len(), self.out_width(), "adjoint count mismatch");
        let mut tapes = Vec::new();
        self.eval_jets(x, dims, Some(&mut tapes));
        self.backprop_tapes(&tapes, adj, grad);
    }

    fn backward_jet_map(
        &self,
        x: &[S],
        dims: &[usize],
        adj_of: &dyn Fn(&[Jet2<S>]) -> Vec<JetAdjoint<S>>,
        grad: &mut [S],
    ) -> Vec<Jet2<S>> {
        let mut tapes = Vec::new();
        let jets = self.eval_jets(x, dims, Some(&mut tapes));
        self.backprop_tapes(&tapes, &adj_of(&jets), grad);
        jets
    }
}
