//! Common interface of every trainable field in this crate: plain KANs,
//! domain-decomposed FBKANs and multi-fidelity MFKANs.

use serde::{Deserialize, Serialize};

use crate::jet::{Jet2, JetAdjoint};
use crate::scalar::{from_f64, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("scaler bounds must satisfy lo < hi in every dimension")]
    BadScalerBounds,
    #[error("box bounds must be non-empty with lo < hi in every dimension")]
    BadBox,
}

/// Axis-aligned box, the working domain of a model or decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
}

impl<S: Scalar> DomainBox<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>) -> Result<Self, ModelError> {
        if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(ModelError::BadBox);
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn span(&self, dim: usize) -> S {
        self.hi[dim] - self.lo[dim]
    }

    pub fn contains(&self, x: &[S]) -> bool {
        x.len() == self.dims()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn scaler(&self) -> InputScaler<S> {
        InputScaler {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        }
    }
}

/// A differentiable map from an input box to `out_width` outputs with a flat
/// parameter vector, jet propagation for input derivatives, and an analytic
/// backward pass for parameter gradients.
pub trait Model<S: Scalar>: Send {
    fn in_width(&self) -> usize;
    fn out_width(&self) -> usize;
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<S>;
    /// Writes the flat parameter vector back; panics on length mismatch
    /// (optimizers always hold a matching vector).
    fn set_params(&mut self, flat: &[S]);
    fn forward(&self, x: &[S]) -> Vec<S>;
    /// Value plus first and diagonal second derivatives with respect to the
    /// input dimensions listed in `dims` (distinct indices).
    fn forward_jet(&self, x: &[S], dims: &[usize]) -> Vec<Jet2<S>>;
    /// Accumulates into `grad` the parameter gradient of
    /// `sum_q <adj[q], jet_q(x)>`; `adj` has one entry per output and its
    /// `d1`/`d2` lengths match `dims`.
    fn backward_jet(&self, x: &[S], dims: &[usize], adj: &[JetAdjoint<S>], grad: &mut [S]);
    /// Forward-jet pass and backward pass in one call: `adj_of` maps the
    /// output jets to their adjoints (losses put the residual weighting
    /// there), and the jets are returned so the caller can also read the
    /// loss value off them. The default recomputes the forward pass inside
    /// `backward_jet`; implementations override it to reuse their tape.
    fn backward_jet_map(
        &self,
        x: &[S],
        dims: &[usize],
        adj_of: &dyn Fn(&[Jet2<S>]) -> Vec<JetAdjoint<S>>,
        grad: &mut [S],
    ) -> Vec<Jet2<S>> {
        let jets = self.forward_jet(x, dims);
        let adj = adj_of(&jets);
        self.backward_jet(x, dims, &adj, grad);
        jets
    }
    /// Constraint projection applied after every optimizer step.
    fn project_params(&mut self) {}
}

/// Per-dimension affine map from a box onto `[-1, 1]^d`; all networks keep
/// their spline grids on `[-1, 1]` and see scaled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
}

impl<S: Scalar> InputScaler<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>) -> Result<Self, ModelError> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(ModelError::BadScalerBounds);
        }
        Ok(InputScaler { lo, hi })
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn scale_value(&self, dim: usize, x: S) -> S {
        let two = from_f64::<S>(2.0);
        two * (x - self.lo[dim]) / (self.hi[dim] - self.lo[dim]) - S::one()
    }

    pub fn scale_point(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.dims());
        x.iter()
            .enumerate()
            .map(|(d, &v)| self.scale_value(d, v))
            .collect()
    }

    /// d(scaled)/d(raw) for one dimension.
    #[inline]
    pub fn jet_scale(&self, dim: usize) -> S {
        from_f64::<S>(2.0) / (self.hi[dim] - self.lo[dim])
    }
}
