//! Second-order jets: value plus first and diagonal second derivatives with
//! respect to a chosen set of input dimensions.
//!
//! `d1[d]` and `d2[d]` refer to the `d`-th *active* dimension as passed to the
//! jet-propagating call, not to raw input indices. Mixed partials are not
//! tracked; every nonlinearity in a KAN is univariate, so diagonal second
//! derivatives propagate exactly without them.

#[derive(Debug, Clone, PartialEq)]
pub struct Jet2<S> {
    pub value: S,
    pub d1: Vec<S>,
    pub d2: Vec<S>,
}

/// Adjoint seed for a backward pass: the derivative of the objective with
/// respect to each jet channel of one output.
#[derive(Debug, Clone, PartialEq)]
pub struct JetAdjoint<S> {
    pub value: S,
    pub d1: Vec<S>,
    pub d2: Vec<S>,
}

impl<S: Copy + num_traits::Zero> JetAdjoint<S> {
    /// Adjoint touching only the value channel.
    pub fn value_only(value: S, active: usize) -> Self {
        JetAdjoint {
            value,
            d1: vec![S::zero(); active],
            d2: vec![S::zero(); active],
        }
    }
}
