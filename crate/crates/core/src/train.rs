//! Losses, analytic gradients, and the full-batch Adam training loop.
//!
//! A [`Loss`] pairs with any [`Model`]; gradient evaluation routes every data
//! point through the model's jet backward so data, physics, and
//! multi-fidelity objectives all share one mechanism.

use serde::{Deserialize, Serialize};

use crate::jet::JetAdjoint;
use crate::model::Model;
use crate::scalar::{from_f64, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset must be non-empty")]
    EmptyDataset,
    #[error("{0} point set must be non-empty")]
    EmptyPointSet(&'static str),
    #[error("loss weights must be finite and non-negative")]
    BadWeight,
    #[error("input rows and targets must have equal length")]
    LengthMismatch,
    #[error("input rows must share one width")]
    RaggedInputs,
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("learning rate must be positive and finite")]
    BadLearningRate,
    #[error("mini-batch training is not supported; keep full_batch set")]
    UnsupportedBatchMode,
    #[error("loss diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

/// Scalar-target supervised data, the shape every experiment produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<S> {
    pub xs: Vec<Vec<S>>,
    pub ys: Vec<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(xs: Vec<Vec<S>>, ys: Vec<S>) -> Result<Self, TrainError> {
        if xs.len() != ys.len() {
            return Err(TrainError::LengthMismatch);
        }
        if let Some(first) = xs.first() {
            if xs.iter().any(|row| row.len() != first.len()) {
                return Err(TrainError::RaggedInputs);
            }
        }
        Ok(Dataset { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn in_width(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[S], S)> {
        self.xs.iter().map(Vec::as_slice).zip(self.ys.iter().copied())
    }
}

/// Total loss plus its named, unweighted components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub components: Vec<(&'static str, S)>,
}

impl<S: Scalar> LossBreakdown<S> {
    fn single(name: &'static str, value: S) -> Self {
        LossBreakdown {
            total: value,
            components: vec![(name, value)],
        }
    }
}

/// A differentiable training objective for models of type `M`.
///
/// `evaluate` returns the loss breakdown and, when `grad` is given,
/// accumulates d(total)/dθ into it (callers zero the buffer).
pub trait Loss<S: Scalar, M: Model<S> + ?Sized> {
    fn evaluate(&self, model: &M, grad: Option<&mut [S]>) -> LossBreakdown<S>;
}

/// Gradient of a loss at the model's current parameters.
pub fn grad<S: Scalar, M: Model<S>, L: Loss<S, M> + ?Sized>(loss: &L, model: &M) -> Vec<S> {
    let mut g = vec![S::zero(); model.param_count()];
    loss.evaluate(model, Some(&mut g));
    g
}

/// Mean of squared residuals over a scalar-target dataset.
pub fn mse_loss<S: Scalar, M: Model<S> + ?Sized>(model: &M, data: &Dataset<S>) -> S {
    assert_eq!(model.out_width(), 1, "mse expects scalar-output models");
    let n = from_f64::<S>(data.len() as f64);
    data.iter()
        .map(|(x, y)| {
            let r = model.forward(x)[0] - y;
            r * r
        })
        .fold(S::zero(), |acc, v| acc + v)
        / n
}

/// Plain data-fitting objective: `mean_i (model(x_i) - y_i)^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMse<S> {
    pub dataset: Dataset<S>,
}

impl<S: Scalar> DataMse<S> {
    pub fn new(dataset: Dataset<S>) -> Result<Self, TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        Ok(DataMse { dataset })
    }
}

impl<S: Scalar, M: Model<S> + ?Sized> Loss<S, M> for DataMse<S> {
    fn evaluate(&self, model: &M, grad: Option<&mut [S]>) -> LossBreakdown<S> {
        assert_eq!(model.out_width(), 1, "mse expects scalar-output models");
        let n = from_f64::<S>(self.dataset.len() as f64);
        let two = from_f64::<S>(2.0);
        match grad {
            None => LossBreakdown::single("mse", mse_loss(model, &self.dataset)),
            Some(g) => {
                let mut acc = S::zero();
                for (x, y) in self.dataset.iter() {
                    let jets = model.backward_jet_map(
                        x,
                        &[],
                        &|jets| vec![JetAdjoint::value_only(two * (jets[0].value - y) / n, 0)],
                        g,
                    );
                    let r = jets[0].value - y;
                    acc += r * r;
                }
                LossBreakdown::single("mse", acc / n)
            }
        }
    }
}

/// Initial displacement of the vibrating-string problem.
pub fn initial_profile<S: Scalar>(x: S) -> S {
    let pi = S::PI();
    (pi * x).sin() + from_f64::<S>(0.5) * (from_f64::<S>(4.0) * pi * x).sin()
}

/// Physics-informed objective for the wave equation `u_tt = c^2 u_xx` on the
/// unit square, with initial displacement [`initial_profile`], zero initial
/// velocity, and homogeneous Dirichlet boundaries.
///
/// `total = L_ic + L_t + L_bc + lambda_res * L_res`; the stored components
/// are unweighted. Inputs are `[x, t]` pairs; `ic_points` holds the spatial
/// coordinates only (evaluated at `t = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveLoss<S> {
    pub collocation: Vec<[S; 2]>,
    pub ic_points: Vec<S>,
    pub bc_points: Vec<[S; 2]>,
    pub lambda_res: S,
    pub wave_speed_c: S,
}

impl<S: Scalar> WaveLoss<S> {
    pub fn new(
        collocation: Vec<[S; 2]>,
        ic_points: Vec<S>,
        bc_points: Vec<[S; 2]>,
        lambda_res: S,
        wave_speed_c: S,
    ) -> Result<Self, TrainError> {
        if collocation.is_empty() {
            return Err(TrainError::EmptyPointSet("collocation"));
        }
        if ic_points.is_empty() {
            return Err(TrainError::EmptyPointSet("initial-condition"));
        }
        if bc_points.is_empty() {
            return Err(TrainError::EmptyPointSet("boundary"));
        }
        if !(lambda_res.is_finite() && lambda_res >= S::zero() && wave_speed_c.is_finite()) {
            return Err(TrainError::BadWeight);
        }
        Ok(WaveLoss {
            collocation,
            ic_points,
            bc_points,
            lambda_res,
            wave_speed_c,
        })
    }
}

impl<S: Scalar, M: Model<S> + ?Sized> Loss<S, M> for WaveLoss<S> {
    fn evaluate(&self, model: &M, grad: Option<&mut [S]>) -> LossBreakdown<S> {
        assert_eq!(model.in_width(), 2, "wave loss expects (x, t) inputs");
        assert_eq!(model.out_width(), 1, "wave loss expects a scalar field");
        let two = from_f64::<S>(2.0);
        let c2 = self.wave_speed_c * self.wave_speed_c;
        let n_res = from_f64::<S>(self.collocation.len() as f64);
        let n_ic = from_f64::<S>(self.ic_points.len() as f64);
        let n_bc = from_f64::<S>(self.bc_points.len() as f64);
        let mut grad = grad;

        // residual term at interior collocation points: r = f_tt - c^2 f_xx
        let mut l_res = S::zero();
        for p in &self.collocation {
            let scale = two * self.lambda_res / n_res;
            let jets = match grad.as_deref_mut() {
                Some(g) => model.backward_jet_map(
                    p,
                    &[0, 1],
                    &|jets| {
                        let r = jets[0].d2[1] - c2 * jets[0].d2[0];
                        vec![JetAdjoint {
                            value: S::zero(),
                            d1: vec![S::zero(), S::zero()],
                            d2: vec![-c2 * scale * r, scale * r],
                        }]
                    },
                    g,
                ),
                None => model.forward_jet(p, &[0, 1]),
            };
            let r = jets[0].d2[1] - c2 * jets[0].d2[0];
            l_res += r * r;
        }
        l_res /= n_res;

        // initial displacement and initial velocity, both at t = 0
        let mut l_ic = S::zero();
        let mut l_t = S::zero();
        for &x in &self.ic_points {
            let point = [x, S::zero()];
            let target = initial_profile(x);
            let jets = match grad.as_deref_mut() {
                Some(g) => model.backward_jet_map(
                    &point,
                    &[1],
                    &|jets| {
                        vec![JetAdjoint {
                            value: two * (jets[0].value - target) / n_ic,
                            d1: vec![two * jets[0].d1[0] / n_ic],
                            d2: vec![S::zero()],
                        }]
                    },
                    g,
                ),
                None => model.forward_jet(&point, &[1]),
            };
            let r = jets[0].value - target;
            l_ic += r * r;
            l_t += jets[0].d1[0] * jets[0].d1[0];
        }
        l_ic /= n_ic;
        l_t /= n_ic;

        // both boundaries pooled into one mean
        let mut l_bc = S::zero();
        for p in &self.bc_points {
            let jets = match grad.as_deref_mut() {
                Some(g) => model.backward_jet_map(
                    p,
                    &[],
                    &|jets| vec![JetAdjoint::value_only(two * jets[0].value / n_bc, 0)],
                    g,
                ),
                None => model.forward_jet(p, &[]),
            };
            l_bc += jets[0].value * jets[0].value;
        }
        l_bc /= n_bc;

        LossBreakdown {
            total: l_ic + l_t + l_bc + self.lambda_res * l_res,
            components: vec![("ic", l_ic), ("ic_t", l_t), ("bc", l_bc), ("residual", l_res)],
        }
    }
}

/// Serializable description of a training objective; the multi-fidelity
/// variant's evaluator lives with the multi-fidelity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossSpec<S> {
    DataMse {
        dataset: Dataset<S>,
    },
    MultiFidelityHf {
        hf_dataset: Dataset<S>,
        lambda_alpha: S,
        exponent_n: u32,
        linear_weight_w: S,
    },
    PhysicsWave(WaveLoss<S>),
}

/// Optimizer settings for [`train`]. `full_batch` is accepted for
/// completeness but only the default (true) is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub full_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 1000,
            seed: 0,
            full_batch: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::ZeroEpochs);
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::BadLearningRate);
        }
        if !self.full_batch {
            return Err(TrainError::UnsupportedBatchMode);
        }
        Ok(())
    }
}

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: S) {
        assert_eq!(params.len(), self.m.len(), "adam length mismatch");
        assert_eq!(grads.len(), self.m.len(), "adam length mismatch");
        let b1 = from_f64::<S>(0.9);
        let b2 = from_f64::<S>(0.999);
        let eps = from_f64::<S>(1e-8);
        let one = S::one();
        self.t += 1;
        let m_corr = one - b1.powi(self.t);
        let v_corr = one - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (one - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (one - b2) * grads[i] * grads[i];
            let mhat = self.m[i] / m_corr;
            let vhat = self.v[i] / v_corr;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Loss at every epoch boundary: entry 0 is the initial loss, entry
/// `epochs` the final one.
#[derive(Debug, Clone)]
pub struct TrainHistory<S> {
    pub losses: Vec<LossBreakdown<S>>,
}

impl<S: Scalar> TrainHistory<S> {
    pub fn totals(&self) -> Vec<S> {
        self.losses.iter().map(|l| l.total).collect()
    }

    pub fn final_loss(&self) -> S {
        self.losses.last().expect("history is never empty").total
    }
}

/// Full-batch Adam loop; deterministic given the model state and config.
/// Aborts with the epoch index as soon as the loss turns non-finite.
pub fn train<S: Scalar, M: Model<S>, L: Loss<S, M> + ?Sized>(
    model: &mut M,
    loss: &L,
    cfg: &TrainConfig,
) -> Result<TrainHistory<S>, TrainError> {
    cfg.validate()?;
    let n = model.param_count();
    let mut adam = AdamState::new(n);
    let mut g = vec![S::zero(); n];
    let lr = from_f64::<S>(cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        g.iter_mut().for_each(|v| *v = S::zero());
        let lb = loss.evaluate(model, Some(&mut g));
        if !lb.total.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        losses.push(lb);
        let mut theta = model.params();
        adam.step(&mut theta, &g, lr);
        model.set_params(&theta);
        model.project_params();
    }
    let last = loss.evaluate(model, None);
    if !last.total.is_finite() {
        return Err(TrainError::Diverged { epoch: cfg.epochs });
    }
    losses.push(last);
    Ok(TrainHistory { losses })
}
