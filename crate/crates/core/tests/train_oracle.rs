//! Training-loop oracles: hand-computed MSE values and gradients on a tiny
//! affine model, an independently written reference Adam, frozen divergence
//! behaviour, and finite-difference gradient checks for the data and wave
//! losses on small networks.

use conformal_kan::jet::{Jet2, JetAdjoint};
use conformal_kan::model::{InputScaler, Model};
use conformal_kan::network::{KanNetwork, ScaledKan};
use conformal_kan::train::{
    grad, mse_loss, train, AdamState, DataMse, Dataset, Loss, LossBreakdown, TrainConfig,
    TrainError, WaveLoss,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// `y = w0 * x + w1`; `w2` is carried but never used, so its gradient is
/// identically zero.
#[derive(Clone)]
struct AffineModel {
    w: [f64; 3],
}

impl Model<f64> for AffineModel {
    fn in_width(&self) -> usize {
        1
    }
    fn out_width(&self) -> usize {
        1
    }
    fn param_count(&self) -> usize {
        3
    }
    fn params(&self) -> Vec<f64> {
        self.w.to_vec()
    }
    fn set_params(&mut self, p: &[f64]) {
        self.w.copy_from_slice(p);
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        vec![self.w[0] * x[0] + self.w[1]]
    }
    fn forward_jet(&self, x: &[f64], dims: &[usize]) -> Vec<Jet2<f64>> {
        vec![Jet2 {
            value: self.w[0] * x[0] + self.w[1],
            d1: dims.iter().map(|_| self.w[0]).collect(),
            d2: dims.iter().map(|_| 0.0).collect(),
        }]
    }
    fn backward_jet(&self, x: &[f64], dims: &[usize], adj: &[JetAdjoint<f64>], grad: &mut [f64]) {
        // d(value)/dw0 = x, d(value)/dw1 = 1; jet channels: d1 = w0 per dim
        grad[0] += adj[0].value * x[0];
        grad[1] += adj[0].value;
        for (d, _) in dims.iter().enumerate() {
            grad[0] += adj[0].d1[d];
        }
    }
}

fn toy_data() -> Dataset<f64> {
    Dataset::new(vec![vec![1.0], vec![2.0]], vec![1.0, 0.0]).unwrap()
}

#[test]
fn mse_matches_hand_computation() {
    let model = AffineModel { w: [0.5, 0.0, 7.0] };
    let data = toy_data();
    // predictions 0.5 and 1.0, residuals -0.5 and 1.0
    assert_eq!(mse_loss(&model, &data), 0.625);

    let loss = DataMse::new(data).unwrap();
    let lb = loss.evaluate(&model, None);
    assert_eq!(lb.total, 0.625);

    let g = grad(&loss, &model);
    // d mse / d w0 = mean 2 r_i x_i = (2*(-0.5)*1 + 2*1*2)/2
    assert_eq!(g[0], 1.5);
    // d mse / d w1 = mean 2 r_i = (  -1 + 2 )/2
    assert_eq!(g[1], 0.5);
    assert_eq!(g[2], 0.0);
}

#[test]
fn constant_zero_model_against_unit_targets() {
    let model = AffineModel { w: [0.0, 0.0, 0.0] };
    let data = Dataset::new(vec![vec![0.3], vec![-0.4]], vec![1.0, -1.0]).unwrap();
    assert_eq!(mse_loss(&model, &data), 1.0);
}

#[test]
fn perfect_fit_has_zero_loss_and_gradient() {
    let model = AffineModel { w: [2.0, -1.0, 0.0] };
    let data = Dataset::new(vec![vec![0.0], vec![1.0], vec![3.0]], vec![-1.0, 1.0, 5.0]).unwrap();
    let loss = DataMse::new(data).unwrap();
    assert_eq!(loss.evaluate(&model, None).total, 0.0);
    assert!(grad(&loss, &model).iter().all(|&g| g == 0.0));
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(Dataset::<f64>::new(vec![], vec![]).is_ok());
    assert!(matches!(
        DataMse::new(Dataset::<f64>::new(vec![], vec![]).unwrap()),
        Err(TrainError::EmptyDataset)
    ));
    assert!(Dataset::<f64>::new(vec![vec![1.0]], vec![]).is_err());
}

/// Textbook Adam written independently of the library implementation.
struct RefAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl RefAdam {
    fn new(n: usize) -> Self {
        RefAdam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            let mhat = self.m[i] / (1.0 - B1.powi(self.t));
            let vhat = self.v[i] / (1.0 - B2.powi(self.t));
            p[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

#[test]
fn adam_matches_reference_implementation_bitwise() {
    let data = toy_data();
    let loss = DataMse::new(data).unwrap();

    let mut reference = AffineModel { w: [0.5, 0.2, 3.0] };
    let mut adam = RefAdam::new(3);
    for _ in 0..50 {
        let g = grad(&loss, &reference);
        let mut p = reference.params();
        adam.step(&mut p, &g, 0.05);
        reference.set_params(&p);
    }

    let mut trained = AffineModel { w: [0.5, 0.2, 3.0] };
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 50,
        ..TrainConfig::default()
    };
    let history = train(&mut trained, &loss, &cfg).unwrap();

    assert_eq!(trained.w[0], reference.w[0]);
    assert_eq!(trained.w[1], reference.w[1]);
    assert_eq!(trained.w[2], reference.w[2]);
    assert_eq!(history.losses.len(), 51);
    assert_eq!(history.losses[0].total, loss_at([0.5, 0.2, 3.0]));
    assert!(history.final_loss() < history.losses[0].total);

    fn loss_at(w: [f64; 3]) -> f64 {
        let model = AffineModel { w };
        mse_loss(&model, &toy_data())
    }
}

#[test]
fn first_adam_step_moves_by_about_lr_against_the_gradient_sign() {
    let mut adam = AdamState::new(2);
    let mut p = vec![1.0f64, -3.0];
    adam.step(&mut p, &[2.0, -0.5], 0.01);
    assert!(close(p[0], 1.0 - 0.01, 1e-7));
    assert!(close(p[1], -3.0 + 0.01, 1e-7));
}

#[test]
fn zero_gradient_leaves_parameters_untouched() {
    let mut adam = AdamState::new(2);
    let mut p = vec![1.5f64, -0.25];
    for _ in 0..10 {
        adam.step(&mut p, &[0.0, 0.0], 0.1);
    }
    assert_eq!(p, vec![1.5, -0.25]);
}

#[test]
fn unused_parameter_stays_exactly_at_its_initial_value() {
    let mut model = AffineModel { w: [0.0, 0.0, 42.5] };
    let loss = DataMse::new(toy_data()).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    train(&mut model, &loss, &cfg).unwrap();
    assert_eq!(model.w[2], 42.5);
    assert!(model.w[0] != 0.0);
}

#[test]
fn vanishing_learning_rate_freezes_parameters() {
    let mut model = AffineModel { w: [0.5, 0.2, 1.0] };
    let loss = DataMse::new(toy_data()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-12,
        epochs: 5,
        ..TrainConfig::default()
    };
    train(&mut model, &loss, &cfg).unwrap();
    assert!((model.w[0] - 0.5).abs() <= 1e-9);
    assert!((model.w[1] - 0.2).abs() <= 1e-9);
}

#[test]
fn config_validation() {
    let loss = DataMse::new(toy_data()).unwrap();
    let mut model = AffineModel { w: [0.0; 3] };
    let bad_epochs = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut model, &loss, &bad_epochs),
        Err(TrainError::ZeroEpochs)
    ));
    let bad_lr = TrainConfig {
        learning_rate: -1.0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut model, &loss, &bad_lr),
        Err(TrainError::BadLearningRate)
    ));

    // one step gives a two-entry history
    let one = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let h = train(&mut model, &loss, &one).unwrap();
    assert_eq!(h.losses.len(), 2);
}

/// Loss whose gradient keeps pushing the parameter up until the value
/// overflows; training must stop with the epoch index. The reported
/// gradient stays at -1 so the Adam step is a steady unit climb.
struct Explode;

impl Loss<f64, AffineModel> for Explode {
    fn evaluate(&self, model: &AffineModel, grad: Option<&mut [f64]>) -> LossBreakdown<f64> {
        let v = model.w[0].exp();
        if let Some(g) = grad {
            g[0] -= 1.0; // gradient ascent in disguise
        }
        LossBreakdown {
            total: v,
            components: vec![("exp", v)],
        }
    }
}

#[test]
fn divergence_reports_the_epoch() {
    let mut model = AffineModel { w: [0.0; 3] };
    let cfg = TrainConfig {
        learning_rate: 1.0,
        epochs: 2000,
        ..TrainConfig::default()
    };
    match train(&mut model, &Explode, &cfg) {
        Err(TrainError::Diverged { epoch }) => {
            assert!(epoch > 500 && epoch < 1000, "epoch {epoch}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut net = ScaledKan {
            scaler: InputScaler::new(vec![0.0], vec![2.0]).unwrap(),
            net: KanNetwork::<f64>::init(&[1, 3, 1], 5, 3, 11).unwrap(),
        };
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![2.0 * i as f64 / 11.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] - 1.0).powi(2)).collect();
        let loss = DataMse::new(Dataset::new(xs, ys).unwrap()).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &loss, &cfg).unwrap();
        (net.params(), h.totals())
    };
    let (p1, t1) = run();
    let (p2, t2) = run();
    assert_eq!(p1, p2);
    assert_eq!(t1, t2);
    assert!(t1.last().unwrap() < &t1[0]);
}

fn fd_gradient<M: Model<f64>, L: Loss<f64, M>>(model: &M, loss: &L) -> Vec<f64>
where
    M: Clone,
{
    let theta = model.params();
    let mut g = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        let mut up = model.clone();
        let mut t = theta.clone();
        t[i] += h;
        up.set_params(&t);
        let mut dn = model.clone();
        t[i] = theta[i] - h;
        dn.set_params(&t);
        g[i] = (loss.evaluate(&up, None).total - loss.evaluate(&dn, None).total) / (2.0 * h);
    }
    g
}

fn assert_grad_close(analytic: &[f64], fd: &[f64]) {
    for (i, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
        if a.abs() > 1e-8 {
            let rel = (a - f).abs() / a.abs().max(f.abs());
            // absolute floor: central differences with h = 1e-6 on an O(1)
            // loss carry ~1e-10 of roundoff, which dominates rel error for
            // the smallest gated components
            assert!(
                rel <= 1e-4 || (a - f).abs() <= 1e-9,
                "param {i}: analytic {a} vs fd {f} (rel {rel:.2e})"
            );
        }
    }
}

#[test]
fn data_mse_gradient_matches_finite_differences_on_a_scaled_network() {
    let model = ScaledKan {
        scaler: InputScaler::new(vec![0.0, 0.0], vec![2.0, 4.0]).unwrap(),
        net: KanNetwork::<f64>::init(&[2, 3, 1], 4, 3, 21).unwrap(),
    };
    let mut k = 0.37f64;
    let mut next = || {
        k = (k * 997.0 + 0.123).fract();
        k
    };
    let xs: Vec<Vec<f64>> = (0..10).map(|_| vec![2.0 * next(), 4.0 * next()]).collect();
    let ys: Vec<f64> = (0..10).map(|_| 2.0 * next() - 1.0).collect();
    let loss = DataMse::new(Dataset::new(xs, ys).unwrap()).unwrap();
    assert_grad_close(&grad(&loss, &model), &fd_gradient(&model, &loss));
}

fn small_wave_loss() -> WaveLoss<f64> {
    let mut k = 0.61f64;
    let mut next = || {
        k = (k * 883.0 + 0.417).fract();
        k
    };
    let collocation: Vec<[f64; 2]> = (0..8).map(|_| [next(), next()]).collect();
    let ic_points: Vec<f64> = (0..5).map(|_| next()).collect();
    let bc_points: Vec<[f64; 2]> = (0..6)
        .map(|i| [if i % 2 == 0 { 0.0 } else { 1.0 }, next()])
        .collect();
    WaveLoss::new(collocation, ic_points, bc_points, 0.01, 2.0f64.sqrt()).unwrap()
}

#[test]
fn wave_loss_on_the_zero_network_reduces_to_the_initial_profile_energy() {
    let mut net = KanNetwork::<f64>::init(&[2, 3, 1], 5, 3, 5).unwrap();
    net.set_flat_params(&vec![0.0; net.param_count()]).unwrap();
    let loss = small_wave_loss();
    let lb = loss.evaluate(&net, None);

    let u0 = |x: f64| (std::f64::consts::PI * x).sin() + 0.5 * (4.0 * std::f64::consts::PI * x).sin();
    let want: f64 =
        loss.ic_points.iter().map(|&x| u0(x).powi(2)).sum::<f64>() / loss.ic_points.len() as f64;
    assert!((lb.total - want).abs() < 1e-14);
    let by_name: std::collections::HashMap<_, _> = lb.components.iter().copied().collect();
    assert_eq!(by_name["ic"], lb.total);
    assert_eq!(by_name["ic_t"], 0.0);
    assert_eq!(by_name["bc"], 0.0);
    assert_eq!(by_name["residual"], 0.0);
}

#[test]
fn wave_loss_with_zero_residual_weight_ignores_collocation() {
    let net = KanNetwork::<f64>::init(&[2, 3, 1], 5, 3, 6).unwrap();
    let mut a = small_wave_loss();
    a.lambda_res = 0.0;
    let mut b = a.clone();
    b.collocation = vec![[0.123, 0.456]];
    let la = a.evaluate(&net, None);
    let lb = b.evaluate(&net, None);
    assert_eq!(la.total, lb.total);
}

#[test]
fn wave_loss_gradient_matches_finite_differences() {
    let model = ScaledKan {
        scaler: InputScaler::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        net: KanNetwork::<f64>::init(&[2, 3, 1], 4, 3, 33).unwrap(),
    };
    let loss = small_wave_loss();
    assert_grad_close(&grad(&loss, &model), &fd_gradient(&model, &loss));
}

#[test]
fn wave_loss_rejects_empty_point_sets_and_bad_weights() {
    assert!(WaveLoss::<f64>::new(vec![], vec![0.5], vec![[0.0, 0.1]], 0.01, 1.0).is_err());
    assert!(WaveLoss::<f64>::new(vec![[0.5, 0.5]], vec![], vec![[0.0, 0.1]], 0.01, 1.0).is_err());
    assert!(WaveLoss::<f64>::new(vec![[0.5, 0.5]], vec![0.5], vec![], 0.01, 1.0).is_err());
    assert!(WaveLoss::<f64>::new(vec![[0.5, 0.5]], vec![0.5], vec![[0.0, 0.1]], -0.01, 1.0).is_err());
    assert!(
        WaveLoss::<f64>::new(vec![[0.5, 0.5]], vec![0.5], vec![[0.0, 0.1]], f64::NAN, 1.0).is_err()
    );
}
