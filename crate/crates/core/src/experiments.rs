//! The four benchmark experiments: target functions and exact solutions,
//! i.i.d. dataset splits, per-experiment defaults, the full
//! train-calibrate-evaluate pipeline, and the ablation grids.
//!
//! Everything here pins `f64`; the generic core stays scalar-agnostic.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    conformal_interval, coverage, piw_stats, ConformalCalibration, ConformalError,
    PredictionInterval,
};
use crate::ensemble::{
    ensemble_stats, sigma_interval, train_ensemble, Ensemble, EnsembleError, EnsembleStats,
};
use crate::fbkan::{uniform_decomposition, FbkanError, FbkanModel};
use crate::jet::{Jet2, JetAdjoint};
use crate::mfkan::{train_low_fidelity, HfLoss, MfkanError, MfkanModel};
use crate::model::{DomainBox, Model};
use crate::network::{KanNetwork, NetworkError, ScaledKan};
use crate::train::{DataMse, Dataset, TrainConfig, TrainError, TrainHistory, WaveLoss};

/// Width multiplier of the heuristic ensemble interval.
pub const SIGMA_KAPPA: f64 = 1.96;
/// Wave speed of experiment 4.
pub const WAVE_SPEED: f64 = SQRT_2;
/// Independent calibration redraws per grid point of the calibration-size
/// ablation; the redraw scatter is the fluctuation the sweep measures.
pub const CALIBRATION_REDRAWS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown experiment id {0:?} (expected exp1..exp4)")]
    UnknownId(String),
    #[error("{model} is not a model kind of {id}")]
    IncompatibleModel { id: ExperimentId, model: ModelKind },
    #[error("invalid experiment spec: {0}")]
    BadSpec(&'static str),
    #[error("ablation grid is empty")]
    EmptyGrid,
    #[error("the subdomain sweep is defined for one-dimensional experiments")]
    SweepNeedsOneDim,
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Fbkan(#[from] FbkanError),
    #[error(transparent)]
    Mfkan(#[from] MfkanError),
}

// ---------------------------------------------------------------------------
// Target functions and exact solutions
// ---------------------------------------------------------------------------

/// Experiment 1 target: `exp(sin(0.3 pi x^2))` on `[0, 2]`.
pub fn f1(x: f64) -> f64 {
    (0.3 * PI * x * x).sin().exp()
}

/// Experiment 2 target: `sin(6 pi x^2) sin(8 pi y^2)` on `[0, 1]^2`.
pub fn f2(x: f64, y: f64) -> f64 {
    (6.0 * PI * x * x).sin() * (8.0 * PI * y * y).sin()
}

/// Experiment 3 low-fidelity jump function on `[0, 1]`; the left branch
/// owns `x = 0.5` and the branch constants differ by `0.3`.
pub fn f_low(x: f64) -> f64 {
    let base = 0.5 * (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin() + 10.0 * (x - 0.5);
    let shift = if x <= 0.5 { -5.0 } else { -2.0 };
    0.1 * (base + shift)
}

/// Experiment 3 high-fidelity function, linearly correlated with the
/// low-fidelity one.
pub fn f_high(x: f64) -> f64 {
    2.0 * f_low(x) - 2.0 * x + 2.0
}

/// Exact standing-wave solution of `f_tt = c^2 f_xx` with the experiment's
/// initial and boundary conditions.
pub fn wave_exact(x: f64, t: f64, c: f64) -> f64 {
    (PI * x).sin() * (c * PI * t).cos() + 0.5 * (4.0 * PI * x).sin() * (4.0 * c * PI * t).cos()
}

/// The exact wave solution as a parameterless [`Model`], exposing analytic
/// jets; used to cross-check the physics loss and the jet machinery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactWaveField {
    c: f64,
}

impl ExactWaveField {
    pub fn new(c: f64) -> Self {
        ExactWaveField { c }
    }
}

impl Model<f64> for ExactWaveField {
    fn in_width(&self) -> usize {
        2
    }
    fn out_width(&self) -> usize {
        1
    }
    fn param_count(&self) -> usize {
        0
    }
    fn params(&self) -> Vec<f64> {
        Vec::new()
    }
    fn set_params(&mut self, flat: &[f64]) {
        assert!(flat.is_empty(), "the exact field has no parameters");
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        vec![wave_exact(x[0], x[1], self.c)]
    }
    fn forward_jet(&self, x: &[f64], dims: &[usize]) -> Vec<Jet2<f64>> {
        let c = self.c;
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (s4x, c4x) = (4.0 * PI * x[0]).sin_cos();
        let (st, ct) = (c * PI * x[1]).sin_cos();
        let (s4t, c4t) = (4.0 * c * PI * x[1]).sin_cos();
        let mut d1 = Vec::with_capacity(dims.len());
        let mut d2 = Vec::with_capacity(dims.len());
        for &dim in dims {
            match dim {
                0 => {
                    d1.push(PI * cx * ct + 2.0 * PI * c4x * c4t);
                    d2.push(-PI * PI * sx * ct - 8.0 * PI * PI * s4x * c4t);
                }
                1 => {
                    d1.push(-c * PI * sx * st - 2.0 * c * PI * s4x * s4t);
                    d2.push(-c * c * PI * PI * sx * ct - 8.0 * c * c * PI * PI * s4x * c4t);
                }
                other => panic!("wave field has two inputs, got dim {other}"),
            }
        }
        vec![Jet2 {
            value: wave_exact(x[0], x[1], c),
            d1,
            d2,
        }]
    }
    fn backward_jet(&self, _x: &[f64], _dims: &[usize], _adj: &[JetAdjoint<f64>], _grad: &mut [f64]) {
    }
}

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
        };
        f.write_str(s)
    }
}

impl FromStr for ExperimentId {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp1" => Ok(ExperimentId::Exp1),
            "exp2" => Ok(ExperimentId::Exp2),
            "exp3" => Ok(ExperimentId::Exp3),
            "exp4" => Ok(ExperimentId::Exp4),
            other => Err(ExperimentError::UnknownId(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kan,
    Fbkan,
    Mfkan,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Kan => "kan",
            ModelKind::Fbkan => "fbkan",
            ModelKind::Mfkan => "mfkan",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kan" => Ok(ModelKind::Kan),
            "fbkan" => Ok(ModelKind::Fbkan),
            "mfkan" => Ok(ModelKind::Mfkan),
            other => Err(ExperimentError::UnknownId(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Ensemble,
    Conformal,
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IntervalKind::Ensemble => "ensemble",
            IntervalKind::Conformal => "conformal",
        };
        f.write_str(s)
    }
}

/// The model kinds each experiment compares.
pub fn experiment_model_kinds(id: ExperimentId) -> &'static [ModelKind] {
    match id {
        ExperimentId::Exp1 | ExperimentId::Exp2 | ExperimentId::Exp4 => {
            &[ModelKind::Kan, ModelKind::Fbkan]
        }
        ExperimentId::Exp3 => &[ModelKind::Mfkan],
    }
}

/// Full description of one experiment run. Every hyperparameter appears
/// here explicitly, so a serialized spec is a complete record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub model: ModelKind,
    pub ensemble_size: usize,
    /// Per-dimension subdomain counts (FBKAN only).
    pub subdomains: Vec<usize>,
    pub overlap_fraction: f64,
    /// Main network widths; for MFKAN these are the nonlinear branch widths.
    pub kan_widths: Vec<usize>,
    /// FBKAN member widths.
    pub member_widths: Vec<usize>,
    pub intervals: usize,
    pub degree: usize,
    /// Supervised training points (high-fidelity points for exp3; for exp4
    /// the informational total of the three physics point sets below).
    pub train_size: usize,
    pub cal_size: usize,
    pub test_size: usize,
    pub miscoverage_alpha: f64,
    pub data_seed: u64,
    pub base_seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    // multi-fidelity settings (exp3)
    pub lf_train_size: usize,
    pub lf_widths: Vec<usize>,
    pub lf_epochs: usize,
    pub lf_seed: u64,
    pub lambda_alpha: f64,
    pub exponent_n: u32,
    pub linear_weight_w: f64,
    // physics settings (exp4)
    pub collocation_size: usize,
    pub ic_size: usize,
    pub bc_size: usize,
    pub lambda_res: f64,
}

impl ExperimentSpec {
    /// The per-experiment defaults. A serialized spec overrides any subset
    /// of these; the config echo records whatever was actually used.
    pub fn defaults(id: ExperimentId, model: ModelKind) -> Self {
        let mut spec = ExperimentSpec {
            id,
            model,
            ensemble_size: 4,
            subdomains: Vec::new(),
            overlap_fraction: 0.25,
            kan_widths: Vec::new(),
            member_widths: Vec::new(),
            intervals: 5,
            degree: 3,
            train_size: 0,
            cal_size: 0,
            test_size: 0,
            miscoverage_alpha: 0.05,
            data_seed: 42,
            base_seed: 0,
            learning_rate: 1e-2,
            epochs: 2000,
            lf_train_size: 0,
            lf_widths: Vec::new(),
            lf_epochs: 0,
            lf_seed: 1000,
            lambda_alpha: 0.0,
            exponent_n: 1,
            linear_weight_w: 0.0,
            collocation_size: 0,
            ic_size: 0,
            bc_size: 0,
            lambda_res: 0.0,
        };
        match id {
            ExperimentId::Exp1 => {
                spec.subdomains = vec![10];
                spec.kan_widths = vec![1, 5, 1];
                spec.member_widths = vec![1, 3, 1];
                spec.train_size = 400;
                spec.cal_size = 500;
                spec.test_size = 1000;
                // mid-training budget: ensemble members still share the
                // unlearned residual, reproducing raw under-coverage
                spec.learning_rate = 3e-3;
                spec.epochs = 1500;
            }
            ExperimentId::Exp2 => {
                spec.subdomains = vec![2, 2];
                spec.kan_widths = vec![2, 5, 1];
                spec.member_widths = vec![2, 3, 1];
                spec.train_size = 2000;
                spec.cal_size = 1000;
                spec.test_size = 1000;
                spec.epochs = 5000;
            }
            ExperimentId::Exp3 => {
                spec.ensemble_size = 5;
                spec.kan_widths = vec![2, 3, 1];
                spec.train_size = 5;
                spec.cal_size = 40;
                spec.test_size = 200;
                spec.lf_train_size = 120;
                spec.lf_widths = vec![1, 5, 1];
                spec.lf_epochs = 2000;
                spec.lambda_alpha = 1e-4;
                spec.exponent_n = 4;
                spec.linear_weight_w = 0.0;
            }
            ExperimentId::Exp4 => {
                spec.ensemble_size = 10;
                spec.subdomains = vec![2, 2];
                spec.kan_widths = vec![2, 5, 5, 1];
                spec.member_widths = vec![2, 5, 5, 1];
                spec.train_size = 1000;
                spec.cal_size = 1200;
                spec.test_size = 10000;
                spec.epochs = 5000;
                spec.collocation_size = 600;
                spec.ic_size = 200;
                spec.bc_size = 200;
                spec.lambda_res = 0.01;
            }
        }
        spec
    }

    /// Input domain of the experiment (`(x, t)` for the wave problem).
    pub fn domain(&self) -> DomainBox<f64> {
        let (lo, hi) = match self.id {
            ExperimentId::Exp1 => (vec![0.0], vec![2.0]),
            ExperimentId::Exp2 | ExperimentId::Exp4 => (vec![0.0; 2], vec![1.0; 2]),
            ExperimentId::Exp3 => (vec![0.0], vec![1.0]),
        };
        DomainBox::new(lo, hi).expect("experiment domains are well-formed")
    }

    fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs,
            seed: self.base_seed,
            full_batch: true,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !experiment_model_kinds(self.id).contains(&self.model) {
            return Err(ExperimentError::IncompatibleModel {
                id: self.id,
                model: self.model,
            });
        }
        let dims = self.domain().dims();
        if self.ensemble_size < 2 {
            return Err(ExperimentError::BadSpec("ensemble size must be at least 2"));
        }
        if !(self.miscoverage_alpha > 0.0 && self.miscoverage_alpha < 1.0) {
            return Err(ExperimentError::BadSpec("alpha must lie in (0, 1)"));
        }
        if self.cal_size == 0 || self.test_size == 0 {
            return Err(ExperimentError::BadSpec(
                "calibration and test sets must be non-empty",
            ));
        }
        if self.epochs == 0 {
            return Err(ExperimentError::BadSpec("epochs must be positive"));
        }
        match self.model {
            ModelKind::Kan => {
                if self.kan_widths.first() != Some(&dims) {
                    return Err(ExperimentError::BadSpec(
                        "network input width must match the domain dimension",
                    ));
                }
            }
            ModelKind::Fbkan => {
                if self.member_widths.first() != Some(&dims) {
                    return Err(ExperimentError::BadSpec(
                        "member input width must match the domain dimension",
                    ));
                }
                if self.subdomains.len() != dims || self.subdomains.iter().any(|&l| l == 0) {
                    return Err(ExperimentError::BadSpec(
                        "subdomain counts must be positive, one per dimension",
                    ));
                }
            }
            ModelKind::Mfkan => {
                if self.lf_train_size == 0 || self.lf_epochs == 0 {
                    return Err(ExperimentError::BadSpec(
                        "the low-fidelity stage needs data and epochs",
                    ));
                }
            }
        }
        match self.id {
            ExperimentId::Exp4 => {
                if self.collocation_size == 0 || self.ic_size == 0 || self.bc_size == 0 {
                    return Err(ExperimentError::BadSpec(
                        "the physics experiment needs all three point sets",
                    ));
                }
            }
            _ => {
                if self.train_size == 0 {
                    return Err(ExperimentError::BadSpec("training set must be non-empty"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Training point sets for the physics-informed wave experiment: interior
/// collocation points, initial-condition abscissas (`t = 0` implied), and
/// boundary points alternating between the two walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveTrainingSet {
    pub collocation: Vec<[f64; 2]>,
    pub ic_points: Vec<f64>,
    pub bc_points: Vec<[f64; 2]>,
}

/// One experiment's data: disjoint i.i.d. splits drawn from a single seeded
/// stream in a fixed order (low-fidelity, train/physics, calibration, test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Dataset<f64>,
    pub calibration: Dataset<f64>,
    pub test: Dataset<f64>,
    pub lf_train: Option<Dataset<f64>>,
    pub wave: Option<WaveTrainingSet>,
    pub seed: u64,
}

fn draw_points(rng: &mut ChaCha8Rng, domain: &DomainBox<f64>, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            (0..domain.dims())
                .map(|d| rng.random_range(domain.lo[d]..domain.hi[d]))
                .collect()
        })
        .collect()
}

fn labeled(points: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64) -> Dataset<f64> {
    let ys = points.iter().map(|x| f(x)).collect();
    Dataset::new(points, ys).expect("matching lengths by construction")
}

/// The target labeling each experiment's calibration/test points.
fn target_fn(id: ExperimentId) -> fn(&[f64]) -> f64 {
    match id {
        ExperimentId::Exp1 => |x: &[f64]| f1(x[0]),
        ExperimentId::Exp2 => |x: &[f64]| f2(x[0], x[1]),
        ExperimentId::Exp3 => |x: &[f64]| f_high(x[0]),
        ExperimentId::Exp4 => |x: &[f64]| wave_exact(x[0], x[1], WAVE_SPEED),
    }
}

/// Draws all splits for a spec; identical specs yield identical splits.
pub fn sample_dataset(spec: &ExperimentSpec) -> Result<DatasetSplit, ExperimentError> {
    spec.validate()?;
    let domain = spec.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.data_seed);
    let target = target_fn(spec.id);

    let mut lf_train = None;
    let mut wave = None;
    let train = match spec.id {
        ExperimentId::Exp3 => {
            lf_train = Some(labeled(
                draw_points(&mut rng, &domain, spec.lf_train_size),
                |x| f_low(x[0]),
            ));
            labeled(draw_points(&mut rng, &domain, spec.train_size), target)
        }
        ExperimentId::Exp4 => {
            let collocation = draw_points(&mut rng, &domain, spec.collocation_size)
                .into_iter()
                .map(|p| [p[0], p[1]])
                .collect();
            let ic_points = (0..spec.ic_size)
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let bc_points = (0..spec.bc_size)
                .map(|i| [(i % 2) as f64, rng.random_range(0.0..1.0)])
                .collect();
            wave = Some(WaveTrainingSet {
                collocation,
                ic_points,
                bc_points,
            });
            Dataset::new(Vec::new(), Vec::new()).expect("empty dataset is well-formed")
        }
        _ => labeled(draw_points(&mut rng, &domain, spec.train_size), target),
    };

    let calibration = labeled(draw_points(&mut rng, &domain, spec.cal_size), target);
    let test = labeled(draw_points(&mut rng, &domain, spec.test_size), target);

    Ok(DatasetSplit {
        train,
        calibration,
        test,
        lf_train,
        wave,
        seed: spec.data_seed,
    })
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// One row of the coverage/width tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: ModelKind,
    pub intervals_kind: IntervalKind,
    pub coverage: f64,
    pub avg_piw: f64,
    pub std_piw: f64,
    pub alpha: f64,
    pub n_cal: usize,
    pub ensemble_size: usize,
    pub subdomain_count: usize,
    pub seed: u64,
    /// Set when the calibration set was too small and the conformal
    /// intervals cover the whole line.
    pub infinite_width: bool,
}

/// One test point's prediction record (conformal interval endpoints; the
/// heuristic interval is reconstructible from `mean`/`std`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPointRow {
    pub x: Vec<f64>,
    pub y_true: f64,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

/// The trained members of one experiment run, tagged by model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedEnsemble {
    Kan(Ensemble<ScaledKan<f64>>),
    Fbkan(Ensemble<FbkanModel<f64>>),
    Mfkan(Ensemble<MfkanModel<f64>>),
}

impl TrainedEnsemble {
    pub fn size(&self) -> usize {
        match self {
            TrainedEnsemble::Kan(e) => e.size(),
            TrainedEnsemble::Fbkan(e) => e.size(),
            TrainedEnsemble::Mfkan(e) => e.size(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedEnsemble::Kan(_) => ModelKind::Kan,
            TrainedEnsemble::Fbkan(_) => ModelKind::Fbkan,
            TrainedEnsemble::Mfkan(_) => ModelKind::Mfkan,
        }
    }

    pub fn stats(&self, x: &[f64]) -> EnsembleStats<f64> {
        match self {
            TrainedEnsemble::Kan(e) => ensemble_stats(e, x),
            TrainedEnsemble::Fbkan(e) => ensemble_stats(e, x),
            TrainedEnsemble::Mfkan(e) => ensemble_stats(e, x),
        }
    }
}

/// Everything a single-model experiment run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub spec: ExperimentSpec,
    pub rows: Vec<ResultRow>,
    pub per_point: Vec<PerPointRow>,
    pub calibration: ConformalCalibration<f64>,
    pub histories: Vec<TrainHistory<f64>>,
    pub ensemble: TrainedEnsemble,
    /// Trained mixing weights, one per member (MFKAN runs only).
    pub trained_alphas: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

fn subdomain_count(spec: &ExperimentSpec) -> usize {
    if spec.model == ModelKind::Fbkan {
        spec.subdomains.iter().product()
    } else {
        1
    }
}

/// Scores a trained ensemble against the calibration split.
pub fn calibrate_ensemble(
    spec: &ExperimentSpec,
    split: &DatasetSplit,
    ensemble: &TrainedEnsemble,
) -> Result<ConformalCalibration<f64>, ExperimentError> {
    let targets: Vec<f64> = split.calibration.iter().map(|(_, y)| y).collect();
    let stats: Vec<EnsembleStats<f64>> = split
        .calibration
        .iter()
        .map(|(x, _)| ensemble.stats(x))
        .collect();
    Ok(ConformalCalibration::calibrate(
        &stats,
        &targets,
        spec.miscoverage_alpha,
    )?)
}

/// Evaluates heuristic and conformal intervals on the test split, yielding
/// the two table rows and the per-point dump.
pub fn evaluate_on_test(
    spec: &ExperimentSpec,
    split: &DatasetSplit,
    ensemble: &TrainedEnsemble,
    calibration: &ConformalCalibration<f64>,
) -> Result<(Vec<ResultRow>, Vec<PerPointRow>), ExperimentError> {
    let test_targets: Vec<f64> = split.test.iter().map(|(_, y)| y).collect();
    let test_stats: Vec<EnsembleStats<f64>> =
        split.test.iter().map(|(x, _)| ensemble.stats(x)).collect();

    let sigma: Vec<PredictionInterval<f64>> = test_stats
        .iter()
        .map(|s| {
            let (lower, upper) = sigma_interval(s, SIGMA_KAPPA);
            PredictionInterval { lower, upper }
        })
        .collect();
    let conformal: Vec<PredictionInterval<f64>> = test_stats
        .iter()
        .map(|s| conformal_interval(s, calibration.q_hat))
        .collect();

    let (sig_avg, sig_std) = piw_stats(&sigma)?;
    let infinite = calibration.calibration_too_small();
    let (conf_avg, conf_std) = if infinite {
        (f64::INFINITY, f64::INFINITY)
    } else {
        piw_stats(&conformal)?
    };

    let base_row = |kind, cov, avg, std, inf| ResultRow {
        model: spec.model,
        intervals_kind: kind,
        coverage: cov,
        avg_piw: avg,
        std_piw: std,
        alpha: calibration.miscoverage_alpha,
        n_cal: calibration.n_cal,
        ensemble_size: spec.ensemble_size,
        subdomain_count: subdomain_count(spec),
        seed: spec.base_seed,
        infinite_width: inf,
    };
    let rows = vec![
        base_row(
            IntervalKind::Ensemble,
            coverage(&sigma, &test_targets)?,
            sig_avg,
            sig_std,
            false,
        ),
        base_row(
            IntervalKind::Conformal,
            coverage(&conformal, &test_targets)?,
            conf_avg,
            conf_std,
            infinite,
        ),
    ];

    let per_point = split
        .test
        .iter()
        .zip(test_stats.iter().zip(&conformal))
        .map(|((x, y), (stats, iv))| PerPointRow {
            x: x.to_vec(),
            y_true: y,
            mean: stats.mean,
            std: stats.std,
            lower: iv.lower,
            upper: iv.upper,
            covered: iv.contains(y),
        })
        .collect();

    Ok((rows, per_point))
}

type Trained = (TrainedEnsemble, Vec<TrainHistory<f64>>, Option<Vec<f64>>);

fn train_kan(spec: &ExperimentSpec, split: &DatasetSplit) -> Result<Trained, ExperimentError> {
    let scaler = spec.domain().scaler();
    // surface architecture errors before the factory is allowed to unwrap
    KanNetwork::<f64>::init(&spec.kan_widths, spec.intervals, spec.degree, 0)?;
    let factory = |seed: u64| ScaledKan {
        scaler: scaler.clone(),
        net: KanNetwork::init(&spec.kan_widths, spec.intervals, spec.degree, seed)
            .expect("architecture validated above"),
    };
    let cfg = spec.train_config(spec.epochs);
    let (ensemble, histories) = match spec.id {
        ExperimentId::Exp4 => {
            let loss = wave_loss(spec, split)?;
            train_ensemble(&factory, &loss, &cfg, spec.ensemble_size, spec.base_seed)?
        }
        _ => {
            let loss = DataMse::new(split.train.clone())?;
            train_ensemble(&factory, &loss, &cfg, spec.ensemble_size, spec.base_seed)?
        }
    };
    Ok((TrainedEnsemble::Kan(ensemble), histories, None))
}

fn train_fbkan(spec: &ExperimentSpec, split: &DatasetSplit) -> Result<Trained, ExperimentError> {
    let decomposition = uniform_decomposition(
        &spec.domain(),
        &spec.subdomains,
        spec.overlap_fraction,
    )?;
    FbkanModel::<f64>::init(
        decomposition.clone(),
        &spec.member_widths,
        spec.intervals,
        spec.degree,
        0,
    )?;
    let factory = |seed: u64| {
        FbkanModel::init(
            decomposition.clone(),
            &spec.member_widths,
            spec.intervals,
            spec.degree,
            seed,
        )
        .expect("architecture validated above")
    };
    let cfg = spec.train_config(spec.epochs);
    let (ensemble, histories) = match spec.id {
        ExperimentId::Exp4 => {
            let loss = wave_loss(spec, split)?;
            train_ensemble(&factory, &loss, &cfg, spec.ensemble_size, spec.base_seed)?
        }
        _ => {
            let loss = DataMse::new(split.train.clone())?;
            train_ensemble(&factory, &loss, &cfg, spec.ensemble_size, spec.base_seed)?
        }
    };
    Ok((TrainedEnsemble::Fbkan(ensemble), histories, None))
}

fn train_mfkan(spec: &ExperimentSpec, split: &DatasetSplit) -> Result<Trained, ExperimentError> {
    let lf_dataset = split
        .lf_train
        .as_ref()
        .expect("exp3 split carries low-fidelity data");
    // one shared low-fidelity network, pretrained once; the ensemble varies
    // only the correction stage
    let lf_cfg = TrainConfig {
        learning_rate: spec.learning_rate,
        epochs: spec.lf_epochs,
        seed: spec.lf_seed,
        full_batch: true,
    };
    let kan_low = train_low_fidelity(
        lf_dataset,
        &spec.domain(),
        &spec.lf_widths,
        spec.intervals,
        spec.degree,
        spec.lf_seed,
        &lf_cfg,
    )?;
    MfkanModel::new(
        kan_low.clone(),
        &spec.kan_widths,
        spec.intervals,
        spec.degree,
        0,
    )?;
    let factory = |seed: u64| {
        MfkanModel::new(
            kan_low.clone(),
            &spec.kan_widths,
            spec.intervals,
            spec.degree,
            seed,
        )
        .expect("architecture validated above")
    };
    let loss = HfLoss::new(
        split.train.clone(),
        spec.lambda_alpha,
        spec.exponent_n,
        spec.linear_weight_w,
    )?;
    let cfg = spec.train_config(spec.epochs);
    let (ensemble, histories) =
        train_ensemble(&factory, &loss, &cfg, spec.ensemble_size, spec.base_seed)?;
    let alphas = ensemble.members.iter().map(|m| m.mixing_alpha).collect();
    Ok((TrainedEnsemble::Mfkan(ensemble), histories, Some(alphas)))
}

/// Trains the spec's ensemble on the given split (no calibration yet).
pub fn train_models(
    spec: &ExperimentSpec,
    split: &DatasetSplit,
) -> Result<Trained, ExperimentError> {
    spec.validate()?;
    match spec.model {
        ModelKind::Kan => train_kan(spec, split),
        ModelKind::Fbkan => train_fbkan(spec, split),
        ModelKind::Mfkan => train_mfkan(spec, split),
    }
}

fn wave_loss(
    spec: &ExperimentSpec,
    split: &DatasetSplit,
) -> Result<WaveLoss<f64>, ExperimentError> {
    let wave = split.wave.as_ref().expect("exp4 split carries physics sets");
    Ok(WaveLoss::new(
        wave.collocation.clone(),
        wave.ic_points.clone(),
        wave.bc_points.clone(),
        spec.lambda_res,
        WAVE_SPEED,
    )?)
}

/// Samples the spec's data, trains its ensemble, calibrates, and evaluates.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, ExperimentError> {
    let split = sample_dataset(spec)?;
    let (ensemble, histories, trained_alphas) = train_models(spec, &split)?;
    let calibration = calibrate_ensemble(spec, &split, &ensemble)?;
    let (rows, per_point) = evaluate_on_test(spec, &split, &ensemble, &calibration)?;
    Ok(ExperimentOutcome {
        spec: spec.clone(),
        rows,
        per_point,
        calibration,
        histories,
        ensemble,
        trained_alphas,
    })
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    EnsembleSize,
    Subdomains,
    CalibrationSize,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AblationAxis::EnsembleSize => "ensemble_size",
            AblationAxis::Subdomains => "subdomains",
            AblationAxis::CalibrationSize => "calibration_size",
        };
        f.write_str(s)
    }
}

impl FromStr for AblationAxis {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ensemble_size" => Ok(AblationAxis::EnsembleSize),
            "subdomains" => Ok(AblationAxis::Subdomains),
            "calibration_size" => Ok(AblationAxis::CalibrationSize),
            other => Err(ExperimentError::UnknownId(other.to_string())),
        }
    }
}

/// Reruns (or re-calibrates) the base spec along one axis, emitting the
/// table rows behind the appendix figures.
pub fn run_ablation(
    axis: AblationAxis,
    grid: &[usize],
    base: &ExperimentSpec,
) -> Result<Vec<ResultRow>, ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let mut rows = Vec::new();
    match axis {
        AblationAxis::EnsembleSize => {
            for &m in grid {
                let mut spec = base.clone();
                spec.ensemble_size = m;
                rows.extend(run_experiment(&spec)?.rows);
            }
        }
        AblationAxis::Subdomains => {
            if base.domain().dims() != 1 {
                return Err(ExperimentError::SweepNeedsOneDim);
            }
            for &l in grid {
                let mut spec = base.clone();
                spec.subdomains = vec![l];
                rows.extend(run_experiment(&spec)?.rows);
            }
        }
        AblationAxis::CalibrationSize => {
            // train once, then redraw the calibration set at each size; the
            // test set and its ensemble statistics stay fixed
            let outcome = run_experiment(base)?;
            let split = sample_dataset(base)?;
            let test_targets: Vec<f64> = split.test.iter().map(|(_, y)| y).collect();
            let test_stats: Vec<EnsembleStats<f64>> = split
                .test
                .iter()
                .map(|(x, _)| outcome.ensemble.stats(x))
                .collect();
            let domain = base.domain();
            let target = target_fn(base.id);
            for &n in grid {
                if n == 0 {
                    return Err(ExperimentError::BadSpec(
                        "calibration sizes must be positive",
                    ));
                }
                for r in 0..CALIBRATION_REDRAWS {
                    let redraw_seed = base.data_seed + 100_000 + r as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(redraw_seed);
                    let cal = labeled(draw_points(&mut rng, &domain, n), target);
                    let cal_targets: Vec<f64> = cal.iter().map(|(_, y)| y).collect();
                    let cal_stats: Vec<EnsembleStats<f64>> =
                        cal.iter().map(|(x, _)| outcome.ensemble.stats(x)).collect();
                    let calibration = ConformalCalibration::calibrate(
                        &cal_stats,
                        &cal_targets,
                        base.miscoverage_alpha,
                    )?;
                    let intervals: Vec<PredictionInterval<f64>> = test_stats
                        .iter()
                        .map(|s| conformal_interval(s, calibration.q_hat))
                        .collect();
                    let infinite = calibration.calibration_too_small();
                    let (avg, std) = if infinite {
                        (f64::INFINITY, f64::INFINITY)
                    } else {
                        piw_stats(&intervals)?
                    };
                    rows.push(ResultRow {
                        model: base.model,
                        intervals_kind: IntervalKind::Conformal,
                        coverage: coverage(&intervals, &test_targets)?,
                        avg_piw: avg,
                        std_piw: std,
                        alpha: base.miscoverage_alpha,
                        n_cal: n,
                        ensemble_size: base.ensemble_size,
                        subdomain_count: subdomain_count(base),
                        seed: redraw_seed,
                        infinite_width: infinite,
                    });
                }
            }
        }
    }
    Ok(rows)
}
