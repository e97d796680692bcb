//! Versioned JSON persistence for trained ensembles and calibration
//! records. Floats travel as shortest-round-trip decimals, so a save/load
//! cycle reproduces every parameter bit-for-bit; structural invariants are
//! re-checked on load because checkpoints are plain editable text.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conformal::ConformalCalibration;
use crate::ensemble::Ensemble;
use crate::experiments::{ExperimentSpec, ModelKind, TrainedEnsemble};
use crate::fbkan::FbkanModel;
use crate::mfkan::MfkanModel;
use crate::network::{KanNetwork, ScaledKan};

/// Version stamp of every file this module writes.
pub const FORMAT_VERSION: u32 = 1;
/// Bin count of the score histogram embedded in calibration records.
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {got} (this build reads {FORMAT_VERSION})")]
    Version { got: u32 },
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

fn check_version(got: u32) -> Result<(), CheckpointError> {
    if got == FORMAT_VERSION {
        Ok(())
    } else {
        Err(CheckpointError::Version { got })
    }
}

// ---------------------------------------------------------------------------
// Calibration records
// ---------------------------------------------------------------------------

/// Equal-width histogram of nonconformity scores over `[0, max]`; the first
/// bin is closed, later bins are `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ScoreHistogram {
    pub fn from_scores(scores: &[f64], bins: usize) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        let max = scores
            .iter()
            .copied()
            .filter(|s| s.is_finite())
            .fold(0.0_f64, f64::max);
        let hi = if max > 0.0 { max } else { 1.0 };
        let edges = (0..=bins)
            .map(|i| hi * i as f64 / bins as f64)
            .collect();
        let mut counts = vec![0usize; bins];
        for &s in scores.iter().filter(|s| s.is_finite()) {
            let idx = ((s / hi * bins as f64).ceil() as usize).max(1) - 1;
            counts[idx.min(bins - 1)] += 1;
        }
        ScoreHistogram { edges, counts }
    }
}

/// The serialized form of a conformal calibration: level, size, quantile
/// (absent when the calibration set was too small), the raw sorted scores,
/// their histogram, and any warnings raised while calibrating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub format_version: u32,
    pub alpha: f64,
    pub n_cal: usize,
    pub q_hat: Option<f64>,
    pub sorted_scores: Vec<f64>,
    pub histogram: ScoreHistogram,
    pub warnings: Vec<String>,
}

impl CalibrationRecord {
    pub fn from_calibration(cal: &ConformalCalibration<f64>) -> Self {
        let mut warnings = Vec::new();
        let q_hat = if cal.q_hat.is_finite() {
            Some(cal.q_hat)
        } else {
            warnings.push(format!(
                "calibration set of {} points cannot support alpha = {}: \
                 conformal intervals cover the whole line",
                cal.n_cal, cal.miscoverage_alpha
            ));
            None
        };
        CalibrationRecord {
            format_version: FORMAT_VERSION,
            alpha: cal.miscoverage_alpha,
            n_cal: cal.n_cal,
            q_hat,
            sorted_scores: cal.sorted_scores.clone(),
            histogram: ScoreHistogram::from_scores(&cal.sorted_scores, HISTOGRAM_BINS),
            warnings,
        }
    }

    pub fn to_calibration(&self) -> ConformalCalibration<f64> {
        ConformalCalibration {
            miscoverage_alpha: self.alpha,
            n_cal: self.n_cal,
            sorted_scores: self.sorted_scores.clone(),
            q_hat: self.q_hat.unwrap_or(f64::INFINITY),
        }
    }
}

pub fn save_calibration_record(
    path: &Path,
    record: &CalibrationRecord,
) -> Result<(), CheckpointError> {
    fs::write(path, serde_json::to_string_pretty(record)?)?;
    Ok(())
}

pub fn load_calibration_record(path: &Path) -> Result<CalibrationRecord, CheckpointError> {
    let record: CalibrationRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_version(record.format_version)?;
    if !(record.alpha > 0.0 && record.alpha < 1.0) {
        return Err(CheckpointError::Invalid(
            "calibration alpha must lie in (0, 1)".into(),
        ));
    }
    if record.sorted_scores.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(CheckpointError::Invalid(
            "calibration scores must be sorted ascending".into(),
        ));
    }
    Ok(record)
}

// ---------------------------------------------------------------------------
// Ensemble checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MemberModel {
    Kan(ScaledKan<f64>),
    Fbkan(FbkanModel<f64>),
    Mfkan(MfkanModel<f64>),
}

#[derive(Serialize, Deserialize)]
struct MemberFile {
    format_version: u32,
    kind: ModelKind,
    model: MemberModel,
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    format_version: u32,
    kind: ModelKind,
    spec: ExperimentSpec,
    member_seeds: Vec<u64>,
    member_files: Vec<String>,
}

/// Writes one JSON file per member plus a manifest naming them all;
/// returns the manifest path.
pub fn save_ensemble(
    dir: &Path,
    stem: &str,
    ensemble: &TrainedEnsemble,
    spec: &ExperimentSpec,
) -> Result<PathBuf, CheckpointError> {
    let kind = ensemble.kind();
    let (seeds, models): (Vec<u64>, Vec<MemberModel>) = match ensemble {
        TrainedEnsemble::Kan(e) => (
            e.member_seeds.clone(),
            e.members.iter().cloned().map(MemberModel::Kan).collect(),
        ),
        TrainedEnsemble::Fbkan(e) => (
            e.member_seeds.clone(),
            e.members.iter().cloned().map(MemberModel::Fbkan).collect(),
        ),
        TrainedEnsemble::Mfkan(e) => (
            e.member_seeds.clone(),
            e.members.iter().cloned().map(MemberModel::Mfkan).collect(),
        ),
    };
    let mut member_files = Vec::with_capacity(models.len());
    for (j, model) in models.into_iter().enumerate() {
        let name = format!("{stem}_member_{j}.json");
        let file = MemberFile {
            format_version: FORMAT_VERSION,
            kind,
            model,
        };
        fs::write(dir.join(&name), serde_json::to_string(&file)?)?;
        member_files.push(name);
    }
    let manifest = EnsembleManifest {
        format_version: FORMAT_VERSION,
        kind,
        spec: spec.clone(),
        member_seeds: seeds,
        member_files,
    };
    let path = dir.join(format!("{stem}_manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads a manifest and its member files, re-checking every structural
/// invariant the constructors normally enforce.
pub fn load_ensemble(
    manifest_path: &Path,
) -> Result<(TrainedEnsemble, ExperimentSpec), CheckpointError> {
    let manifest: EnsembleManifest =
        serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    check_version(manifest.format_version)?;
    if manifest.member_files.len() != manifest.member_seeds.len() {
        return Err(CheckpointError::Invalid(format!(
            "manifest lists {} member files but {} seeds",
            manifest.member_files.len(),
            manifest.member_seeds.len()
        )));
    }
    if manifest.member_files.is_empty() {
        return Err(CheckpointError::Invalid("manifest lists no members".into()));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut models = Vec::with_capacity(manifest.member_files.len());
    for name in &manifest.member_files {
        let file: MemberFile = serde_json::from_str(&fs::read_to_string(dir.join(name))?)?;
        check_version(file.format_version)?;
        if file.kind != manifest.kind {
            return Err(CheckpointError::Invalid(format!(
                "member {name} has kind {} but the manifest says {}",
                file.kind, manifest.kind
            )));
        }
        models.push(file.model);
    }

    macro_rules! collect_members {
        ($variant:ident, $validate:expr) => {{
            let mut members = Vec::with_capacity(models.len());
            for (model, name) in models.into_iter().zip(&manifest.member_files) {
                let MemberModel::$variant(m) = model else {
                    return Err(CheckpointError::Invalid(format!(
                        "member {name} does not match the manifest model kind"
                    )));
                };
                #[allow(clippy::redundant_closure_call)]
                ($validate)(&m).map_err(|e: String| {
                    CheckpointError::Invalid(format!("member {name}: {e}"))
                })?;
                members.push(m);
            }
            Ensemble {
                members,
                member_seeds: manifest.member_seeds,
            }
        }};
    }

    let ensemble = match manifest.kind {
        ModelKind::Kan => TrainedEnsemble::Kan(collect_members!(Kan, validate_scaled)),
        ModelKind::Fbkan => TrainedEnsemble::Fbkan(collect_members!(Fbkan, validate_fbkan)),
        ModelKind::Mfkan => TrainedEnsemble::Mfkan(collect_members!(Mfkan, validate_mfkan)),
    };
    Ok((ensemble, manifest.spec))
}

// ---------------------------------------------------------------------------
// Structural validation of loaded models
// ---------------------------------------------------------------------------

fn validate_network(net: &KanNetwork<f64>) -> Result<(), String> {
    if net.widths.len() < 2 {
        return Err("network needs at least input and output widths".into());
    }
    if net.layers.len() != net.widths.len() - 1 {
        return Err("layer count does not match the width chain".into());
    }
    for (i, layer) in net.layers.iter().enumerate() {
        if layer.in_width != net.widths[i] || layer.out_width != net.widths[i + 1] {
            return Err(format!("layer {i} widths disagree with the width chain"));
        }
        layer
            .grid
            .validate()
            .map_err(|e| format!("layer {i} grid: {e}"))?;
        if layer.edges.len() != layer.in_width * layer.out_width {
            return Err(format!("layer {i} edge count mismatch"));
        }
        for (e, edge) in layer.edges.iter().enumerate() {
            if edge.coeffs.len() != layer.grid.basis_count() {
                return Err(format!("layer {i} edge {e} coefficient count mismatch"));
            }
            let finite = edge.coeffs.iter().all(|c| c.is_finite())
                && edge.w_b.is_finite()
                && edge.w_s.is_finite();
            if !finite {
                return Err(format!("layer {i} edge {e} has non-finite parameters"));
            }
        }
    }
    Ok(())
}

fn validate_scaled(model: &ScaledKan<f64>) -> Result<(), String> {
    if model.scaler.dims() != model.net.in_width() {
        return Err("input scaler dimension does not match the network".into());
    }
    for d in 0..model.scaler.dims() {
        if !(model.scaler.lo[d] < model.scaler.hi[d]) {
            return Err(format!("scaler bounds inverted in dimension {d}"));
        }
    }
    validate_network(&model.net)
}

fn validate_fbkan(model: &FbkanModel<f64>) -> Result<(), String> {
    let decomp = &model.decomposition;
    if decomp.subdomains.is_empty() || decomp.len() != model.kans.len() {
        return Err("subdomain and member network counts disagree".into());
    }
    let expected: usize = decomp.per_dim_counts.iter().product();
    if expected != decomp.len() {
        return Err("per-dimension counts do not factor the subdomain count".into());
    }
    for sub in &decomp.subdomains {
        if sub.center.len() != decomp.domain.dims() || sub.half_width.len() != decomp.domain.dims()
        {
            return Err("subdomain dimension mismatch".into());
        }
        if sub.half_width.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err("subdomain half-widths must be positive".into());
        }
    }
    for (j, kan) in model.kans.iter().enumerate() {
        if kan.in_width() != decomp.domain.dims() {
            return Err(format!("member {j} input width mismatch"));
        }
        validate_network(kan).map_err(|e| format!("member {j}: {e}"))?;
    }
    Ok(())
}

fn validate_mfkan(model: &MfkanModel<f64>) -> Result<(), String> {
    validate_scaled(&model.kan_low).map_err(|e| format!("low-fidelity stage: {e}"))?;
    validate_network(&model.kan_linear).map_err(|e| format!("linear branch: {e}"))?;
    validate_network(&model.kan_nonlinear).map_err(|e| format!("nonlinear branch: {e}"))?;
    let z_dim = model.kan_low.net.in_width() + model.kan_low.net.out_width();
    if model.kan_linear.in_width() != z_dim || model.kan_nonlinear.in_width() != z_dim {
        return Err("correction branches must take the concatenated input".into());
    }
    if model.z_scaler.dims() != z_dim {
        return Err("concatenation scaler dimension mismatch".into());
    }
    if !model.mixing_alpha.is_finite() || !(0.0..=1.0).contains(&model.mixing_alpha) {
        return Err("mixing weight must be finite in [0, 1]".into());
    }
    Ok(())
}
