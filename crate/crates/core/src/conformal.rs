//! Split conformal prediction over ensemble statistics.
//!
//! Calibration scores `s_j = |y_j - mean_j| / max(std_j, SIGMA_FLOOR)` are
//! ranked, the `ceil((n+1)(1-alpha))`-th smallest becomes `q_hat`, and test
//! intervals are `mean ± q_hat * max(std, SIGMA_FLOOR)`. With exchangeable
//! calibration and test data this guarantees marginal coverage of at least
//! `1 - alpha`, no matter how badly the ensemble spread is miscalibrated.

use crate::ensemble::EnsembleStats;
use crate::scalar::{from_f64, Scalar};

/// Lower bound applied to every standard deviation, identically in scoring
/// and interval construction; the guarantee survives because the floor is a
/// deterministic transformation of the score function.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum ConformalError {
    #[error("expected {want} targets, got {got}")]
    LengthMismatch { got: usize, want: usize },
    #[error("calibration targets must be finite")]
    NonFiniteTarget,
    #[error("at least one score/interval is required")]
    EmptyScores,
    #[error("miscoverage alpha must lie strictly between 0 and 1")]
    BadAlpha,
    #[error("interval widths are infinite (calibration set too small for alpha)")]
    InfiniteWidth,
}

/// `s_j = |y_j - mean_j| / max(std_j, SIGMA_FLOOR)`.
pub fn nonconformity_scores<S: Scalar>(
    stats: &[EnsembleStats<S>],
    targets: &[S],
) -> Result<Vec<S>, ConformalError> {
    if stats.len() != targets.len() {
        return Err(ConformalError::LengthMismatch {
            got: targets.len(),
            want: stats.len(),
        });
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(ConformalError::NonFiniteTarget);
    }
    let floor = from_f64::<S>(SIGMA_FLOOR);
    Ok(stats
        .iter()
        .zip(targets)
        .map(|(st, &y)| (y - st.mean).abs() / st.std.max(floor))
        .collect())
}

/// `k = ceil((n + 1)(1 - alpha))`, clamped to at least 1. The product is
/// nudged down by 1e-9 before the ceiling so that mathematically integral
/// values (for example `100 * 0.9`) are not pushed to the next rank by the
/// upward rounding of the binary representation.
pub fn quantile_rank(n_cal: usize, alpha: f64) -> usize {
    let raw = (n_cal as f64 + 1.0) * (1.0 - alpha);
    ((raw - 1e-9).ceil() as usize).max(1)
}

/// The `k`-th smallest score, or `+inf` when `k > n` (the calibration set is
/// too small for the requested miscoverage and only the whole real line
/// carries the guarantee).
pub fn conformal_quantile<S: Scalar>(scores: &[S], alpha: f64) -> Result<S, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyScores);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::BadAlpha);
    }
    let k = quantile_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(S::infinity());
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("scores must be comparable"));
    Ok(sorted[k - 1])
}

/// Frozen outcome of Algorithm 1 on one calibration set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalCalibration<S> {
    pub miscoverage_alpha: f64,
    pub n_cal: usize,
    pub sorted_scores: Vec<S>,
    pub q_hat: S,
}

impl<S: Scalar> ConformalCalibration<S> {
    pub fn calibrate(
        stats: &[EnsembleStats<S>],
        targets: &[S],
        alpha: f64,
    ) -> Result<Self, ConformalError> {
        let mut scores = nonconformity_scores(stats, targets)?;
        let q_hat = conformal_quantile(&scores, alpha)?;
        scores.sort_unstable_by(|a, b| a.partial_cmp(b).expect("scores must be comparable"));
        Ok(ConformalCalibration {
            miscoverage_alpha: alpha,
            n_cal: scores.len(),
            sorted_scores: scores,
            q_hat,
        })
    }

    /// True when the quantile rule forced `q_hat = +inf`; callers surface
    /// this as a calibration-too-small warning.
    pub fn calibration_too_small(&self) -> bool {
        !self.q_hat.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval<S> {
    pub lower: S,
    pub upper: S,
}

impl<S: Scalar> PredictionInterval<S> {
    pub fn width(&self) -> S {
        (self.upper - self.lower).abs()
    }

    /// Endpoint-inclusive membership.
    pub fn contains(&self, y: S) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// `[mean - q_hat * max(std, SIGMA_FLOOR), mean + q_hat * max(std, SIGMA_FLOOR)]`.
pub fn conformal_interval<S: Scalar>(
    stats: &EnsembleStats<S>,
    q_hat: S,
) -> PredictionInterval<S> {
    let half = q_hat * stats.std.max(from_f64::<S>(SIGMA_FLOOR));
    PredictionInterval {
        lower: stats.mean - half,
        upper: stats.mean + half,
    }
}

/// Fraction of targets inside their interval, endpoints inclusive.
pub fn coverage<S: Scalar>(
    intervals: &[PredictionInterval<S>],
    targets: &[S],
) -> Result<S, ConformalError> {
    if intervals.is_empty() {
        return Err(ConformalError::EmptyScores);
    }
    if intervals.len() != targets.len() {
        return Err(ConformalError::LengthMismatch {
            got: targets.len(),
            want: intervals.len(),
        });
    }
    let hits = intervals
        .iter()
        .zip(targets)
        .filter(|(iv, &y)| iv.contains(y))
        .count();
    Ok(from_f64::<S>(hits as f64 / intervals.len() as f64))
}

/// Mean and population standard deviation of the interval widths; infinite
/// intervals are reported as an error rather than averaged away.
pub fn piw_stats<S: Scalar>(
    intervals: &[PredictionInterval<S>],
) -> Result<(S, S), ConformalError> {
    if intervals.is_empty() {
        return Err(ConformalError::EmptyScores);
    }
    let widths: Vec<S> = intervals.iter().map(|iv| iv.width()).collect();
    if widths.iter().any(|w| !w.is_finite()) {
        return Err(ConformalError::InfiniteWidth);
    }
    let n = from_f64::<S>(widths.len() as f64);
    let mean = widths.iter().fold(S::zero(), |acc, &w| acc + w) / n;
    let var = widths
        .iter()
        .fold(S::zero(), |acc, &w| acc + (w - mean) * (w - mean))
        / n;
    Ok((mean, var.sqrt()))
}
