//! Uniform B-spline bases on a bounded domain.
//!
//! A [`KnotGrid`] covers `[domain_lo, domain_hi]` with `intervals` uniform
//! cells and extends `degree` extra uniformly spaced knots past each end, so
//! every domain point is covered by a full set of `degree + 1` active basis
//! functions and the basis forms a partition of unity on the whole domain.
//! Points outside the domain evaluate the polynomial extension of the
//! boundary pieces rather than clamping.

use serde::{Deserialize, Serialize};

use crate::scalar::{from_f64, Scalar};

/// Largest supported spline degree. Keeps the per-point evaluation buffers on
/// the stack.
pub const MAX_DEGREE: usize = 5;

pub(crate) const MAX_LOCAL: usize = MAX_DEGREE + 1;

#[derive(Debug, thiserror::Error)]
pub enum SplineError {
    #[error("invalid domain: lo={0} must be strictly below hi={1}")]
    InvalidDomain(f64, f64),
    #[error("grid needs at least one interval")]
    ZeroIntervals,
    #[error("degree {0} exceeds the supported maximum of {MAX_DEGREE}")]
    DegreeTooLarge(usize),
    #[error("domain too small for the requested grid resolution")]
    DegenerateGrid,
    #[error("non-finite evaluation point")]
    NonFiniteInput,
    #[error("coefficient count {got} does not match basis count {want}")]
    CoefficientCount { got: usize, want: usize },
    #[error("grid extension must not coarsen: {new} < {old} intervals")]
    Coarsening { new: usize, old: usize },
    #[error("derivative order {0} exceeds 2")]
    OrderTooLarge(usize),
    #[error("least-squares refit failed: {0}")]
    Refit(String),
}

/// Knot vector of a uniform B-spline basis.
///
/// Holds `intervals + 2 * degree + 1` strictly increasing knots;
/// `knots[degree]` and `knots[degree + intervals]` are exactly the domain
/// endpoints. The basis has `intervals + degree` functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid<S> {
    domain_lo: S,
    domain_hi: S,
    intervals: usize,
    degree: usize,
    knots: Vec<S>,
}

impl<S: Scalar> KnotGrid<S> {
    pub fn domain_lo(&self) -> S {
        self.domain_lo
    }

    pub fn domain_hi(&self) -> S {
        self.domain_hi
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[S] {
        &self.knots
    }

    /// Number of basis functions: `intervals + degree`.
    pub fn basis_count(&self) -> usize {
        self.intervals + self.degree
    }

    /// Uniform knot step.
    pub fn step(&self) -> S {
        (self.domain_hi - self.domain_lo) / from_f64::<S>(self.intervals as f64)
    }

    /// Re-checks the structural invariants; used when loading checkpoints.
    pub(crate) fn validate(&self) -> Result<(), SplineError> {
        if !(self.domain_lo < self.domain_hi) {
            return Err(SplineError::InvalidDomain(
                self.domain_lo.to_f64().unwrap_or(f64::NAN),
                self.domain_hi.to_f64().unwrap_or(f64::NAN),
            ));
        }
        if self.intervals == 0 {
            return Err(SplineError::ZeroIntervals);
        }
        if self.degree > MAX_DEGREE {
            return Err(SplineError::DegreeTooLarge(self.degree));
        }
        if self.knots.len() != self.intervals + 2 * self.degree + 1
            || self.knots[self.degree] != self.domain_lo
            || self.knots[self.degree + self.intervals] != self.domain_hi
            || self.knots.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(SplineError::DegenerateGrid);
        }
        Ok(())
    }
}

/// Builds the uniform knot grid for the given domain, cell count and degree.
pub fn build_grid<S: Scalar>(
    lo: S,
    hi: S,
    intervals: usize,
    degree: usize,
) -> Result<KnotGrid<S>, SplineError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(SplineError::InvalidDomain(
            lo.to_f64().unwrap_or(f64::NAN),
            hi.to_f64().unwrap_or(f64::NAN),
        ));
    }
    if intervals == 0 {
        return Err(SplineError::ZeroIntervals);
    }
    if degree > MAX_DEGREE {
        return Err(SplineError::DegreeTooLarge(degree));
    }
    let h = (hi - lo) / from_f64::<S>(intervals as f64);
    let total = intervals + 2 * degree + 1;
    let mut knots = Vec::with_capacity(total);
    for i in 0..total {
        let offset = i as isize - degree as isize;
        knots.push(lo + S::from_isize(offset).unwrap() * h);
    }
    // pin the domain endpoints exactly; the formula can be off by an ulp
    knots[degree] = lo;
    knots[degree + intervals] = hi;
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SplineError::DegenerateGrid);
    }
    Ok(KnotGrid {
        domain_lo: lo,
        domain_hi: hi,
        intervals,
        degree,
        knots,
    })
}

/// The `degree + 1` basis functions active at a point, with derivative rows.
///
/// `rows[m][r]` is the order-`m` derivative of basis function `start + r`.
/// Out-of-domain points use the span pinned to the nearest domain cell, which
/// evaluates the polynomial extension of the boundary pieces.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalBasis<S> {
    pub start: usize,
    pub len: usize,
    pub rows: [[S; MAX_LOCAL]; 4],
}

#[inline]
fn find_span<S: Scalar>(grid: &KnotGrid<S>, x: S) -> usize {
    let k = grid.degree;
    let g = grid.intervals;
    if x <= grid.domain_lo {
        return k;
    }
    if x >= grid.domain_hi {
        return k + g - 1;
    }
    let idx = ((x - grid.domain_lo) / grid.step())
        .to_f64()
        .unwrap()
        .floor() as usize;
    k + idx.min(g - 1)
}

/// Evaluates the active basis functions and their derivatives up to
/// `max_order <= 3` at `x`. Orders above the degree are identically zero.
pub(crate) fn local_basis<S: Scalar>(grid: &KnotGrid<S>, x: S, max_order: usize) -> LocalBasis<S> {
    debug_assert!(max_order <= 3);
    let k = grid.degree;
    let t = grid.knots.as_slice();
    let span = find_span(grid, x);

    // Triangular Cox-de Boor pass; after the degree-d iteration n[r] holds
    // the degree-d value of basis function span - d + r. Rows for the lower
    // degrees needed by the derivative recurrence are snapshotted on the way.
    let mut n = [S::zero(); MAX_LOCAL];
    n[0] = S::one();
    let mut left = [S::zero(); MAX_LOCAL];
    let mut right = [S::zero(); MAX_LOCAL];
    let mut value_rows = [[S::zero(); MAX_LOCAL]; 4]; // degrees k-3..k clamped at 0
    let lowest_kept = k.saturating_sub(3);
    if lowest_kept == 0 {
        value_rows[0][0] = S::one();
    }
    for d in 1..=k {
        left[d] = x - t[span + 1 - d];
        right[d] = t[span + d] - x;
        let mut saved = S::zero();
        for r in 0..d {
            let denom = right[r + 1] + left[d - r];
            let tmp = n[r] / denom;
            n[r] = saved + right[r + 1] * tmp;
            saved = left[d - r] * tmp;
        }
        n[d] = saved;
        if d >= lowest_kept {
            value_rows[d - lowest_kept][..=d].copy_from_slice(&n[..=d]);
        }
    }

    let mut out = LocalBasis {
        start: span - k,
        len: k + 1,
        rows: [[S::zero(); MAX_LOCAL]; 4],
    };
    out.rows[0][..=k].copy_from_slice(&n[..=k]);

    // Derivative rows: climb from the degree-(k - m) values back up to degree
    // k, gaining one derivative order per step of
    //   B'_{i,d} = d * (B_{i,d-1}/(t_{i+d}-t_i) - B_{i+1,d-1}/(t_{i+d+1}-t_{i+1})).
    for m in 1..=max_order.min(k) {
        let d0 = k - m;
        let mut row = [S::zero(); MAX_LOCAL];
        row[..=d0].copy_from_slice(&value_rows[d0 - lowest_kept][..=d0]);
        for d in (d0 + 1)..=k {
            let mut next = [S::zero(); MAX_LOCAL];
            let scale = S::from_usize(d).unwrap();
            for r in 0..=d {
                let i = span - d + r;
                let mut v = S::zero();
                if r >= 1 {
                    v += row[r - 1] / (t[i + d] - t[i]);
                }
                if r < d {
                    v -= row[r] / (t[i + d + 1] - t[i + 1]);
                }
                next[r] = scale * v;
            }
            row = next;
        }
        out.rows[m][..=k].copy_from_slice(&row[..=k]);
    }
    out
}

/// Dense basis vector (length [`KnotGrid::basis_count`]) at `x`.
pub fn eval_basis<S: Scalar>(grid: &KnotGrid<S>, x: S) -> Result<Vec<S>, SplineError> {
    if !x.is_finite() {
        return Err(SplineError::NonFiniteInput);
    }
    let local = local_basis(grid, x, 0);
    let mut dense = vec![S::zero(); grid.basis_count()];
    dense[local.start..local.start + local.len].copy_from_slice(&local.rows[0][..local.len]);
    Ok(dense)
}

/// Dense basis values and derivatives: `out[i][m]` is the order-`m`
/// derivative of basis function `i`, for `m <= max_order <= 2`.
pub fn eval_basis_derivs<S: Scalar>(
    grid: &KnotGrid<S>,
    x: S,
    max_order: usize,
) -> Result<Vec<Vec<S>>, SplineError> {
    if !x.is_finite() {
        return Err(SplineError::NonFiniteInput);
    }
    if max_order > 2 {
        return Err(SplineError::OrderTooLarge(max_order));
    }
    let local = local_basis(grid, x, max_order);
    let mut dense = vec![vec![S::zero(); max_order + 1]; grid.basis_count()];
    for r in 0..local.len {
        for m in 0..=max_order {
            dense[local.start + r][m] = local.rows[m][r];
        }
    }
    Ok(dense)
}

/// Refits a spline onto a finer grid over the same domain and degree.
///
/// Solves a least-squares fit of the new basis to the current spline over
/// `max(10 * new_basis_count, 200)` equispaced domain samples, so the refit
/// error is at the solver's precision wherever the coarse spline is
/// representable in the finer space (always, for nested uniform grids the
/// refit is near-exact in practice).
pub fn extend_grid<S: Scalar>(
    grid: &KnotGrid<S>,
    coeffs: &[S],
    new_intervals: usize,
) -> Result<(KnotGrid<S>, Vec<S>), SplineError> {
    if coeffs.len() != grid.basis_count() {
        return Err(SplineError::CoefficientCount {
            got: coeffs.len(),
            want: grid.basis_count(),
        });
    }
    if new_intervals < grid.intervals {
        return Err(SplineError::Coarsening {
            new: new_intervals,
            old: grid.intervals,
        });
    }
    let fine = build_grid(grid.domain_lo, grid.domain_hi, new_intervals, grid.degree)?;
    let n_new = fine.basis_count();
    let samples = (10 * n_new).max(200);

    // Assemble and solve in f64; the fit precision is f64-bounded either way.
    let lo = grid.domain_lo.to_f64().unwrap();
    let hi = grid.domain_hi.to_f64().unwrap();
    let grid64 = build_grid(lo, hi, grid.intervals, grid.degree)?;
    let fine64 = build_grid(lo, hi, new_intervals, grid.degree)?;
    let coeffs64: Vec<f64> = coeffs.iter().map(|c| c.to_f64().unwrap()).collect();

    let mut a = nalgebra::DMatrix::<f64>::zeros(samples, n_new);
    let mut b = nalgebra::DVector::<f64>::zeros(samples);
    for s in 0..samples {
        let x = lo + (hi - lo) * s as f64 / (samples - 1) as f64;
        let new_local = local_basis(&fine64, x, 0);
        for r in 0..new_local.len {
            a[(s, new_local.start + r)] = new_local.rows[0][r];
        }
        let old_local = local_basis(&grid64, x, 0);
        let mut v = 0.0;
        for r in 0..old_local.len {
            v += old_local.rows[0][r] * coeffs64[old_local.start + r];
        }
        b[s] = v;
    }
    let svd = nalgebra::SVD::new(a, true, true);
    let sol = svd
        .solve(&b, 1e-12)
        .map_err(|e| SplineError::Refit(e.to_string()))?;
    let new_coeffs: Vec<S> = sol.iter().map(|&c| from_f64(c)).collect();
    Ok((fine, new_coeffs))
}
