//! Dense linear-algebra kernels and proximity operators.
//!
//! [`DenseMatrix`] is a validated wrapper around a column-major
//! `nalgebra::DMatrix<f64>`: at least one row and column and no NaN or
//! infinite entries. It dereferences to the underlying `DMatrix` so the
//! usual arithmetic and views are available directly.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative cutoff for [`pseudoinverse`].
pub const DEFAULT_RCOND: f64 = 1e-12;

/// Residual column norm below which [`pivoted_qr`] stops and flags rank deficiency.
pub const PIVOT_RESIDUAL_FLOOR: f64 = 1e-12;

/// Sweep budget per singular value for the bidiagonal QR iteration.
const SVD_SWEEPS_PER_VALUE: usize = 75;

/// Relative magnitude an entry must exceed to fix the sign of a singular vector.
const SIGN_ENTRY_REL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct DenseMatrix(DMatrix<f64>);

/// Serialized form: shape plus column-major data.
#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for DenseMatrix {
    type Error = Error;

    fn try_from(repr: MatrixRepr) -> Result<Self> {
        DenseMatrix::from_column_major(repr.rows, repr.cols, repr.data)
    }
}

impl From<DenseMatrix> for MatrixRepr {
    fn from(m: DenseMatrix) -> Self {
        MatrixRepr {
            rows: m.0.nrows(),
            cols: m.0.ncols(),
            data: m.0.as_slice().to_vec(),
        }
    }
}

impl DenseMatrix {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix must have at least one row and column, got {}x{}",
                inner.nrows(),
                inner.ncols()
            )));
        }
        if let Some(pos) = inner.iter().position(|v| !v.is_finite()) {
            let rows = inner.nrows();
            return Err(Error::NonFinite {
                row: pos % rows,
                col: pos / rows,
            });
        }
        Ok(DenseMatrix(inner))
    }

    /// Wraps a matrix produced by finite arithmetic on validated inputs.
    pub(crate) fn from_trusted(inner: DMatrix<f64>) -> Self {
        debug_assert!(inner.nrows() > 0 && inner.ncols() > 0);
        debug_assert!(inner.iter().all(|v| v.is_finite()));
        DenseMatrix(inner)
    }

    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Self::new(DMatrix::from_vec(rows, cols, data))
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch(
                "columns have differing lengths".into(),
            ));
        }
        let data = columns.iter().flatten().copied().collect();
        Self::from_column_major(rows, columns.len(), data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column_vec(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    /// Copies the listed columns, in order, into a new matrix.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("no columns selected".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.cols()) {
            return Err(Error::InvalidParameter(format!(
                "column {bad} out of range for {} columns",
                self.cols()
            )));
        }
        Ok(DenseMatrix(self.0.select_columns(indices)))
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("no rows selected".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows()) {
            return Err(Error::InvalidParameter(format!(
                "row {bad} out of range for {} rows",
                self.rows()
            )));
        }
        Ok(DenseMatrix(self.0.select_rows(indices)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }
}

impl Deref for DenseMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<DenseMatrix> for DMatrix<f64> {
    fn from(m: DenseMatrix) -> Self {
        m.0
    }
}

/// Economy singular value decomposition `A = U diag(s) Vt`.
///
/// Singular values are descending. Each column of `U` has its first
/// significant entry nonnegative (the matching row of `Vt` flips with it).
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub vt: DenseMatrix,
    pub economy: bool,
}

impl SvdResult {
    pub fn rank_count(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(s) Vt`.
    pub fn recompose(&self) -> DenseMatrix {
        let mut us = self.u.as_dmatrix().clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        DenseMatrix::from_trusted(us * self.vt.as_dmatrix())
    }
}

pub fn svd(a: &DenseMatrix) -> Result<SvdResult> {
    svd_dmatrix(a.as_dmatrix())
}

pub(crate) fn svd_dmatrix(a: &DMatrix<f64>) -> Result<SvdResult> {
    let k = a.nrows().min(a.ncols());
    let budget = SVD_SWEEPS_PER_VALUE * k.max(1);
    let decomp = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, budget)
        .ok_or_else(|| {
            Error::NumericalFailure(format!(
                "SVD of {}x{} matrix did not converge within {budget} iterations",
                a.nrows(),
                a.ncols()
            ))
        })?;
    let mut u = decomp.u.expect("left singular vectors requested");
    let mut vt = decomp.v_t.expect("right singular vectors requested");
    let singular_values: Vec<f64> = decomp.singular_values.iter().copied().collect();
    if u.iter().chain(vt.iter()).chain(singular_values.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "SVD produced non-finite factors".into(),
        ));
    }
    fix_signs(&mut u, &mut vt);
    Ok(SvdResult {
        u: DenseMatrix::from_trusted(u),
        singular_values,
        vt: DenseMatrix::from_trusted(vt),
        economy: true,
    })
}

/// Makes the first significant entry of each `U` column nonnegative.
pub(crate) fn fix_signs(u: &mut DMatrix<f64>, vt: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let peak = col.amax();
        if peak == 0.0 {
            continue;
        }
        let lead = col
            .iter()
            .copied()
            .find(|v| v.abs() > SIGN_ENTRY_REL * peak)
            .unwrap_or(0.0);
        if lead < 0.0 {
            u.column_mut(j).neg_mut();
            vt.row_mut(j).neg_mut();
        }
    }
}

/// Greedy column selection from a column-pivoted Householder QR.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotSequence {
    pub pivots: Vec<usize>,
    /// Residual norm of each pivot at the moment it was chosen.
    pub residual_norms: Vec<f64>,
    /// Set when every remaining residual fell below [`PIVOT_RESIDUAL_FLOOR`]
    /// before `max_pivots` columns were chosen.
    pub rank_deficient: bool,
}

/// Column-pivoted QR, stopping after `max_pivots` pivots.
///
/// At each step the unselected column whose component orthogonal to the
/// already-selected columns has the largest 2-norm is chosen; ties go to the
/// lowest column index. Residual norms are recomputed from the reflected
/// trailing block at every step rather than downdated.
pub fn pivoted_qr(a: &DenseMatrix, max_pivots: usize) -> Result<PivotSequence> {
    if max_pivots > a.cols() {
        return Err(Error::InvalidParameter(format!(
            "max_pivots {max_pivots} exceeds column count {}",
            a.cols()
        )));
    }
    let candidates: Vec<usize> = (0..a.cols()).collect();
    Ok(pivot_columns(a.as_dmatrix(), &candidates, max_pivots))
}

/// Pivoted QR restricted to `candidates` (ascending column indices).
pub(crate) fn pivot_columns(a: &DMatrix<f64>, candidates: &[usize], max_pivots: usize) -> PivotSequence {
    let rows = a.nrows();
    let mut work = a.select_columns(candidates);
    let mut open = vec![true; candidates.len()];
    let mut pivots = Vec::with_capacity(max_pivots);
    let mut residual_norms = Vec::with_capacity(max_pivots);
    let mut rank_deficient = false;

    for step in 0..max_pivots {
        if step >= rows {
            rank_deficient = true;
            break;
        }
        let height = rows - step;
        let mut best: Option<(usize, f64)> = None;
        for (c, _) in open.iter().enumerate().filter(|(_, &o)| o) {
            let norm = work.view((step, c), (height, 1)).norm();
            if best.is_none_or(|(_, n)| norm > n) {
                best = Some((c, norm));
            }
        }
        let Some((pick, norm)) = best else {
            rank_deficient = true;
            break;
        };
        if norm < PIVOT_RESIDUAL_FLOOR {
            rank_deficient = true;
            break;
        }

        // Householder reflector mapping the pivot's trailing part onto e_1.
        let mut v: DVector<f64> = work.view((step, pick), (height, 1)).column(0).clone_owned();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            for (c, _) in open.iter().enumerate().filter(|(_, &o)| o) {
                let mut col = work.view_range_mut(step.., c);
                let proj = 2.0 * v.dot(&col) / vnorm2;
                col.axpy(-proj, &v, 1.0);
            }
        }
        open[pick] = false;
        pivots.push(candidates[pick]);
        residual_norms.push(norm);
    }

    PivotSequence {
        pivots,
        residual_norms,
        rank_deficient,
    }
}

/// Moore-Penrose pseudoinverse via SVD; singular values at or below
/// `rcond * s_max` are treated as zero.
pub fn pseudoinverse(a: &DenseMatrix, rcond: f64) -> Result<DenseMatrix> {
    if !(rcond >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rcond must be nonnegative, got {rcond}"
        )));
    }
    let svd = svd(a)?;
    Ok(pseudoinverse_from_svd(&svd, rcond))
}

pub(crate) fn pseudoinverse_from_svd(svd: &SvdResult, rcond: f64) -> DenseMatrix {
    let (n, m) = (svd.u.rows(), svd.vt.cols());
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = rcond * smax;
    let mut out = DMatrix::zeros(m, n);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let v = svd.vt.row(j).transpose();
        let u = svd.u.column(j);
        out.ger(1.0 / s, &v, &u, 1.0);
    }
    DenseMatrix::from_trusted(out)
}

/// Proximity operator of `tau * |.|`: `sign(z) * max(|z| - tau, 0)`.
///
/// # Panics
/// If `tau` is negative or NaN.
pub fn soft_threshold(z: f64, tau: f64) -> f64 {
    assert!(tau >= 0.0, "soft_threshold needs tau >= 0, got {tau}");
    if z > tau {
        z - tau
    } else if z < -tau {
        z + tau
    } else {
        0.0
    }
}

/// Elementwise [`soft_threshold`] of a matrix.
pub fn soft_threshold_matrix(a: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    check_tau(tau)?;
    Ok(DenseMatrix::from_trusted(
        a.as_dmatrix().map(|z| soft_threshold(z, tau)),
    ))
}

pub(crate) fn soft_threshold_in_place(a: &mut DMatrix<f64>, tau: f64) {
    a.apply(|z| *z = soft_threshold(*z, tau));
}

/// Proximity operator of `tau * ||.||_*` (singular value thresholding).
pub fn svt(a: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    check_tau(tau)?;
    let svd = svd(a)?;
    Ok(DenseMatrix::from_trusted(shrink_spectrum(&svd, tau).0))
}

/// `U diag(max(s - tau, 0)) Vt` together with the number of surviving values.
pub(crate) fn shrink_spectrum(svd: &SvdResult, tau: f64) -> (DMatrix<f64>, usize) {
    let keep = svd.singular_values.iter().take_while(|&&s| s > tau).count();
    let (n, m) = (svd.u.rows(), svd.vt.cols());
    if keep == 0 {
        return (DMatrix::zeros(n, m), 0);
    }
    let mut us = svd.u.columns(0, keep).clone_owned();
    for j in 0..keep {
        us.column_mut(j).scale_mut(svd.singular_values[j] - tau);
    }
    (us * svd.vt.as_dmatrix().rows(0, keep), keep)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "threshold must be nonnegative, got {tau}"
        )))
    }
}
