//! Randomized range finding and SVD.
//!
//! A Gaussian sketch `A * Omega` with `k + p` columns is orthonormalized,
//! refined by `q` rounds of power iteration (re-orthonormalizing after each
//! multiplication by `A^T` and `A`), and the small matrix `Q^T A` is then
//! decomposed exactly.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{fix_signs, svd_dmatrix, DenseMatrix, SvdResult};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsvdConfig {
    pub target_rank: usize,
    pub oversampling: usize,
    pub power_iterations: usize,
    pub seed: u64,
}

impl RsvdConfig {
    pub fn new(target_rank: usize) -> Self {
        RsvdConfig {
            target_rank,
            oversampling: 10,
            power_iterations: 2,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn sketch_size(&self) -> usize {
        self.target_rank + self.oversampling
    }

    fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.target_rank == 0 {
            return Err(Error::InvalidParameter("target rank must be at least 1".into()));
        }
        let limit = rows.min(cols);
        if self.sketch_size() > limit {
            return Err(Error::InvalidParameter(format!(
                "target rank {} + oversampling {} exceeds min(rows, cols) = {limit}",
                self.target_rank, self.oversampling
            )));
        }
        Ok(())
    }
}

/// Orthonormal basis (`k + p` columns) approximating the range of `a`.
pub fn range_finder(a: &DenseMatrix, cfg: &RsvdConfig) -> Result<DenseMatrix> {
    cfg.validate(a.rows(), a.cols())?;
    Ok(DenseMatrix::from_trusted(range_basis(a.as_dmatrix(), cfg)))
}

pub(crate) fn range_basis(a: &DMatrix<f64>, cfg: &RsvdConfig) -> DMatrix<f64> {
    let width = cfg.sketch_size();
    let mut stream = rng::seeded(cfg.seed);
    let draws = (0..a.ncols() * width).map(|_| stream.sample::<f64, _>(StandardNormal));
    // column-major fill order
    let omega = DMatrix::from_iterator(a.ncols(), width, draws);
    let mut q = orthonormalize(a * omega);
    for _ in 0..cfg.power_iterations {
        let z = orthonormalize(a.transpose() * &q);
        q = orthonormalize(a * z);
    }
    q
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Randomized truncated SVD with `cfg.target_rank` modes.
pub fn rsvd(a: &DenseMatrix, cfg: &RsvdConfig) -> Result<SvdResult> {
    cfg.validate(a.rows(), a.cols())?;
    rsvd_dmatrix(a.as_dmatrix(), cfg)
}

pub(crate) fn rsvd_dmatrix(a: &DMatrix<f64>, cfg: &RsvdConfig) -> Result<SvdResult> {
    let q = range_basis(a, cfg);
    let small = q.transpose() * a;
    let inner = svd_dmatrix(&small)?;
    let k = cfg.target_rank;
    let mut u = &q * inner.u.columns(0, k);
    let mut vt = inner.vt.as_dmatrix().rows(0, k).clone_owned();
    fix_signs(&mut u, &mut vt);
    Ok(SvdResult {
        u: DenseMatrix::from_trusted(u),
        singular_values: inner.singular_values[..k].to_vec(),
        vt: DenseMatrix::from_trusted(vt),
        economy: true,
    })
}
