//! Principal component pursuit and rank selection.
//!
//! [`pcp`] splits a data matrix into a low-rank part and a sparse outlier
//! part with the inexact augmented Lagrange multiplier method.
//! [`optimal_rank`] applies the Gavish-Donoho hard threshold to a spectrum,
//! and [`truncate_basis`] keeps the leading left singular vectors as a
//! [`FeatureBasis`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{shrink_spectrum, soft_threshold_in_place, svd_dmatrix, DenseMatrix, SvdResult};
use crate::randomized::{rsvd_dmatrix, RsvdConfig};
use crate::rng;

/// Ratio between the penalty cap and its starting value.
pub const MU_MAX_FACTOR: f64 = 1e7;

/// Extra modes requested above the previous iterate's rank in randomized mode.
const RANK_HEADROOM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvdMode {
    Exact,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcpConfig {
    /// Sparsity weight; `None` uses `1 / sqrt(max(n, m))`.
    pub lambda: Option<f64>,
    /// Initial penalty; `None` uses `1.25 / ||X||_2` (see [`default_mu0`]).
    pub mu0: Option<f64>,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub svd_mode: SvdMode,
    /// Seeds the sketches when `svd_mode` is randomized.
    pub seed: u64,
}

impl Default for PcpConfig {
    fn default() -> Self {
        PcpConfig {
            lambda: None,
            mu0: None,
            rho: 1.5,
            tol: 1e-7,
            max_iter: 500,
            svd_mode: SvdMode::Exact,
            seed: 0,
        }
    }
}

impl PcpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.rho > 1.0) || !self.rho.is_finite() {
            return bad(format!("rho must exceed 1, got {}", self.rho));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        if let Some(mu) = self.mu0 {
            if !(mu > 0.0) || !mu.is_finite() {
                return bad(format!("mu0 must be positive, got {mu}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustDecomposition {
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// `||X - L - S||_F / ||X||_F` after the last iteration.
    pub final_residual: f64,
    pub lambda: f64,
    pub mu0: f64,
    pub mu_max: f64,
    /// Relative constraint residual after each iteration.
    pub residual_history: Vec<f64>,
    /// Penalty used in each iteration.
    pub mu_history: Vec<f64>,
    /// Rank of the low-rank iterate in each iteration.
    pub rank_history: Vec<usize>,
}

impl RobustDecomposition {
    /// Fraction of entries of the sparse part that are nonzero.
    pub fn sparsity(&self) -> f64 {
        let nonzero = self.sparse.iter().filter(|v| **v != 0.0).count();
        nonzero as f64 / self.sparse.len() as f64
    }
}

pub fn default_lambda(rows: usize, cols: usize) -> f64 {
    1.0 / (rows.max(cols) as f64).sqrt()
}

/// `1.25 / ||X||_2`, the usual inexact-ALM starting penalty.
///
/// Starting this low keeps the first singular value thresholds near the
/// top of the spectrum, so the increasing penalty sweeps the outliers into
/// `S` before `L` can absorb them.
pub fn default_mu0(spectral_norm: f64) -> f64 {
    1.25 / spectral_norm
}

/// `n m / (4 ||X||_1)`, a penalty suited to fixed-penalty ALM.
///
/// With the default `rho = 1.5` schedule this starts so high that the
/// iteration becomes feasible within a dozen steps while `L` still holds
/// most of the outliers; pass it as `mu0` only with `rho` close to 1.
pub fn mean_abs_mu0(x: &DenseMatrix) -> f64 {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    (x.rows() * x.cols()) as f64 / (4.0 * l1)
}

/// Principal component pursuit `X = L + S` by inexact ALM.
///
/// Each iteration performs
/// `L <- svt(X - S + Y/mu, 1/mu)`, `S <- shrink(X - L + Y/mu, lambda/mu)`,
/// `Y <- Y + mu (X - L - S)` and `mu <- min(rho mu, mu_max)`, stopping once the
/// relative residual reaches `tol`. Running out of iterations is reported
/// through `converged == false`, not as an error.
pub fn pcp(x: &DenseMatrix, cfg: &PcpConfig) -> Result<RobustDecomposition> {
    cfg.validate()?;
    let (n, m) = (x.rows(), x.cols());
    let data = x.as_dmatrix();
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(n, m));
    let l1: f64 = data.iter().map(|v| v.abs()).sum();
    let xnorm = data.norm();

    if l1 == 0.0 || xnorm == 0.0 {
        return Ok(RobustDecomposition {
            low_rank: DenseMatrix::from_trusted(DMatrix::zeros(n, m)),
            sparse: DenseMatrix::from_trusted(DMatrix::zeros(n, m)),
            iterations: 0,
            converged: true,
            final_residual: 0.0,
            lambda,
            mu0: cfg.mu0.unwrap_or(0.0),
            mu_max: 0.0,
            residual_history: Vec::new(),
            mu_history: Vec::new(),
            rank_history: Vec::new(),
        });
    }

    let mu0 = match cfg.mu0 {
        Some(mu) => mu,
        None => default_mu0(svd_dmatrix(data)?.singular_values[0]),
    };
    let mu_max = MU_MAX_FACTOR * mu0;
    let mut mu = mu0;
    let mut low = DMatrix::zeros(n, m);
    let mut sparse = DMatrix::zeros(n, m);
    let mut dual = DMatrix::zeros(n, m);
    let mut rank = 0;

    let mut residual_history = Vec::new();
    let mut mu_history = Vec::new();
    let mut rank_history = Vec::new();
    let mut converged = false;

    for iter in 0..cfg.max_iter {
        let inv_mu = 1.0 / mu;
        let target = data - &sparse + &dual * inv_mu;
        let (l_next, r) = svt_step(&target, inv_mu, cfg, rank, iter)?;
        low = l_next;
        rank = r;

        let mut s_next = data - &low + &dual * inv_mu;
        soft_threshold_in_place(&mut s_next, lambda * inv_mu);
        sparse = s_next;

        let gap = data - &low - &sparse;
        dual += &gap * mu;
        let residual = gap.norm() / xnorm;

        residual_history.push(residual);
        mu_history.push(mu);
        rank_history.push(rank);
        mu = (cfg.rho * mu).min(mu_max);

        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    if !low.iter().chain(sparse.iter()).all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure(
            "principal component pursuit diverged to non-finite values".into(),
        ));
    }

    Ok(RobustDecomposition {
        low_rank: DenseMatrix::from_trusted(low),
        sparse: DenseMatrix::from_trusted(sparse),
        iterations: residual_history.len(),
        converged,
        final_residual: residual_history.last().copied().unwrap_or(0.0),
        lambda,
        mu0,
        mu_max,
        residual_history,
        mu_history,
        rank_history,
    })
}

fn svt_step(
    target: &DMatrix<f64>,
    tau: f64,
    cfg: &PcpConfig,
    prev_rank: usize,
    iter: usize,
) -> Result<(DMatrix<f64>, usize)> {
    let full = target.nrows().min(target.ncols());
    if cfg.svd_mode == SvdMode::Exact {
        return Ok(shrink_spectrum(&svd_dmatrix(target)?, tau));
    }
    let mut guess = (prev_rank + RANK_HEADROOM).min(full);
    loop {
        let oversampling = 10.min(full - guess);
        if guess >= full || oversampling == 0 {
            return Ok(shrink_spectrum(&svd_dmatrix(target)?, tau));
        }
        let sketch = RsvdConfig {
            target_rank: guess,
            oversampling,
            power_iterations: 2,
            seed: rng::derive_seed(cfg.seed, &["pcp", &iter.to_string(), &guess.to_string()]),
        };
        let svd = rsvd_dmatrix(target, &sketch)?;
        let above = svd.singular_values.iter().filter(|&&s| s > tau).count();
        if above < guess {
            return Ok(shrink_spectrum(&svd, tau));
        }
        guess = (2 * guess).min(full);
    }
}

/// `lambda(beta) = sqrt(2(beta+1) + 8 beta / ((beta+1) + sqrt(beta^2 + 14 beta + 1)))`,
/// the known-noise threshold coefficient for aspect ratio `beta`.
pub fn lambda_star(beta: f64) -> f64 {
    let denom = (beta + 1.0) + (beta * beta + 14.0 * beta + 1.0).sqrt();
    (2.0 * (beta + 1.0) + 8.0 * beta / denom).sqrt()
}

/// Unknown-noise coefficient `lambda(beta) / sqrt(median of Marchenko-Pastur(beta))`.
pub fn omega(beta: f64) -> f64 {
    lambda_star(beta) / marchenko_pastur_median(beta).sqrt()
}

const MP_QUADRATURE_TOL: f64 = 1e-8;

/// Median of the Marchenko-Pastur law with aspect ratio `beta` in (0, 1]
/// and unit variance.
///
/// The CDF is evaluated after substituting `t = a + (b - a) sin^2(theta)`,
/// which removes the square-root endpoint behaviour (and the `1/sqrt(t)`
/// singularity at `beta = 1`), using adaptive Simpson quadrature to 1e-8.
/// The median is then found by bisection in `theta`.
pub fn marchenko_pastur_median(beta: f64) -> f64 {
    assert!(beta > 0.0 && beta <= 1.0, "aspect ratio must lie in (0, 1], got {beta}");
    let lo = (1.0 - beta.sqrt()).powi(2);
    let hi = (1.0 + beta.sqrt()).powi(2);
    let width = hi - lo;
    let density = move |theta: f64| {
        let (s, c) = theta.sin_cos();
        let t = lo + width * s * s;
        if t == 0.0 {
            // beta = 1 at theta = 0; the s^2 / t factor tends to 1 / width
            return width * c * c / (std::f64::consts::PI * beta);
        }
        width * width * s * s * c * c / (std::f64::consts::PI * beta * t)
    };
    let cdf = |theta: f64| adaptive_simpson(&density, 0.0, theta, MP_QUADRATURE_TOL);

    let (mut a, mut b) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if cdf(mid) < 0.5 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let theta = 0.5 * (a + b);
    lo + width * theta.sin().powi(2)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 40)
}

/// Gavish-Donoho hard threshold for an `n x m` spectrum.
///
/// With known noise level `sigma` the threshold is
/// `lambda(beta) sqrt(max(n, m)) sigma`; otherwise it is
/// `omega(beta) median(singular_values)`, with `beta = min(n,m) / max(n,m)`.
pub fn hard_threshold(singular_values: &[f64], n: usize, m: usize, sigma: Option<f64>) -> Result<f64> {
    check_spectrum(singular_values)?;
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("matrix dimensions must be positive".into()));
    }
    let (small, large) = (n.min(m) as f64, n.max(m) as f64);
    let beta = small / large;
    match sigma {
        Some(s) if s >= 0.0 && s.is_finite() => Ok(lambda_star(beta) * large.sqrt() * s),
        Some(s) => Err(Error::InvalidParameter(format!("noise level must be nonnegative, got {s}"))),
        None => {
            if singular_values.is_empty() {
                return Ok(0.0);
            }
            Ok(omega(beta) * median(singular_values))
        }
    }
}

/// Number of singular values strictly above the Gavish-Donoho threshold.
pub fn optimal_rank(singular_values: &[f64], n: usize, m: usize, sigma: Option<f64>) -> Result<usize> {
    check_spectrum(singular_values)?;
    if singular_values.iter().all(|&s| s == 0.0) {
        return Ok(0);
    }
    let tau = hard_threshold(singular_values, n, m, sigma)?;
    Ok(singular_values.iter().filter(|&&s| s > tau).count())
}

fn check_spectrum(values: &[f64]) -> Result<()> {
    if values.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidParameter(
            "singular values must be finite and nonnegative".into(),
        ));
    }
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(
            "singular values must be sorted in descending order".into(),
        ));
    }
    Ok(())
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Truncated orthonormal modes with their singular values and an optional
/// per-location mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub modes: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub mean: Option<Vec<f64>>,
}

impl FeatureBasis {
    pub fn new(modes: DenseMatrix, singular_values: Vec<f64>, mean: Option<Vec<f64>>) -> Result<Self> {
        if singular_values.len() != modes.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} singular values for {} modes",
                singular_values.len(),
                modes.cols()
            )));
        }
        if let Some(mu) = &mean {
            if mu.len() != modes.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "mean has length {} but basis has {} locations",
                    mu.len(),
                    modes.rows()
                )));
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("mean contains non-finite values".into()));
            }
        }
        Ok(FeatureBasis { modes, singular_values, mean })
    }

    pub fn rank(&self) -> usize {
        self.modes.cols()
    }

    pub fn locations(&self) -> usize {
        self.modes.rows()
    }

    /// Largest entry of `|Phi^T Phi - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let phi = self.modes.as_dmatrix();
        (phi.transpose() * phi - DMatrix::identity(self.rank(), self.rank())).amax()
    }

    /// Orthogonal projection of `x - mean` onto the modes, plus the mean.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.locations() {
            return Err(Error::DimensionMismatch(format!(
                "field of length {} for basis with {} locations",
                x.len(),
                self.locations()
            )));
        }
        let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; x.len()]);
        let centered = nalgebra::DVector::from_iterator(x.len(), x.iter().zip(&mean).map(|(a, b)| a - b));
        let phi = self.modes.as_dmatrix();
        let coeffs = phi.transpose() * centered;
        let lifted = phi * coeffs;
        Ok(lifted.iter().zip(&mean).map(|(a, b)| a + b).collect())
    }
}

/// Keeps the first `r` left singular vectors and values.
pub fn truncate_basis(svd: &SvdResult, r: usize, mean: Option<Vec<f64>>) -> Result<FeatureBasis> {
    let available = svd.singular_values.len();
    if r == 0 || r > available {
        return Err(Error::InvalidParameter(format!(
            "truncation rank {r} outside 1..={available}"
        )));
    }
    let modes = DenseMatrix::from_trusted(svd.u.columns(0, r).clone_owned());
    FeatureBasis::new(modes, svd.singular_values[..r].to_vec(), mean)
}
