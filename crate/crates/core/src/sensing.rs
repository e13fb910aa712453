//! Sparse sensor selection and gappy reconstruction.
//!
//! Sensors are rows of the basis chosen greedily by pivoted QR on `Phi^T`,
//! which grows `|det(C Phi)|` one row at a time. A field is reconstructed from
//! its values at those rows by least squares in the basis coefficients.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{pivot_columns, pseudoinverse_from_svd, svd_dmatrix, DEFAULT_RCOND};
use crate::rng;
use crate::rpca::FeatureBasis;

/// Condition number above which a reconstruction is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Ordered measurement locations, in selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSet {
    pub indices: Vec<usize>,
    /// Pivot residual norm at selection time; empty for random sets.
    pub scores: Vec<f64>,
    /// The basis ran out of independent rows before the requested count.
    pub rank_deficient: bool,
}

impl SensorSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn check_bounds(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(bad) => Err(Error::InvalidParameter(format!(
                "sensor index {bad} out of range for {n} locations"
            ))),
            None => Ok(()),
        }
    }
}

/// One sensor per mode, chosen by pivoted QR on the transposed basis.
pub fn select_sensors(basis: &FeatureBasis) -> Result<SensorSet> {
    select_sensors_with_count(basis, basis.rank())
}

/// Chooses `count` sensors. The first `rank` come from pivoted QR of
/// `Phi^T`; further sensors come from repeated pivoted-QR passes over the
/// locations not yet chosen.
pub fn select_sensors_with_count(basis: &FeatureBasis, count: usize) -> Result<SensorSet> {
    let n = basis.locations();
    let r = basis.rank();
    if r == 0 || count == 0 {
        return Err(Error::InvalidParameter("sensor selection needs rank and count >= 1".into()));
    }
    if count > n {
        return Err(Error::InvalidParameter(format!(
            "cannot place {count} sensors on {n} locations"
        )));
    }
    let rows = basis.modes.transpose();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut indices = Vec::with_capacity(count);
    let mut scores = Vec::with_capacity(count);
    let mut rank_deficient = false;

    while indices.len() < count {
        let want = (count - indices.len()).min(r).min(remaining.len());
        let pass = pivot_columns(&rows, &remaining, want);
        let first_pass = indices.is_empty();
        if pass.pivots.is_empty() || (first_pass && pass.rank_deficient) {
            rank_deficient = true;
        }
        indices.extend_from_slice(&pass.pivots);
        scores.extend_from_slice(&pass.residual_norms);
        if rank_deficient {
            break;
        }
        remaining.retain(|i| !pass.pivots.contains(i));
    }

    Ok(SensorSet {
        indices,
        scores,
        rank_deficient,
    })
}

/// Point measurement `y_i = x[indices_i]`.
pub fn measure(x: &[f64], sensors: &SensorSet) -> Result<Vec<f64>> {
    sensors.check_bounds(x.len())?;
    Ok(sensors.indices.iter().map(|&i| x[i]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub field: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Ratio of extreme singular values of the sampled basis `C Phi`.
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

/// Least-squares estimate of the full field from sensor readings.
///
/// `a = pinv(C Phi) (y - C mean)` and `x = mean + Phi a`.
pub fn reconstruct(y: &[f64], basis: &FeatureBasis, sensors: &SensorSet) -> Result<Reconstruction> {
    let n = basis.locations();
    if y.len() != sensors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} readings for {} sensors",
            y.len(),
            sensors.len()
        )));
    }
    sensors.check_bounds(n)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("sensor readings must be finite".into()));
    }
    let mean = basis.mean.clone().unwrap_or_else(|| vec![0.0; n]);
    if sensors.is_empty() {
        return Ok(Reconstruction {
            field: mean,
            coefficients: vec![0.0; basis.rank()],
            condition_number: f64::INFINITY,
            ill_conditioned: true,
        });
    }

    let sampled = basis.modes.select_rows(&sensors.indices)?;
    let svd = svd_dmatrix(sampled.as_dmatrix())?;
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    // rank-many values exist only when there are at least as many sensors as modes
    let smin = if sensors.len() >= basis.rank() {
        svd.singular_values.last().copied().unwrap_or(0.0)
    } else {
        0.0
    };
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let pinv = pseudoinverse_from_svd(&svd, DEFAULT_RCOND);

    let centered = DVector::from_iterator(
        y.len(),
        y.iter().zip(&sensors.indices).map(|(v, &i)| v - mean[i]),
    );
    let coeffs = pinv.as_dmatrix() * centered;
    let lifted = basis.modes.as_dmatrix() * &coeffs;
    let field = lifted.iter().zip(&mean).map(|(a, b)| a + b).collect();

    Ok(Reconstruction {
        field,
        coefficients: coeffs.iter().copied().collect(),
        condition_number,
        ill_conditioned: condition_number > ILL_CONDITIONED,
    })
}

/// `r` distinct locations drawn uniformly without replacement.
pub fn random_sensors(n: usize, r: usize, seed: u64) -> Result<SensorSet> {
    if r > n {
        return Err(Error::InvalidParameter(format!(
            "cannot draw {r} sensors from {n} locations"
        )));
    }
    let mut stream = rng::seeded(seed);
    Ok(SensorSet {
        indices: rand::seq::index::sample(&mut stream, n, r).into_vec(),
        scores: Vec::new(),
        rank_deficient: false,
    })
}

/// `|det(C Phi)|` for a square sampled basis.
pub fn sampled_volume(basis: &FeatureBasis, sensors: &SensorSet) -> Result<f64> {
    if sensors.len() != basis.rank() {
        return Err(Error::DimensionMismatch(format!(
            "volume needs {} sensors, got {}",
            basis.rank(),
            sensors.len()
        )));
    }
    let sampled = basis.modes.select_rows(&sensors.indices)?;
    Ok(sampled.as_dmatrix().clone().determinant().abs())
}
