//! Synthetic gap fields with known structure.
//!
//! A unit's field is a smooth mean profile plus a random combination of a few
//! orthonormalized low-frequency cosine modes, small Gaussian noise, and
//! sparse spikes standing in for scan artifacts:
//!
//! `X = mean 1^T + Phi diag(coeff_scale) W + sigma N + S`.
//!
//! Random draws happen in a fixed order from one seeded stream: `W` (column
//! by column), `N` (column-major), outlier positions, outlier signs.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::pipeline::dataset::GapDataset;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeFamily {
    /// `cos(pi j (i + 1/2) / n)` over the location index, `j = 1..=rank`.
    Cosine1d,
    /// Products of cosines over a near-square grid laid out row by row,
    /// ordered by total frequency.
    Grid2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub true_rank: usize,
    pub mode_family: ModeFamily,
    /// Baseline gap shared by every location.
    pub mean_level: f64,
    /// Amplitude of the sinusoidal variation of the mean across locations.
    pub mean_amplitude: f64,
    /// Per-mode coefficient scale, descending; `true_rank` entries.
    pub coeff_scale: Vec<f64>,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_magnitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 600 locations, 40 units, rank 5, sigma 0.0005, 5% spikes of 0.05.
    ///
    /// The mean ranges over 0.03 to 0.06 and per-point mode contributions
    /// are around 0.005 to 0.02, so the 0.005 tolerance sits between the
    /// signal and the noise.
    fn default() -> Self {
        SynthConfig::with_shape(600, 40, 5, 0)
    }
}

impl SynthConfig {
    /// Default magnitudes for an arbitrary shape.
    pub fn with_shape(n: usize, m: usize, true_rank: usize, seed: u64) -> Self {
        SynthConfig {
            n,
            m,
            true_rank,
            mode_family: ModeFamily::Cosine1d,
            mean_level: 0.045,
            mean_amplitude: 0.015,
            coeff_scale: default_coeff_scale(true_rank),
            noise_sigma: 0.0005,
            outlier_fraction: 0.05,
            outlier_magnitude: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 || self.m == 0 {
            return bad(format!("n and m must be positive, got {}x{}", self.n, self.m));
        }
        if self.true_rank > self.n.min(self.m) {
            return bad(format!(
                "rank {} must not exceed min(n, m) = {}",
                self.true_rank,
                self.n.min(self.m)
            ));
        }
        if self.true_rank >= self.n {
            return bad(format!("rank {} leaves no room for the mean direction in {} locations", self.true_rank, self.n));
        }
        if self.coeff_scale.len() != self.true_rank {
            return bad(format!(
                "{} coefficient scales for rank {}",
                self.coeff_scale.len(),
                self.true_rank
            ));
        }
        if self.coeff_scale.iter().any(|c| !c.is_finite() || *c < 0.0)
            || self.coeff_scale.windows(2).any(|w| w[1] > w[0])
        {
            return bad("coefficient scales must be finite, nonnegative and descending".into());
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad(format!("outlier fraction {} outside [0, 1)", self.outlier_fraction));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("outlier_magnitude", self.outlier_magnitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.mean_level.is_finite() && self.mean_amplitude.is_finite()) {
            return bad("mean profile must be finite".into());
        }
        Ok(())
    }

    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * (self.n * self.m) as f64).round() as usize
    }
}

/// `0.30 * 0.75^j`, descending.
pub fn default_coeff_scale(rank: usize) -> Vec<f64> {
    (0..rank).map(|j| 0.30 * 0.75f64.powi(j as i32)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `mean 1^T + Phi diag(coeff_scale) W`.
    pub low_rank: DenseMatrix,
    pub sparse: DenseMatrix,
    pub noise: DenseMatrix,
    pub modes: DenseMatrix,
    pub mean: Vec<f64>,
    pub coefficients: DenseMatrix,
}

impl GroundTruth {
    /// The field a clean instrument would read: data minus the spikes.
    pub fn clean(&self) -> DenseMatrix {
        DenseMatrix::from_trusted(self.low_rank.as_dmatrix() + self.noise.as_dmatrix())
    }
}

pub fn unit_ids(m: usize) -> Vec<String> {
    let width = m.saturating_sub(1).to_string().len().max(3);
    (0..m).map(|j| format!("unit_{j:0width$}")).collect()
}

pub fn location_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(4);
    (0..n).map(|i| format!("p{i:0width$}")).collect()
}

/// Grid dimensions `(rows, cols)` used for `n` locations.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let rows = ((n as f64).sqrt().floor() as usize).max(1);
    (rows, n.div_ceil(rows))
}

/// Orthonormalized smooth modes, `n x rank`, excluding the constant direction.
pub fn cosine_modes(n: usize, rank: usize, family: ModeFamily) -> Result<DenseMatrix> {
    if rank == 0 {
        return DenseMatrix::zeros(n, 0);
    }
    let raw = match family {
        ModeFamily::Cosine1d => DMatrix::from_fn(n, rank, |i, j| {
            (std::f64::consts::PI * (j + 1) as f64 * (i as f64 + 0.5) / n as f64).cos()
        }),
        ModeFamily::Grid2d => {
            let (rows, cols) = grid_shape(n);
            let mut freqs: Vec<(usize, usize)> = (0..rows)
                .flat_map(|p| (0..cols).map(move |q| (p, q)))
                .filter(|&pq| pq != (0, 0))
                .collect();
            freqs.sort_by_key(|&(p, q)| (p + q, p));
            freqs.truncate(rank);
            DMatrix::from_fn(n, rank, |i, j| {
                let (p, q) = freqs[j];
                let (y, x) = ((i / cols) as f64, (i % cols) as f64);
                (std::f64::consts::PI * p as f64 * (y + 0.5) / rows as f64).cos()
                    * (std::f64::consts::PI * q as f64 * (x + 0.5) / cols as f64).cos()
            })
        }
    };
    let mut modes = raw.clone().qr().q();
    // QR may flip columns; keep each aligned with its raw cosine
    for (mut q, c) in modes.column_iter_mut().zip(raw.column_iter()) {
        if q.dot(&c) < 0.0 {
            q.neg_mut();
        }
    }
    DenseMatrix::new(modes)
}

/// Mean gap at each location.
pub fn mean_profile(cfg: &SynthConfig) -> Vec<f64> {
    let position = |i: usize| match cfg.mode_family {
        ModeFamily::Cosine1d => i as f64 / cfg.n as f64,
        ModeFamily::Grid2d => {
            let (_, cols) = grid_shape(cfg.n);
            (i % cols) as f64 / cols as f64
        }
    };
    (0..cfg.n)
        .map(|i| cfg.mean_level + cfg.mean_amplitude * (2.0 * std::f64::consts::PI * position(i)).sin())
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<(GapDataset, GroundTruth)> {
    cfg.validate()?;
    let (n, m, r) = (cfg.n, cfg.m, cfg.true_rank);
    let modes = cosine_modes(n, r, cfg.mode_family)?;
    let mean = mean_profile(cfg);
    let mut stream = rng::seeded(cfg.seed);

    let mut w = DMatrix::zeros(r, m);
    for j in 0..m {
        for k in 0..r {
            let z: f64 = stream.sample(StandardNormal);
            w[(k, j)] = cfg.coeff_scale[k] * z;
        }
    }
    let mut noise = DMatrix::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            let z: f64 = stream.sample(StandardNormal);
            noise[(i, j)] = cfg.noise_sigma * z;
        }
    }
    let mut sparse = DMatrix::zeros(n, m);
    let positions = rand::seq::index::sample(&mut stream, n * m, cfg.outlier_count()).into_vec();
    for p in positions {
        let sign = if stream.random::<bool>() { 1.0 } else { -1.0 };
        sparse[(p % n, p / n)] = sign * cfg.outlier_magnitude;
    }

    let structured = modes.as_dmatrix() * &w;
    let low_rank = DMatrix::from_fn(n, m, |i, j| mean[i] + structured[(i, j)]);
    let x = &low_rank + &noise + &sparse;
    let dataset = GapDataset::new(DenseMatrix::new(x)?, location_ids(n), unit_ids(m))?;
    let truth = GroundTruth {
        low_rank: DenseMatrix::new(low_rank)?,
        sparse: DenseMatrix::new(sparse)?,
        noise: DenseMatrix::new(noise)?,
        modes,
        mean,
        coefficients: DenseMatrix::new(w)?,
    };
    Ok((dataset, truth))
}
