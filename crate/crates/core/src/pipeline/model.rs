use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, MissingSensor, Result};
use crate::matrix::{svd_dmatrix, DenseMatrix};
use crate::pipeline::dataset::GapDataset;
use crate::pipeline::segmentation::ShimSegmentation;
use crate::rpca::{median, optimal_rank, pcp, truncate_basis, FeatureBasis, PcpConfig};
use crate::sensing::{reconstruct, select_sensors_with_count, Reconstruction, SensorSet};

/// Singular values below this multiple of `||X_train||_F` are treated as zero
/// when estimating the rank.
pub const NUMERICAL_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Subtract the per-location training mean before decomposition.
    pub center: bool,
    /// Run principal component pursuit; when false the centered data is
    /// decomposed directly.
    pub robust: bool,
    pub pcp: PcpConfig,
    /// Fixed rank instead of the Gavish-Donoho estimate (still clamped).
    pub rank_override: Option<usize>,
    /// Known noise level for the rank threshold. When `None`, pursuit runs
    /// estimate it as `1.4826 * median|X_c - L|`; without pursuit the
    /// median-singular-value threshold is used.
    pub noise_sigma: Option<f64>,
    /// Sensors per region; `None` places one per retained mode.
    pub sensor_count: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            center: true,
            robust: true,
            pcp: PcpConfig::default(),
            rank_override: None,
            noise_sigma: None,
            sensor_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcpSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub lambda: f64,
    pub mu0: f64,
}

/// Trained basis and sensors for one block of locations.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFit {
    pub basis: FeatureBasis,
    pub sensors: SensorSet,
    pub rank: usize,
    /// Rank before clamping to `1..=m_train-1`.
    pub rank_estimate: usize,
    pub rank_clamped: bool,
    pub pcp: Option<PcpSummary>,
    /// Noise level estimated from the sparse part, when pursuit ran.
    pub sigma_estimate: Option<f64>,
}

/// Fits a basis and sensor set to `x_train` (locations x training units).
///
/// Steps, in order: optional row-mean centering, principal component
/// pursuit on the centered matrix (the row mean of the low-rank part is then
/// moved into the mean), SVD of the low-rank part, rank from the override or
/// the Gavish-Donoho threshold clamped to `1..=m_train-1`, and pivoted-QR
/// sensor selection on the truncated modes.
pub fn train(x_train: &DenseMatrix, cfg: &TrainConfig) -> Result<RegionFit> {
    let (n, m) = (x_train.rows(), x_train.cols());
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "training needs at least 2 units, got {m}"
        )));
    }
    let data = x_train.as_dmatrix();
    let mean: Option<Vec<f64>> = cfg
        .center
        .then(|| data.row_iter().map(|row| row.sum() / m as f64).collect());
    let centered = match &mean {
        Some(mu) => DMatrix::from_fn(n, m, |i, j| data[(i, j)] - mu[i]),
        None => data.clone(),
    };

    let (low_rank, mean, pcp_summary, sigma_estimate) = if cfg.robust {
        let d = pcp(&DenseMatrix::from_trusted(centered.clone()), &cfg.pcp)?;
        if !d.converged {
            log::warn!(
                "principal component pursuit stopped after {} iterations at residual {:.3e}",
                d.iterations,
                d.final_residual
            );
        }
        let summary = PcpSummary {
            iterations: d.iterations,
            converged: d.converged,
            final_residual: d.final_residual,
            lambda: d.lambda,
            mu0: d.mu0,
        };
        let sigma = robust_sigma(&(&centered - d.low_rank.as_dmatrix()));
        let mut low = d.low_rank.into_dmatrix();
        // Outliers bias the plain row mean; the low-rank part carries the
        // correction as a component constant across units, which belongs in
        // the mean rather than in the modes.
        let mean = mean.map(|mut mu| {
            for (i, mu_i) in mu.iter_mut().enumerate() {
                let shift = low.row(i).sum() / m as f64;
                *mu_i += shift;
                low.row_mut(i).add_scalar_mut(-shift);
            }
            mu
        });
        (low, mean, Some(summary), Some(sigma))
    } else {
        (centered, mean, None, None)
    };

    let svd = svd_dmatrix(&low_rank)?;
    // values at rounding level (e.g. from centering identical units) count as zero
    let floor = NUMERICAL_ZERO * data.norm();
    let spectrum: Vec<f64> = svd.singular_values.iter().map(|&s| if s <= floor { 0.0 } else { s }).collect();
    let rank_estimate = match cfg.rank_override {
        Some(r) => r,
        None => optimal_rank(&spectrum, n, m, cfg.noise_sigma.or(sigma_estimate))?,
    };
    let ceiling = (m - 1).min(svd.singular_values.len()).max(1);
    let rank = rank_estimate.clamp(1, ceiling);
    let rank_clamped = rank != rank_estimate;
    if rank_clamped {
        log::info!("rank {rank_estimate} clamped to {rank}");
    }

    let basis = truncate_basis(&svd, rank, mean)?;
    let count = cfg.sensor_count.unwrap_or(rank).min(n);
    let sensors = select_sensors_with_count(&basis, count)?;
    Ok(RegionFit {
        basis,
        sensors,
        rank,
        rank_estimate,
        rank_clamped,
        pcp: pcp_summary,
        sigma_estimate,
    })
}

/// `1.4826 * median(|r_ij|)`, the Gaussian-consistent MAD scale about zero.
pub fn robust_sigma(residual: &DMatrix<f64>) -> f64 {
    if residual.is_empty() {
        return 0.0;
    }
    let abs: Vec<f64> = residual.iter().map(|v| v.abs()).collect();
    MAD_TO_SIGMA * median(&abs)
}

const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionModel {
    pub name: String,
    /// Dataset row of each local location.
    pub location_indices: Vec<usize>,
    pub location_ids: Vec<String>,
    /// Sensor indices in `fit.sensors` are local to this region.
    pub fit: RegionFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShimModel {
    /// Every location of the training dataset, in dataset order.
    pub location_ids: Vec<String>,
    pub training_units: Vec<String>,
    pub gap_unit: String,
    pub config: TrainConfig,
    pub regions: Vec<RegionModel>,
}

impl ShimModel {
    /// `(location_id, local index)` of every sensor, region by region.
    pub fn sensor_locations(&self) -> Vec<(String, &str)> {
        self.regions
            .iter()
            .flat_map(|r| {
                r.fit
                    .sensors
                    .indices
                    .iter()
                    .map(move |&i| (r.name.clone(), r.location_ids[i].as_str()))
            })
            .collect()
    }
}

/// Trains every region on all units of `dataset`.
pub fn train_model(dataset: &GapDataset, seg: &ShimSegmentation, cfg: &TrainConfig) -> Result<ShimModel> {
    seg.validate(dataset.locations())?;
    let regions = seg
        .regions
        .par_iter()
        .map(|region| {
            let block = dataset.matrix.select_rows(&region.indices)?;
            let fit = train(&block, cfg)?;
            Ok(RegionModel {
                name: region.name.clone(),
                location_indices: region.indices.clone(),
                location_ids: region.indices.iter().map(|&i| dataset.location_ids[i].clone()).collect(),
                fit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShimModel {
        location_ids: dataset.location_ids.clone(),
        training_units: dataset.unit_ids.clone(),
        gap_unit: dataset.gap_unit.clone(),
        config: cfg.clone(),
        regions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionPrediction {
    pub name: String,
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// One entry per model location; `None` outside every region.
    pub values: Vec<Option<f64>>,
    pub regions: Vec<RegionPrediction>,
}

/// Predicts the full field of one unit from readings keyed by location id.
///
/// Every sensor of every region must be present; all absent sensors are
/// reported together.
pub fn predict(model: &ShimModel, measured: &HashMap<String, f64>) -> Result<Prediction> {
    let mut missing = Vec::new();
    for region in &model.regions {
        for &local in &region.fit.sensors.indices {
            let id = &region.location_ids[local];
            if !measured.contains_key(id) {
                missing.push(MissingSensor {
                    region: region.name.clone(),
                    local_index: local,
                    global_index: region.location_indices[local],
                    location_id: id.clone(),
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingSensors(missing));
    }

    let mut values = vec![None; model.location_ids.len()];
    let mut regions = Vec::with_capacity(model.regions.len());
    for region in &model.regions {
        let y: Vec<f64> = region
            .fit
            .sensors
            .indices
            .iter()
            .map(|&i| measured[&region.location_ids[i]])
            .collect();
        let rec = predict_region(region, &y)?;
        for (&global, v) in region.location_indices.iter().zip(&rec.field) {
            values[global] = Some(*v);
        }
        regions.push(RegionPrediction {
            name: region.name.clone(),
            condition_number: rec.condition_number,
            ill_conditioned: rec.ill_conditioned,
        });
    }
    Ok(Prediction { values, regions })
}

pub fn predict_region(region: &RegionModel, readings: &[f64]) -> Result<Reconstruction> {
    let rec = reconstruct(readings, &region.fit.basis, &region.fit.sensors)?;
    if rec.ill_conditioned {
        log::warn!(
            "region {}: sampled basis condition number {:.3e}",
            region.name,
            rec.condition_number
        );
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = rng::seeded(seed);
        DMatrix::from_fn(rows, cols, |_, _| s.sample(StandardNormal))
    }

    fn dataset_from(matrix: DMatrix<f64>) -> GapDataset {
        let (n, m) = matrix.shape();
        GapDataset::new(
            DenseMatrix::new(matrix).unwrap(),
            (0..n).map(|i| format!("loc{i:04}")).collect(),
            (0..m).map(|j| format!("unit{j:03}")).collect(),
        )
        .unwrap()
    }

    fn readings(ds: &GapDataset, model: &ShimModel, field: &[f64]) -> HashMap<String, f64> {
        model
            .sensor_locations()
            .into_iter()
            .map(|(_, id)| {
                let i = ds.location_ids.iter().position(|l| l == id).unwrap();
                (id.to_string(), field[i])
            })
            .collect()
    }

    #[test]
    fn identical_units_collapse_to_the_mean() {
        let col: Vec<f64> = (0..30).map(|i| 0.02 + 0.001 * i as f64).collect();
        let x = DMatrix::from_fn(30, 6, |i, _| col[i]);
        let fit = train(&DenseMatrix::new(x.clone()).unwrap(), &TrainConfig::default()).unwrap();
        assert_eq!(fit.rank, 1);
        assert!(fit.rank_clamped);
        for s in 0..30 {
            let sensors = SensorSet { indices: vec![s], scores: vec![], rank_deficient: false };
            let rec = reconstruct(&[col[s]], &fit.basis, &sensors).unwrap();
            for (a, b) in rec.field.iter().zip(&col) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn rank_is_clamped_below_training_count() {
        let x = DenseMatrix::new(gaussian(50, 4, 3)).unwrap();
        let cfg = TrainConfig { rank_override: Some(10), ..TrainConfig::default() };
        let fit = train(&x, &cfg).unwrap();
        assert_eq!(fit.rank, 3);
        assert!(fit.rank_clamped);
        assert!(train(&DenseMatrix::new(gaussian(5, 1, 1)).unwrap(), &cfg).is_err());
    }

    #[test]
    fn in_span_unit_is_predicted_exactly() {
        let modes = gaussian(80, 3, 10);
        let offset: Vec<f64> = (0..80).map(|i| 0.05 + 0.0005 * i as f64).collect();
        let coeffs = gaussian(3, 12, 11);
        let lr = &modes * &coeffs;
        let x = DMatrix::from_fn(80, 12, |i, j| offset[i] + lr[(i, j)]);
        let ds = dataset_from(x);
        let seg = ShimSegmentation::contiguous(80, 2).unwrap();
        let cfg = TrainConfig { robust: false, rank_override: Some(3), ..TrainConfig::default() };
        let model = train_model(&ds, &seg, &cfg).unwrap();

        // a new unit: training mean plus a fresh combination of the training deviations
        let w = gaussian(12, 1, 12);
        let train_mean: Vec<f64> = ds.matrix.row_iter().map(|r| r.sum() / 12.0).collect();
        let dev = DMatrix::from_fn(80, 12, |i, j| ds.matrix[(i, j)] - train_mean[i]) * w;
        let field: Vec<f64> = (0..80).map(|i| train_mean[i] + dev[i]).collect();
        let p = predict(&model, &readings(&ds, &model, &field)).unwrap();
        for (i, v) in p.values.iter().enumerate() {
            assert!((v.unwrap() - field[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn missing_sensors_are_listed() {
        let ds = dataset_from(gaussian(20, 6, 2));
        let seg = ShimSegmentation::contiguous(20, 2).unwrap();
        let model = train_model(&ds, &seg, &TrainConfig { rank_override: Some(2), ..TrainConfig::default() }).unwrap();
        let err = predict(&model, &HashMap::new()).unwrap_err();
        match err {
            Error::MissingSensors(list) => {
                assert_eq!(list.len(), 4);
                for m in &list {
                    assert_eq!(ds.location_ids[m.global_index], m.location_id);
                }
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unsegmented_locations_are_absent() {
        let ds = dataset_from(gaussian(10, 5, 6));
        let seg = ShimSegmentation {
            regions: vec![crate::pipeline::segmentation::Region { name: "a".into(), indices: vec![0, 1, 2, 3, 4, 5] }],
        };
        let model = train_model(&ds, &seg, &TrainConfig { rank_override: Some(2), ..TrainConfig::default() }).unwrap();
        let field = ds.unit_field(0);
        let p = predict(&model, &readings(&ds, &model, &field)).unwrap();
        assert!(p.values[..6].iter().all(Option::is_some));
        assert!(p.values[6..].iter().all(Option::is_none));
    }

    #[test]
    fn sensors_stay_inside_regions() {
        let ds = dataset_from(gaussian(40, 8, 7));
        let seg = ShimSegmentation::contiguous(40, 3).unwrap();
        let model = train_model(&ds, &seg, &TrainConfig { rank_override: Some(3), ..TrainConfig::default() }).unwrap();
        for r in &model.regions {
            assert!(r.fit.sensors.indices.iter().all(|&i| i < r.location_indices.len()));
        }
    }
}
