use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::pipeline::dataset::GapDataset;
use crate::pipeline::model::{train, TrainConfig};
use crate::pipeline::segmentation::ShimSegmentation;
use crate::rng::derive_seed;
use crate::rpca::median;
use crate::sensing::{measure, random_sensors, reconstruct, SensorSet};

pub const DEFAULT_TOLERANCE: f64 = 0.005;

/// Fraction of points with `|x_true - x_hat| <= tol`.
///
/// # Panics
/// If the slices differ in length.
pub fn within_tolerance(x_true: &[f64], x_hat: &[f64], tol: f64) -> f64 {
    assert_eq!(x_true.len(), x_hat.len(), "field lengths differ");
    if x_true.is_empty() {
        return 1.0;
    }
    let hits = x_true
        .iter()
        .zip(x_hat)
        .filter(|(a, b)| (*a - *b).abs() <= tol)
        .count();
    hits as f64 / x_true.len() as f64
}

/// Fixed-width bins over `log10 |error|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub log10_min: f64,
    pub log10_max: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            log10_min: -7.0,
            log10_max: 0.0,
            bins: 28,
        }
    }
}

/// Counts per bin, plus errors below the range (including exact zeros) and above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn build(spec: &HistogramSpec, abs_errors: impl IntoIterator<Item = f64>) -> Self {
        let width = (spec.log10_max - spec.log10_min) / spec.bins as f64;
        let edges = (0..=spec.bins)
            .map(|k| spec.log10_min + width * k as f64)
            .collect();
        let mut counts = vec![0; spec.bins];
        let (mut underflow, mut overflow) = (0, 0);
        for e in abs_errors {
            let l = e.log10();
            if !(l >= spec.log10_min) {
                underflow += 1;
            } else if l >= spec.log10_max {
                overflow += 1;
            } else {
                let k = (((l - spec.log10_min) / width) as usize).min(spec.bins - 1);
                counts[k] += 1;
            }
        }
        Histogram { edges, counts, underflow, overflow }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValConfig {
    pub train: TrainConfig,
    pub tolerance: f64,
    pub master_seed: u64,
    pub histogram: HistogramSpec,
    /// Run folds on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig {
            train: TrainConfig::default(),
            tolerance: DEFAULT_TOLERANCE,
            master_seed: 0,
            histogram: HistogramSpec::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub unit_id: String,
    pub sensor_count: usize,
    pub rank: usize,
    pub percent_within_tol: f64,
    /// Infinite (stored as `null`) when the sampled basis is singular.
    #[serde(with = "finite_or_null")]
    pub condition_number: f64,
    pub abs_errors: Vec<f64>,
}

/// JSON has no infinities; non-finite values travel as `null`.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    /// Pooled over every fold and point.
    pub percent_within_tol: f64,
    /// Mean of the per-fold percentages.
    pub mean_fold_percent: f64,
    pub avg_sensor_count: f64,
    pub folds: Vec<FoldRecord>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFold {
    pub unit_id: String,
    pub region: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub name: String,
    pub total_points: usize,
    pub avg_rank: f64,
    pub optimal: ArmReport,
    pub random: ArmReport,
    pub failed_folds: Vec<FailedFold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub tolerance: f64,
    pub gap_unit: String,
    pub master_seed: u64,
    pub fold_count: usize,
    pub unit_ids: Vec<String>,
    pub regions: Vec<RegionReport>,
}

impl CrossValReport {
    /// Pooled within-tolerance percentage over all regions for one arm.
    pub fn pooled_percent(&self, random_arm: bool) -> f64 {
        let (hits, total) = self
            .regions
            .iter()
            .flat_map(|r| if random_arm { &r.random.folds } else { &r.optimal.folds })
            .flat_map(|f| f.abs_errors.iter())
            .fold((0usize, 0usize), |(h, t), e| (h + (*e <= self.tolerance) as usize, t + 1));
        if total == 0 {
            0.0
        } else {
            100.0 * hits as f64 / total as f64
        }
    }

    /// Largest per-fold sensor count as a percentage of the region size.
    pub fn max_sensor_percent(&self) -> f64 {
        self.regions
            .iter()
            .flat_map(|r| r.optimal.folds.iter().map(move |f| 100.0 * f.sensor_count as f64 / r.total_points as f64))
            .fold(0.0, f64::max)
    }
}

struct FoldOutcome {
    optimal: FoldRecord,
    random: FoldRecord,
}

/// Leave-one-out cross-validation over units, region by region.
///
/// Scores predictions against the held-out unit's own measurements.
pub fn loo_crossval(dataset: &GapDataset, seg: &ShimSegmentation, cfg: &CrossValConfig) -> Result<CrossValReport> {
    loo_crossval_against(dataset, seg, cfg, None)
}

/// Leave-one-out cross-validation with a separate source for held-out fields.
///
/// `reference` has the dataset's shape. Each fold still trains on the
/// dataset's other units, but the held-out unit is measured at the sensors
/// and scored from its `reference` column. For synthetic data this is the
/// spike-free field: scan artifacts corrupt the training history while the
/// new unit is read by a clean targeted measurement.
pub fn loo_crossval_against(
    dataset: &GapDataset,
    seg: &ShimSegmentation,
    cfg: &CrossValConfig,
    reference: Option<&DenseMatrix>,
) -> Result<CrossValReport> {
    let m = dataset.units();
    if m < 3 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs at least 3 units, got {m}"
        )));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            cfg.tolerance
        )));
    }
    if cfg.histogram.bins == 0 || !(cfg.histogram.log10_max > cfg.histogram.log10_min) {
        return Err(Error::InvalidParameter("histogram range is empty".into()));
    }
    if let Some(r) = reference {
        if (r.rows(), r.cols()) != (dataset.locations(), m) {
            return Err(Error::DimensionMismatch("reference shape differs from dataset".into()));
        }
    }
    seg.validate(dataset.locations())?;

    let blocks = seg
        .regions
        .iter()
        .map(|region| {
            let history = dataset.matrix.select_rows(&region.indices)?;
            let held_out = match reference {
                Some(r) => r.select_rows(&region.indices)?,
                None => history.clone(),
            };
            Ok((history, held_out))
        })
        .collect::<Result<Vec<_>>>()?;

    let run_fold = |k: usize| -> Vec<std::result::Result<FoldOutcome, FailedFold>> {
        let train_cols: Vec<usize> = (0..m).filter(|&j| j != k).collect();
        seg.regions
            .iter()
            .zip(&blocks)
            .map(|(region, (history, held_out))| {
                run_region_fold(dataset, region.name.as_str(), history, held_out, &train_cols, k, cfg).map_err(|e| {
                    FailedFold {
                        unit_id: dataset.unit_ids[k].clone(),
                        region: region.name.clone(),
                        message: e.to_string(),
                    }
                })
            })
            .collect()
    };
    let per_fold: Vec<_> = if cfg.parallel {
        (0..m).into_par_iter().map(run_fold).collect()
    } else {
        (0..m).map(run_fold).collect()
    };

    let mut regions = Vec::with_capacity(seg.regions.len());
    for (idx, region) in seg.regions.iter().enumerate() {
        let mut optimal = Vec::new();
        let mut random = Vec::new();
        let mut failed = Vec::new();
        for fold in &per_fold {
            match &fold[idx] {
                Ok(outcome) => {
                    optimal.push(outcome.optimal.clone());
                    random.push(outcome.random.clone());
                }
                Err(f) => failed.push(f.clone()),
            }
        }
        if optimal.is_empty() {
            let reason = failed.first().map(|f| f.message.clone()).unwrap_or_default();
            return Err(Error::AllFoldsFailed(format!("region {}: {reason}", region.name)));
        }
        for f in &failed {
            log::warn!("fold {} region {} failed: {}", f.unit_id, f.region, f.message);
        }
        let avg_rank = optimal.iter().map(|f| f.rank as f64).sum::<f64>() / optimal.len() as f64;
        regions.push(RegionReport {
            name: region.name.clone(),
            total_points: region.indices.len(),
            avg_rank,
            optimal: summarize(optimal, cfg),
            random: summarize(random, cfg),
            failed_folds: failed,
        });
    }

    Ok(CrossValReport {
        tolerance: cfg.tolerance,
        gap_unit: dataset.gap_unit.clone(),
        master_seed: cfg.master_seed,
        fold_count: m,
        unit_ids: dataset.unit_ids.clone(),
        regions,
    })
}

fn run_region_fold(
    dataset: &GapDataset,
    region: &str,
    history: &DenseMatrix,
    held_out: &DenseMatrix,
    train_cols: &[usize],
    k: usize,
    cfg: &CrossValConfig,
) -> Result<FoldOutcome> {
    let unit_id = &dataset.unit_ids[k];
    let fit = train(&history.select_columns(train_cols)?, &cfg.train)?;
    let target = held_out.column_vec(k);
    let n = history.rows();

    let seed = derive_seed(cfg.master_seed, &["baseline", unit_id, region]);
    let baseline = random_sensors(n, fit.sensors.len(), seed)?;

    let score = |sensors: &SensorSet| -> Result<FoldRecord> {
        let y = measure(&target, sensors)?;
        let rec = reconstruct(&y, &fit.basis, sensors)?;
        let abs_errors: Vec<f64> = target.iter().zip(&rec.field).map(|(a, b)| (a - b).abs()).collect();
        Ok(FoldRecord {
            unit_id: unit_id.clone(),
            sensor_count: sensors.len(),
            rank: fit.rank,
            percent_within_tol: 100.0 * within_tolerance(&target, &rec.field, cfg.tolerance),
            condition_number: rec.condition_number,
            abs_errors,
        })
    };
    Ok(FoldOutcome {
        optimal: score(&fit.sensors)?,
        random: score(&baseline)?,
    })
}

fn summarize(folds: Vec<FoldRecord>, cfg: &CrossValConfig) -> ArmReport {
    let total: usize = folds.iter().map(|f| f.abs_errors.len()).sum();
    let hits: usize = folds
        .iter()
        .flat_map(|f| f.abs_errors.iter())
        .filter(|e| **e <= cfg.tolerance)
        .count();
    let count = folds.len() as f64;
    ArmReport {
        percent_within_tol: if total == 0 { 100.0 } else { 100.0 * hits as f64 / total as f64 },
        mean_fold_percent: folds.iter().map(|f| f.percent_within_tol).sum::<f64>() / count,
        avg_sensor_count: folds.iter().map(|f| f.sensor_count as f64).sum::<f64>() / count,
        histogram: Histogram::build(&cfg.histogram, folds.iter().flat_map(|f| f.abs_errors.iter().copied())),
        folds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionComparison {
    pub name: String,
    pub median_error_optimal: f64,
    pub median_error_random: f64,
    /// `median_error_random / median_error_optimal`; `None` when the optimal
    /// median is zero but the random one is not.
    pub median_error_ratio: Option<f64>,
    /// Optimal minus random pooled within-tolerance percentage.
    pub percent_gap: f64,
    pub histogram_optimal: Histogram,
    pub histogram_random: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub regions: Vec<RegionComparison>,
    pub aggregate_median_error_optimal: f64,
    pub aggregate_median_error_random: f64,
    pub aggregate_median_error_ratio: Option<f64>,
}

fn ratio(random: f64, optimal: f64) -> Option<f64> {
    if optimal > 0.0 {
        Some(random / optimal)
    } else if random == 0.0 {
        Some(1.0)
    } else {
        None
    }
}

fn pooled_errors(arm: &ArmReport) -> Vec<f64> {
    arm.folds.iter().flat_map(|f| f.abs_errors.iter().copied()).collect()
}

/// Optimal-versus-random summary per region and over all regions.
pub fn compare_baseline(report: &CrossValReport) -> BaselineComparison {
    let mut all_opt = Vec::new();
    let mut all_rand = Vec::new();
    let regions = report
        .regions
        .iter()
        .map(|r| {
            let opt = pooled_errors(&r.optimal);
            let rand = pooled_errors(&r.random);
            let (mo, mr) = (median_or_zero(&opt), median_or_zero(&rand));
            all_opt.extend_from_slice(&opt);
            all_rand.extend_from_slice(&rand);
            RegionComparison {
                name: r.name.clone(),
                median_error_optimal: mo,
                median_error_random: mr,
                median_error_ratio: ratio(mr, mo),
                percent_gap: r.optimal.percent_within_tol - r.random.percent_within_tol,
                histogram_optimal: r.optimal.histogram.clone(),
                histogram_random: r.random.histogram.clone(),
            }
        })
        .collect();
    let (mo, mr) = (median_or_zero(&all_opt), median_or_zero(&all_rand));
    BaselineComparison {
        regions,
        aggregate_median_error_optimal: mo,
        aggregate_median_error_random: mr,
        aggregate_median_error_ratio: ratio(mr, mo),
    }
}

fn median_or_zero(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        median(values)
    }
}

/// One row of the per-region summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub region: String,
    pub percent_accurate: f64,
    pub optimal_sensors_avg: f64,
    pub total_points: usize,
    pub random_percent_accurate: f64,
    pub mean_fold_percent: f64,
}

pub fn summary_table(report: &CrossValReport) -> Vec<SummaryRow> {
    report
        .regions
        .iter()
        .map(|r| SummaryRow {
            region: r.name.clone(),
            percent_accurate: r.optimal.percent_within_tol,
            optimal_sensors_avg: r.optimal.avg_sensor_count,
            total_points: r.total_points,
            random_percent_accurate: r.random.percent_within_tol,
            mean_fold_percent: r.optimal.mean_fold_percent,
        })
        .collect()
}
