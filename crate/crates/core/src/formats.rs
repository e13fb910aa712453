//! On-disk formats.
//!
//! * Gap matrix CSV: header `location_id,<unit_id>,...`, one row per
//!   location, `.` decimal separator. Values are written in the shortest
//!   form that parses back to the same double; an empty cell or `NaN` marks
//!   a missing reading.
//! * Segmentation manifest: JSON object mapping region name to an array of
//!   location ids, in region order.
//! * Model directory: `meta.json` plus `<region>/basis.csv`,
//!   `<region>/mean.csv` and `<region>/sensors.json`. `meta.json` carries a
//!   SHA-256 over its own body and every region file.
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::pipeline::crossval::{BaselineComparison, CrossValReport, Histogram, SummaryRow};
use crate::pipeline::dataset::{assemble, GapDataset, MissingPolicy};
use crate::pipeline::model::{PcpSummary, RegionFit, RegionModel, ShimModel, TrainConfig};
use crate::rpca::FeatureBasis;
use crate::sensing::SensorSet;
use crate::synth::{GroundTruth, SynthConfig};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Shortest decimal text that parses back to exactly `v`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(cell: &str, what: impl Fn() -> String) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>()
        .map_err(|_| Error::Schema(format!("{}: cannot parse {cell:?} as a number", what())))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Schema(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Schema(e.to_string()))
}

/// Header and rows of a CSV file whose first column is `first`.
fn read_table(bytes: &[u8], source: &str, first: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Schema(format!("{source}: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some(first) {
        return Err(Error::Schema(format!("{source}: first header column must be {first:?}")));
    }
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| Error::Schema(format!("{source}: {e}")))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

pub fn gap_csv_bytes(ds: &GapDataset) -> Result<Vec<u8>> {
    let mut header = vec!["location_id".to_string()];
    header.extend(ds.unit_ids.iter().cloned());
    let rows = ds.location_ids.iter().enumerate().map(|(i, id)| {
        let mut row = vec![id.clone()];
        row.extend((0..ds.units()).map(|j| format_f64(ds.matrix[(i, j)])));
        row
    });
    csv_bytes(&header, rows)
}

pub fn write_gap_csv(path: &Path, ds: &GapDataset) -> Result<()> {
    write_atomic(path, &gap_csv_bytes(ds)?)
}

/// Parses a gap CSV, keeping the file's row and column order.
pub fn parse_gap_csv(bytes: &[u8], source: &str, policy: MissingPolicy) -> Result<GapDataset> {
    let (header, rows) = read_table(bytes, source, "location_id")?;
    let unit_ids: Vec<String> = header[1..].to_vec();
    if unit_ids.is_empty() {
        return Err(Error::Schema(format!("{source}: no unit columns")));
    }
    if rows.is_empty() {
        return Err(Error::Schema(format!("{source}: no location rows")));
    }
    let (n, m) = (rows.len(), unit_ids.len());
    let mut cells = vec![f64::NAN; n * m];
    let mut location_ids = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != m + 1 {
            return Err(Error::Schema(format!(
                "{source}: row {} has {} fields, expected {}",
                i + 2,
                row.len(),
                m + 1
            )));
        }
        location_ids.push(row[0].trim().to_string());
        for j in 0..m {
            let v = parse_f64(&row[j + 1], || format!("{source}: row {} column {:?}", i + 2, unit_ids[j]))?;
            if v.is_infinite() {
                return Err(Error::Ingestion(format!("{source}: infinite gap at row {}", i + 2)));
            }
            cells[j * n + i] = v;
        }
    }
    assemble(cells, location_ids, unit_ids, policy)
}

pub fn read_gap_csv(path: &Path, policy: MissingPolicy) -> Result<GapDataset> {
    parse_gap_csv(&read_bytes(path)?, &path.display().to_string(), policy)
}

/// Sparse readings: a gap-CSV layout where blank cells are unmeasured.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub unit_ids: Vec<String>,
    /// Per unit, location id to reading.
    pub readings: Vec<std::collections::HashMap<String, f64>>,
}

pub fn read_measurements(path: &Path) -> Result<Measurements> {
    let source = path.display().to_string();
    let (header, rows) = read_table(&read_bytes(path)?, &source, "location_id")?;
    let unit_ids: Vec<String> = header[1..].to_vec();
    if unit_ids.is_empty() {
        return Err(Error::Schema(format!("{source}: no unit columns")));
    }
    let mut readings = vec![std::collections::HashMap::new(); unit_ids.len()];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != unit_ids.len() + 1 {
            return Err(Error::Schema(format!("{source}: row {} has {} fields", i + 2, row.len())));
        }
        let id = row[0].trim().to_string();
        for (j, cell) in row[1..].iter().enumerate() {
            let v = parse_f64(cell, || format!("{source}: row {}", i + 2))?;
            if v.is_finite() {
                readings[j].insert(id.clone(), v);
            }
        }
    }
    Ok(Measurements { unit_ids, readings })
}

/// Predicted fields for several units; `None` (a location outside every
/// region) is written as a blank cell.
pub fn prediction_csv_bytes(location_ids: &[String], unit_ids: &[String], columns: &[Vec<Option<f64>>]) -> Result<Vec<u8>> {
    let mut header = vec!["location_id".to_string()];
    header.extend(unit_ids.iter().cloned());
    let rows = location_ids.iter().enumerate().map(|(i, id)| {
        let mut row = vec![id.clone()];
        row.extend(columns.iter().map(|c| c[i].map(format_f64).unwrap_or_default()));
        row
    });
    csv_bytes(&header, rows)
}

pub fn read_segmentation(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let value: Value = read_json(path)?;
    parse_segmentation(&value).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_segmentation(value: &Value) -> Result<Vec<(String, Vec<String>)>> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Schema("segmentation must be a JSON object".into()))?;
    obj.iter()
        .map(|(name, ids)| {
            let ids = ids
                .as_array()
                .ok_or_else(|| Error::Schema(format!("region {name:?} must map to an array")))?
                .iter()
                .map(|id| {
                    id.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| Error::Schema(format!("region {name:?} has a non-string location id")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((name.clone(), ids))
        })
        .collect()
}

pub fn write_segmentation(path: &Path, regions: &[(String, Vec<String>)]) -> Result<()> {
    let obj: Map<String, Value> = regions
        .iter()
        .map(|(name, ids)| (name.clone(), Value::from(ids.clone())))
        .collect();
    write_json(path, &Value::Object(obj))
}

/// Ground-truth sidecar written next to synthetic gap files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub config: SynthConfig,
    pub location_ids: Vec<String>,
    pub unit_ids: Vec<String>,
    pub truth: GroundTruth,
}

fn check_region_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "region name {name:?} is not usable as a directory name (use letters, digits, '-', '_', '.')"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SensorsFile {
    indices: Vec<usize>,
    location_ids: Vec<String>,
    scores: Vec<f64>,
    rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegionMeta {
    name: String,
    rank: usize,
    rank_estimate: usize,
    rank_clamped: bool,
    centered: bool,
    singular_values: Vec<f64>,
    location_ids: Vec<String>,
    pcp: Option<PcpSummary>,
    sigma_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    format_version: u32,
    gap_unit: String,
    location_ids: Vec<String>,
    training_units: Vec<String>,
    config: TrainConfig,
    regions: Vec<RegionMeta>,
}

const REGION_FILES: [&str; 3] = ["basis.csv", "mean.csv", "sensors.json"];

fn region_file_bytes(region: &RegionModel) -> Result<[Vec<u8>; 3]> {
    let basis = &region.fit.basis;
    let r = basis.rank();
    let mut header = vec!["location_id".to_string()];
    header.extend((1..=r).map(|k| format!("mode_{k}")));
    let rows = region.location_ids.iter().enumerate().map(|(i, id)| {
        let mut row = vec![id.clone()];
        row.extend((0..r).map(|k| format_f64(basis.modes[(i, k)])));
        row
    });
    let basis_csv = csv_bytes(&header, rows)?;

    let mean = basis.mean.clone().unwrap_or_else(|| vec![0.0; basis.locations()]);
    let mean_csv = csv_bytes(
        &["location_id".to_string(), "mean".to_string()],
        region.location_ids.iter().zip(&mean).map(|(id, v)| vec![id.clone(), format_f64(*v)]),
    )?;

    let sensors = SensorsFile {
        indices: region.fit.sensors.indices.clone(),
        location_ids: region.fit.sensors.indices.iter().map(|&i| region.location_ids[i].clone()).collect(),
        scores: region.fit.sensors.scores.clone(),
        rank_deficient: region.fit.sensors.rank_deficient,
    };
    Ok([basis_csv, mean_csv, to_json_bytes(&sensors)?])
}

fn content_hash(meta_body: &[u8], files: &[(String, Vec<u8>)]) -> String {
    let mut h = Sha256::new();
    h.update((meta_body.len() as u64).to_le_bytes());
    h.update(meta_body);
    for (name, bytes) in files {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

/// Writes a trained model directory and returns its content hash.
pub fn write_model(dir: &Path, model: &ShimModel) -> Result<String> {
    for region in &model.regions {
        check_region_name(&region.name)?;
    }
    let meta = ModelMeta {
        format_version: MODEL_FORMAT_VERSION,
        gap_unit: model.gap_unit.clone(),
        location_ids: model.location_ids.clone(),
        training_units: model.training_units.clone(),
        config: model.config.clone(),
        regions: model
            .regions
            .iter()
            .map(|r| RegionMeta {
                name: r.name.clone(),
                rank: r.fit.rank,
                rank_estimate: r.fit.rank_estimate,
                rank_clamped: r.fit.rank_clamped,
                centered: r.fit.basis.mean.is_some(),
                singular_values: r.fit.basis.singular_values.clone(),
                location_ids: r.location_ids.clone(),
                pcp: r.fit.pcp.clone(),
                sigma_estimate: r.fit.sigma_estimate,
            })
            .collect(),
    };
    let mut files = Vec::new();
    for region in &model.regions {
        for (name, bytes) in REGION_FILES.iter().zip(region_file_bytes(region)?) {
            files.push((format!("{}/{name}", region.name), bytes));
        }
    }
    let body = serde_json::to_value(&meta).map_err(|e| Error::Schema(e.to_string()))?;
    let hash = content_hash(&serde_json::to_vec(&body).map_err(|e| Error::Schema(e.to_string()))?, &files);

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (rel, bytes) in &files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
    }
    let mut obj = match body {
        Value::Object(obj) => obj,
        _ => unreachable!("model metadata serializes to an object"),
    };
    obj.insert("content_hash".into(), Value::String(hash.clone()));
    write_json(&dir.join("meta.json"), &Value::Object(obj))?;
    Ok(hash)
}

fn read_matrix_csv(bytes: &[u8], source: &str, ids: &[String], cols: usize) -> Result<DenseMatrix> {
    let (header, rows) = read_table(bytes, source, "location_id")?;
    if header.len() != cols + 1 {
        return Err(Error::Schema(format!("{source}: expected {} value columns", cols)));
    }
    if rows.len() != ids.len() {
        return Err(Error::Schema(format!("{source}: expected {} rows, found {}", ids.len(), rows.len())));
    }
    let mut data = vec![0.0; ids.len() * cols];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols + 1 || row[0].trim() != ids[i] {
            return Err(Error::Schema(format!("{source}: row {} does not match location {:?}", i + 2, ids[i])));
        }
        for k in 0..cols {
            let v = parse_f64(&row[k + 1], || format!("{source}: row {}", i + 2))?;
            if !v.is_finite() {
                return Err(Error::Schema(format!("{source}: non-finite value at row {}", i + 2)));
            }
            data[k * ids.len() + i] = v;
        }
    }
    DenseMatrix::from_column_major(ids.len(), cols, data)
}

/// Loads a model directory, verifying its content hash.
pub fn read_model(dir: &Path) -> Result<ShimModel> {
    let meta_path = dir.join("meta.json");
    let mut value: Value = read_json(&meta_path)?;
    let stored = value
        .as_object_mut()
        .and_then(|o| o.remove("content_hash"))
        .and_then(|v| v.as_str().map(str::to_string))
        .ok_or_else(|| Error::Schema(format!("{}: missing content_hash", meta_path.display())))?;
    let body = serde_json::to_vec(&value).map_err(|e| Error::Schema(e.to_string()))?;
    let meta: ModelMeta =
        serde_json::from_value(value).map_err(|e| Error::Schema(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Schema(format!("unsupported model format {}", meta.format_version)));
    }

    let mut files = Vec::new();
    let mut regions = Vec::with_capacity(meta.regions.len());
    let index_of: std::collections::HashMap<&str, usize> =
        meta.location_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    for rm in &meta.regions {
        check_region_name(&rm.name)?;
        let mut raw = Vec::new();
        for name in REGION_FILES {
            let rel = format!("{}/{name}", rm.name);
            let bytes = read_bytes(&dir.join(&rel))?;
            raw.push(bytes.clone());
            files.push((rel, bytes));
        }
        let src = |f: &str| dir.join(&rm.name).join(f).display().to_string();
        let modes = read_matrix_csv(&raw[0], &src("basis.csv"), &rm.location_ids, rm.rank)?;
        let mean = read_matrix_csv(&raw[1], &src("mean.csv"), &rm.location_ids, 1)?;
        let sensors: SensorsFile =
            serde_json::from_slice(&raw[2]).map_err(|e| Error::Schema(format!("{}: {e}", src("sensors.json"))))?;
        if sensors.indices.iter().any(|&i| i >= rm.location_ids.len()) {
            return Err(Error::Schema(format!("{}: sensor index out of range", src("sensors.json"))));
        }
        let location_indices = rm
            .location_ids
            .iter()
            .map(|id| {
                index_of
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("region {:?} names unknown location {id:?}", rm.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let basis = FeatureBasis::new(modes, rm.singular_values.clone(), rm.centered.then(|| mean.column_vec(0)))?;
        regions.push(RegionModel {
            name: rm.name.clone(),
            location_indices,
            location_ids: rm.location_ids.clone(),
            fit: RegionFit {
                basis,
                sensors: SensorSet {
                    indices: sensors.indices,
                    scores: sensors.scores,
                    rank_deficient: sensors.rank_deficient,
                },
                rank: rm.rank,
                rank_estimate: rm.rank_estimate,
                rank_clamped: rm.rank_clamped,
                pcp: rm.pcp.clone(),
                sigma_estimate: rm.sigma_estimate,
            },
        });
    }
    let actual = content_hash(&body, &files);
    if actual != stored {
        return Err(Error::Schema(format!(
            "{}: content hash mismatch (stored {stored}, computed {actual})",
            dir.display()
        )));
    }
    Ok(ShimModel {
        location_ids: meta.location_ids,
        training_units: meta.training_units,
        gap_unit: meta.gap_unit,
        config: meta.config,
        regions,
    })
}

/// Cross-validation output bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub report: CrossValReport,
    pub comparison: BaselineComparison,
    pub summary: Vec<SummaryRow>,
}

fn histogram_rows(region: &str, arm: &str, h: &Histogram) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        region.to_string(),
        arm.to_string(),
        String::new(),
        format_f64(h.edges[0]),
        h.underflow.to_string(),
    ]];
    for (k, c) in h.counts.iter().enumerate() {
        rows.push(vec![
            region.to_string(),
            arm.to_string(),
            format_f64(h.edges[k]),
            format_f64(h.edges[k + 1]),
            c.to_string(),
        ]);
    }
    rows.push(vec![
        region.to_string(),
        arm.to_string(),
        format_f64(*h.edges.last().expect("histogram has edges")),
        String::new(),
        h.overflow.to_string(),
    ]);
    rows
}

/// Long-format histogram table; blank bounds mark the open-ended bins.
pub fn histogram_csv_bytes(report: &CrossValReport) -> Result<Vec<u8>> {
    let header: Vec<String> = ["region", "arm", "log10_lower", "log10_upper", "count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for r in &report.regions {
        rows.extend(histogram_rows(&r.name, "optimal", &r.optimal.histogram));
        rows.extend(histogram_rows(&r.name, "random", &r.random.histogram));
    }
    csv_bytes(&header, rows.into_iter())
}

pub const SUMMARY_COLUMNS: [&str; 4] = ["region", "percent_accurate", "optimal_sensors_avg", "total_points"];

pub fn summary_csv_bytes(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let header: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.region.clone(),
                format!("{:.2}", r.percent_accurate),
                format!("{:.2}", r.optimal_sensors_avg),
                r.total_points.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::model::train_model;
    use crate::pipeline::segmentation::ShimSegmentation;
    use crate::synth::generate;

    #[test]
    fn float_text_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, -0.0, f64::MIN_POSITIVE, 123456789.123456789] {
            let back: f64 = format_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn gap_csv_round_trip_is_bit_exact() {
        let (ds, _) = generate(&SynthConfig::with_shape(50, 6, 2, 3)).unwrap();
        let bytes = gap_csv_bytes(&ds).unwrap();
        let back = parse_gap_csv(&bytes, "mem", MissingPolicy::Reject).unwrap();
        assert_eq!(back.location_ids, ds.location_ids);
        assert_eq!(back.unit_ids, ds.unit_ids);
        for (a, b) in back.matrix.iter().zip(ds.matrix.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(String::from_utf8(bytes).unwrap().starts_with("location_id,unit_000,"));
    }

    #[test]
    fn blank_cells_follow_the_missing_policy() {
        let text = b"location_id,a,b,c\nx,1,,3\ny,4,5,6\n";
        assert!(parse_gap_csv(text, "mem", MissingPolicy::Reject).is_err());
        let ds = parse_gap_csv(text, "mem", MissingPolicy::ImputeLocationMean).unwrap();
        assert_eq!(ds.matrix[(0, 1)], 2.0);
        assert_eq!(ds.imputed, 1);
        assert!(matches!(
            parse_gap_csv(b"loc,a\nx,1\n", "mem", MissingPolicy::Reject),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            parse_gap_csv(b"location_id,a\nx,abc\n", "mem", MissingPolicy::Reject),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn segmentation_keeps_region_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.json");
        let regions = vec![
            ("zeta".to_string(), vec!["p2".to_string(), "p1".to_string()]),
            ("alpha".to_string(), vec!["p0".to_string()]),
        ];
        write_segmentation(&path, &regions).unwrap();
        assert_eq!(read_segmentation(&path).unwrap(), regions);
    }

    #[test]
    fn model_directory_round_trips_and_detects_tampering() {
        let (ds, _) = generate(&SynthConfig::with_shape(80, 10, 3, 8)).unwrap();
        let seg = ShimSegmentation::contiguous(80, 2).unwrap();
        let model = train_model(&ds, &seg, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hash = write_model(dir.path(), &model).unwrap();
        let back = read_model(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(write_model(dir.path(), &back).unwrap(), hash);

        let mean_path = dir.path().join("shim_1/mean.csv");
        let text = fs::read_to_string(&mean_path).unwrap();
        fs::write(&mean_path, text.replacen("p0000,", "p0000,1", 1)).unwrap();
        assert!(matches!(read_model(dir.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn unsafe_region_names_are_rejected() {
        assert!(check_region_name("../etc").is_err());
        assert!(check_region_name("shim_1").is_ok());
    }
}
