use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const DEFAULT_GAP_UNIT: &str = "in";

/// Gap measurements with rows as aligned locations and columns as units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDataset {
    pub matrix: DenseMatrix,
    pub location_ids: Vec<String>,
    pub unit_ids: Vec<String>,
    pub units_label: String,
    pub gap_unit: String,
    /// Number of missing entries filled with per-location means at ingestion.
    #[serde(default)]
    pub imputed: usize,
}

/// How ingestion treats absent or NaN readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    #[default]
    Reject,
    /// Fill with the mean of the same location across the other units.
    ImputeLocationMean,
}

/// One unit's scan as a location-id to gap map.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScan {
    pub unit_id: String,
    pub gaps: BTreeMap<String, f64>,
}

impl UnitScan {
    pub fn new(unit_id: impl Into<String>, gaps: impl IntoIterator<Item = (String, f64)>) -> Self {
        UnitScan {
            unit_id: unit_id.into(),
            gaps: gaps.into_iter().collect(),
        }
    }
}

impl GapDataset {
    pub fn new(matrix: DenseMatrix, location_ids: Vec<String>, unit_ids: Vec<String>) -> Result<Self> {
        if location_ids.len() != matrix.rows() || unit_ids.len() != matrix.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix with {} location ids and {} unit ids",
                matrix.rows(),
                matrix.cols(),
                location_ids.len(),
                unit_ids.len()
            )));
        }
        check_unique("location", &location_ids)?;
        check_unique("unit", &unit_ids)?;
        Ok(GapDataset {
            matrix,
            location_ids,
            unit_ids,
            units_label: "units".into(),
            gap_unit: DEFAULT_GAP_UNIT.into(),
            imputed: 0,
        })
    }

    pub fn locations(&self) -> usize {
        self.matrix.rows()
    }

    pub fn units(&self) -> usize {
        self.matrix.cols()
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == id)
    }

    /// Column `j` as a field vector.
    pub fn unit_field(&self, j: usize) -> Vec<f64> {
        self.matrix.column_vec(j)
    }

    /// Dataset restricted to the listed units, in the given order.
    pub fn select_units(&self, columns: &[usize]) -> Result<GapDataset> {
        let matrix = self.matrix.select_columns(columns)?;
        Ok(GapDataset {
            matrix,
            location_ids: self.location_ids.clone(),
            unit_ids: columns.iter().map(|&j| self.unit_ids[j].clone()).collect(),
            units_label: self.units_label.clone(),
            gap_unit: self.gap_unit.clone(),
            imputed: self.imputed,
        })
    }
}

fn check_unique(kind: &str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Ingestion(format!("duplicate {kind} id {id:?}")));
        }
    }
    Ok(())
}

/// Stacks per-unit scans as columns.
///
/// Columns are sorted by unit id and rows by location id (byte-wise string
/// order). Every unit must cover exactly the same location ids; the first
/// unit (in sorted order) defines the expected set.
pub fn build_gap_matrix(scans: &[UnitScan], policy: MissingPolicy) -> Result<GapDataset> {
    if scans.is_empty() {
        return Err(Error::Ingestion("no unit scans supplied".into()));
    }
    let mut order: Vec<&UnitScan> = scans.iter().collect();
    order.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
    check_unique("unit", &order.iter().map(|s| s.unit_id.clone()).collect::<Vec<_>>())?;

    let all: BTreeSet<&String> = order.iter().flat_map(|s| s.gaps.keys()).collect();
    let expected: BTreeSet<&String> = order[0].gaps.keys().collect();
    if policy == MissingPolicy::Reject {
        for scan in &order {
            let have: BTreeSet<&String> = scan.gaps.keys().collect();
            let missing: Vec<String> = all.difference(&have).map(|s| s.to_string()).collect();
            if !missing.is_empty() {
                return Err(Error::MismatchedLocations {
                    unit: scan.unit_id.clone(),
                    missing,
                });
            }
        }
        debug_assert_eq!(all, expected);
    }

    let location_ids: Vec<String> = all.iter().map(|s| s.to_string()).collect();
    if location_ids.is_empty() {
        return Err(Error::Ingestion("scans contain no locations".into()));
    }
    let (n, m) = (location_ids.len(), order.len());
    let mut cells = vec![f64::NAN; n * m];
    for (j, scan) in order.iter().enumerate() {
        for (i, id) in location_ids.iter().enumerate() {
            if let Some(&v) = scan.gaps.get(id) {
                if v.is_infinite() {
                    return Err(Error::Ingestion(format!(
                        "infinite gap for unit {:?} at location {id:?}",
                        scan.unit_id
                    )));
                }
                cells[j * n + i] = v;
            }
        }
    }
    let unit_ids = order.iter().map(|s| s.unit_id.clone()).collect();
    assemble(cells, location_ids, unit_ids, policy)
}

/// Builds a dataset from column-major cells that may contain NaN for
/// missing readings, applying `policy`.
pub(crate) fn assemble(
    mut cells: Vec<f64>,
    location_ids: Vec<String>,
    unit_ids: Vec<String>,
    policy: MissingPolicy,
) -> Result<GapDataset> {
    let (n, m) = (location_ids.len(), unit_ids.len());
    let mut imputed = 0;
    for i in 0..n {
        let row: Vec<f64> = (0..m).map(|j| cells[j * n + i]).collect();
        let present: Vec<f64> = row.iter().copied().filter(|v| !v.is_nan()).collect();
        if present.len() == m {
            continue;
        }
        match policy {
            MissingPolicy::Reject => {
                let j = row.iter().position(|v| v.is_nan()).unwrap_or(0);
                return Err(Error::MismatchedLocations {
                    unit: unit_ids[j].clone(),
                    missing: vec![location_ids[i].clone()],
                });
            }
            MissingPolicy::ImputeLocationMean => {
                if present.is_empty() {
                    return Err(Error::Ingestion(format!(
                        "location {:?} has no readings to impute from",
                        location_ids[i]
                    )));
                }
                let mean = present.iter().sum::<f64>() / present.len() as f64;
                for j in 0..m {
                    if cells[j * n + i].is_nan() {
                        cells[j * n + i] = mean;
                        imputed += 1;
                    }
                }
            }
        }
    }
    let matrix = DenseMatrix::new(DMatrix::from_vec(n, m, cells))?;
    let mut ds = GapDataset::new(matrix, location_ids, unit_ids)?;
    ds.imputed = imputed;
    Ok(ds)
}
