use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::dataset::GapDataset;

/// A named subset of dataset locations (global row indices, ascending).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub indices: Vec<usize>,
}

/// Disjoint shim regions over the dataset's locations.
///
/// Locations outside every region are not modelled and are reported as
/// absent in predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimSegmentation {
    pub regions: Vec<Region>,
}

impl ShimSegmentation {
    /// One region named `name` covering all `n` locations.
    pub fn whole(n: usize, name: &str) -> Self {
        ShimSegmentation {
            regions: vec![Region {
                name: name.to_string(),
                indices: (0..n).collect(),
            }],
        }
    }

    /// `count` contiguous blocks of nearly equal size, named `shim_1..`.
    pub fn contiguous(n: usize, count: usize) -> Result<Self> {
        if count == 0 || count > n {
            return Err(Error::InvalidParameter(format!(
                "cannot split {n} locations into {count} regions"
            )));
        }
        let regions = (0..count)
            .map(|k| Region {
                name: format!("shim_{}", k + 1),
                indices: (k * n / count..(k + 1) * n / count).collect(),
            })
            .collect();
        Ok(ShimSegmentation { regions })
    }

    /// Resolves region name to location-id lists against a dataset.
    pub fn from_location_ids(dataset: &GapDataset, regions: &[(String, Vec<String>)]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = dataset
            .location_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let resolved = regions
            .iter()
            .map(|(name, ids)| {
                let mut indices = ids
                    .iter()
                    .map(|id| {
                        lookup.get(id.as_str()).copied().ok_or_else(|| {
                            Error::Schema(format!("region {name:?} names unknown location {id:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                indices.sort_unstable();
                Ok(Region { name: name.clone(), indices })
            })
            .collect::<Result<Vec<_>>>()?;
        let seg = ShimSegmentation { regions: resolved };
        seg.validate(dataset.locations())?;
        Ok(seg)
    }

    /// Region name to location-id lists, the form stored in manifests.
    pub fn to_location_ids(&self, dataset: &GapDataset) -> Vec<(String, Vec<String>)> {
        self.regions
            .iter()
            .map(|r| {
                let ids = r.indices.iter().map(|&i| dataset.location_ids[i].clone()).collect();
                (r.name.clone(), ids)
            })
            .collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner: Vec<Option<&str>> = vec![None; n];
        let mut names = std::collections::HashSet::new();
        for region in &self.regions {
            if !names.insert(region.name.as_str()) {
                return Err(Error::Schema(format!("duplicate region name {:?}", region.name)));
            }
            if region.indices.is_empty() {
                return Err(Error::Schema(format!("region {:?} is empty", region.name)));
            }
            for &i in &region.indices {
                let slot = owner.get_mut(i).ok_or_else(|| {
                    Error::Schema(format!("region {:?} index {i} out of range", region.name))
                })?;
                if let Some(prev) = slot {
                    return Err(Error::Schema(format!(
                        "location {i} belongs to both {prev:?} and {:?}",
                        region.name
                    )));
                }
                *slot = Some(&region.name);
            }
        }
        if self.regions.is_empty() {
            return Err(Error::Schema("segmentation has no regions".into()));
        }
        Ok(())
    }
}
