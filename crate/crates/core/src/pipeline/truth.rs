//! Ground-truth labels. Kept apart from [`Dataset`](crate::Dataset) so no
//! trainer can take them as input.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::encode::{EncodingManifest, GroupKey};
use crate::error::{Error, Result};
use crate::model::StatementId;

/// The true value of each labeled `(entity, attribute)` group.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    values: BTreeMap<GroupKey, String>,
}

impl GroundTruth {
    pub fn new(values: BTreeMap<GroupKey, String>) -> Self {
        GroundTruth { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &BTreeMap<GroupKey, String> {
        &self.values
    }

    pub fn get(&self, group: &GroupKey) -> Option<&str> {
        self.values.get(group).map(String::as_str)
    }

    /// Binary labels of every statement in a labeled group.
    pub fn statement_labels(&self, manifest: &EncodingManifest) -> BTreeMap<StatementId, bool> {
        manifest
            .statements
            .iter()
            .enumerate()
            .filter_map(|(i, key)| self.get(&key.group()).map(|v| (StatementId(i), v == key.value)))
            .collect()
    }
}

#[derive(Deserialize)]
struct TruthRow {
    entity: String,
    attribute: String,
    value: String,
}

/// Reads a truth CSV (`entity,attribute,value`). Groups the manifest does
/// not know are skipped with a warning.
pub fn load_ground_truth(path: &Path, manifest: &EncodingManifest) -> Result<GroundTruth> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ground_truth(file, manifest)
}

pub fn read_ground_truth<R: std::io::Read>(reader: R, manifest: &EncodingManifest) -> Result<GroundTruth> {
    let known = manifest.groups();
    let mut values = BTreeMap::new();
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for record in csv.deserialize::<TruthRow>() {
        let row = record?;
        let group = GroupKey::new(row.entity, row.attribute);
        if !known.contains_key(&group) {
            log::warn!("truth label for unknown group {}/{} skipped", group.entity, group.attribute);
            continue;
        }
        if let Some(prev) = values.insert(group.clone(), row.value.clone()) {
            if prev != row.value {
                return Err(Error::InvalidDataset(format!(
                    "truth file gives {}/{} two values ({prev:?}, {:?})",
                    group.entity, group.attribute, row.value
                )));
            }
        }
    }
    if values.is_empty() {
        log::warn!("no labeled statements");
    }
    Ok(GroundTruth { values })
}
