use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::label::ClassLabel;
use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Fold index per record id. Serialises as `{"k":..,"seed":..,"assignment":{id: fold}}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    /// Ids held out in `fold`, sorted.
    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Ids used for training when `fold` is held out, sorted.
    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("folds serialise");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let folds: Self = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if folds.k < 2 || folds.assignment.values().any(|&f| f >= folds.k) {
            return Err(Error::InvalidConfig(format!(
                "{}: fold indices must lie in [0, k) with k >= 2",
                path.display()
            )));
        }
        Ok(folds)
    }

    /// Checks that this assignment covers exactly the manifest's records.
    pub fn check_covers(&self, manifest: &DatasetManifest) -> Result<()> {
        let ids: HashSet<&str> = manifest.records().iter().map(|r| r.id.as_str()).collect();
        if ids.len() != self.assignment.len() || !self.assignment.keys().all(|id| ids.contains(id.as_str())) {
            return Err(Error::InvalidConfig(
                "fold assignment does not cover the manifest's records".into(),
            ));
        }
        Ok(())
    }
}

/// Stratified k-fold split by each image's majority label.
///
/// Within a class, ids are sorted and then shuffled by a stream keyed on
/// `(seed, class)`, so the result does not depend on record order. Folds are
/// dealt round-robin, continuing across classes, which keeps every class
/// and the fold totals balanced to within one image.
pub fn stratified_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    let mut strata: BTreeMap<Option<ClassLabel>, Vec<&str>> = BTreeMap::new();
    for r in manifest.records() {
        strata.entry(r.majority_label()).or_default().push(&r.id);
    }
    for (label, ids) in &strata {
        if let Some(label) = label {
            if ids.len() < k {
                return Err(Error::TooFewImages {
                    label: label.to_string(),
                    count: ids.len(),
                    k,
                });
            }
        }
    }

    let mut assignment = BTreeMap::new();
    let mut offset = 0usize;
    for (label, mut ids) in strata {
        ids.sort_unstable();
        let tag = label.map_or("background", ClassLabel::as_str);
        let mut rng = rng_for(seed, &["kfold", tag]);
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            assignment.insert((*id).to_owned(), (offset + i) % k);
        }
        offset = (offset + ids.len()) % k;
    }
    Ok(FoldAssignment { k, seed, assignment })
}
