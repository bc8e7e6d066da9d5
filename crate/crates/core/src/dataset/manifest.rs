use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::label::{ClassLabel, PerClass};
use crate::error::{Error, Result};
use crate::postprocess::BoundingBox;

/// One ground-truth egg box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: ClassLabel,
    pub bbox: BoundingBox,
}

impl Annotation {
    pub fn new(label: ClassLabel, bbox: BoundingBox) -> Self {
        Self { label, bbox }
    }

    /// Checks `0 <= xmin < xmax <= width` and the same vertically.
    pub fn check_bounds(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        let b = self.bbox;
        let finite = [b.xmin, b.ymin, b.xmax, b.ymax].iter().all(|v| v.is_finite());
        if !finite {
            return Err(format!("{} box has non-finite coordinates", self.label));
        }
        if !(0.0 <= b.xmin && b.xmin < b.xmax && b.xmax <= width as f64) {
            return Err(format!(
                "{} box x-range [{}, {}] invalid for width {width}",
                self.label, b.xmin, b.xmax
            ));
        }
        if !(0.0 <= b.ymin && b.ymin < b.ymax && b.ymax <= height as f64) {
            return Err(format!(
                "{} box y-range [{}, {}] invalid for height {height}",
                self.label, b.ymin, b.ymax
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    /// Acquisition provenance (microscope model, phone camera, ...).
    #[serde(default)]
    pub device: Option<String>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl ImageRecord {
    /// The most frequent label; ties go to the earlier class. `None` for
    /// background-only images.
    pub fn majority_label(&self) -> Option<ClassLabel> {
        let mut counts = [0usize; ClassLabel::COUNT];
        for a in &self.annotations {
            counts[a.label.index()] += 1;
        }
        let best = *counts.iter().max()?;
        if best == 0 {
            return None;
        }
        counts.iter().position(|&c| c == best).and_then(ClassLabel::from_index)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                reason: "width and height must be positive".into(),
            });
        }
        for a in &self.annotations {
            a.check_bounds(self.width, self.height)
                .map_err(|reason| Error::InvalidRecord {
                    id: self.id.clone(),
                    reason,
                })?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    images: Vec<ImageRecord>,
}

/// A validated image corpus. `class_counts` is derived from the records
/// and never read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ImageRecord>,
    class_counts: PerClass<usize>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    /// Validates records: positive sizes, in-bounds non-degenerate boxes,
    /// unique ids.
    pub fn new(records: Vec<ImageRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            r.validate()?;
        }
        let class_counts = histogram(&records);
        Ok(Self {
            records,
            class_counts,
            base_dir: base_dir.into(),
        })
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>, origin: &Path) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        Self::new(file.images, base_dir)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ManifestFile {
            images: self.records.clone(),
        })
        .expect("manifest serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn class_counts(&self) -> &PerClass<usize> {
        &self.class_counts
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Absolute (or base-relative) location of a record's image file.
    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Sub-manifest restricted to `ids` (kept in manifest order).
    pub fn subset(&self, ids: &HashSet<&str>) -> DatasetManifest {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| ids.contains(r.id.as_str()))
            .cloned()
            .collect();
        let class_counts = histogram(&records);
        DatasetManifest {
            records,
            class_counts,
            base_dir: self.base_dir.clone(),
        }
    }
}

fn histogram(records: &[ImageRecord]) -> PerClass<usize> {
    let mut counts = PerClass::<usize>::default();
    for a in records.iter().flat_map(|r| &r.annotations) {
        counts[a.label] += 1;
    }
    counts
}

/// Reads and validates a manifest; relative image paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::from_json(&text, base, path)
}

/// Annotation (not image) count per class.
pub fn class_histogram(manifest: &DatasetManifest) -> PerClass<usize> {
    histogram(manifest.records())
}
