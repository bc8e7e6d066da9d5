//! Annotated corpus: class registry, manifest loading/validation and the
//! stratified k-fold splitter.

mod folds;
mod label;
mod manifest;

pub use folds::{stratified_kfold, FoldAssignment};
pub use label::{ClassLabel, PerClass};
pub use manifest::{class_histogram, load_manifest, Annotation, DatasetManifest, ImageRecord};

/// Per-class image counts of the published parasitic egg corpus.
pub const PAPER_CLASS_COUNTS: [(ClassLabel, usize); 5] = [
    (ClassLabel::AL, 558),
    (ClassLabel::HW, 550),
    (ClassLabel::OV, 549),
    (ClassLabel::TS, 551),
    (ClassLabel::Tri, 699),
];

/// Builds a synthetic manifest with `count` single-egg images per class
/// (paths are placeholders). Used for splitter checks at corpus scale.
pub fn manifest_with_counts(counts: &[(ClassLabel, usize)]) -> DatasetManifest {
    let mut records = Vec::new();
    for &(label, n) in counts {
        for i in 0..n {
            records.push(ImageRecord {
                id: format!("{label}_{i:04}"),
                path: format!("{label}/{i:04}.jpg"),
                width: 640,
                height: 480,
                device: None,
                annotations: vec![Annotation::new(
                    label,
                    crate::postprocess::BoundingBox::new(100.0, 100.0, 200.0, 180.0),
                )],
            });
        }
    }
    DatasetManifest::new(records, "").expect("generated manifest is valid")
}
