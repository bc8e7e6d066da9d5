use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::dataset::{DatasetManifest, ImageRecord};
use crate::degrade::{apply_spec, image_seed, sample_spec, to_grayscale, DegradationRanges, Image};
use crate::domain::DomainVariant;
use crate::enhance::EnhancerModel;
use crate::error::{Error, Result};

/// Where decoded source images come from.
pub trait ImageSource: Send + Sync {
    fn load(&self, record: &ImageRecord) -> Result<Image>;
}

/// Decodes image files relative to a manifest's base directory.
pub struct FileSource {
    base_dir: PathBuf,
}

impl FileSource {
    pub fn new(manifest: &DatasetManifest) -> Self {
        Self {
            base_dir: manifest.base_dir().to_path_buf(),
        }
    }
}

impl ImageSource for FileSource {
    fn load(&self, record: &ImageRecord) -> Result<Image> {
        let p = std::path::Path::new(&record.path);
        let path = if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) };
        let img = Image::load(&path)?;
        if img.dims() != (record.width as usize, record.height as usize) {
            return Err(Error::InvalidRecord {
                id: record.id.clone(),
                reason: format!(
                    "file is {}x{} but the manifest says {}x{}",
                    img.width(),
                    img.height(),
                    record.width,
                    record.height
                ),
            });
        }
        Ok(img)
    }
}

/// Images held in memory, keyed by record id.
#[derive(Default)]
pub struct MemorySource {
    images: HashMap<String, Image>,
}

impl MemorySource {
    pub fn new(images: impl IntoIterator<Item = (String, Image)>) -> Self {
        Self {
            images: images.into_iter().collect(),
        }
    }
}

impl ImageSource for MemorySource {
    fn load(&self, record: &ImageRecord) -> Result<Image> {
        self.images
            .get(&record.id)
            .cloned()
            .ok_or_else(|| Error::UnknownImage(record.id.clone()))
    }
}

/// Whether a view feeds detector training or evaluation. Training views
/// are degraded with the training ranges (the enhancer's input domain),
/// test views with the wider test ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    fn stream(self) -> &'static str {
        match self {
            Role::Train => "train-degrade",
            Role::Test => "test-degrade",
        }
    }
}

/// Everything a domain view can depend on.
pub struct DomainContext<'a> {
    pub source: &'a dyn ImageSource,
    pub seed: u64,
    pub train_ranges: DegradationRanges,
    pub test_ranges: DegradationRanges,
    pub pix2pix: Option<&'a EnhancerModel>,
    pub cyclegan: Option<&'a EnhancerModel>,
}

impl DomainContext<'_> {
    fn ranges(&self, role: Role) -> &DegradationRanges {
        match role {
            Role::Train => &self.train_ranges,
            Role::Test => &self.test_ranges,
        }
    }
}

/// Materialises `records` in `variant`. Annotations are untouched: no view
/// moves pixels geometrically.
pub fn build_domain(
    records: &[&ImageRecord],
    variant: DomainVariant,
    role: Role,
    ctx: &DomainContext<'_>,
) -> Result<Vec<Image>> {
    let enhancer = match variant {
        DomainVariant::EnhancedPix2Pix => Some(ctx.pix2pix.ok_or(Error::MissingModel(variant.display_name().into()))?),
        DomainVariant::EnhancedCycleGan => Some(ctx.cyclegan.ok_or(Error::MissingModel(variant.display_name().into()))?),
        _ => None,
    };
    let ranges = ctx.ranges(role);
    records
        .par_iter()
        .map(|r| {
            let img = ctx.source.load(r)?;
            Ok(match variant {
                DomainVariant::Original => img,
                DomainVariant::Grayscale => to_grayscale(&img),
                _ => {
                    let spec = sample_spec(image_seed(ctx.seed, role.stream(), &r.id), ranges);
                    let low = apply_spec(&img, &spec);
                    match enhancer {
                        Some(m) => m.enhance(&low),
                        None => low,
                    }
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhance::{build_enhancer, GeneratorConfig};
    use crate::synth::generate_toy_corpus;

    #[test]
    fn views_follow_their_variant() {
        let corpus = generate_toy_corpus(6, 32, 3);
        let source = MemorySource::new(
            corpus
                .manifest
                .records()
                .iter()
                .zip(&corpus.images)
                .map(|(r, i)| (r.id.clone(), i.clone())),
        );
        let records: Vec<&ImageRecord> = corpus.manifest.records().iter().collect();
        let gen = build_enhancer(
            &GeneratorConfig {
                input_size: 16,
                depth: 2,
                base_channels: 4,
                skip_connections: true,
            },
            0,
        )
        .unwrap();
        let mut ctx = DomainContext {
            source: &source,
            seed: 5,
            train_ranges: DegradationRanges::train_default(),
            test_ranges: DegradationRanges::test_default(),
            pix2pix: Some(&gen),
            cyclegan: None,
        };

        let orig = build_domain(&records, DomainVariant::Original, Role::Test, &ctx).unwrap();
        assert_eq!(orig, corpus.images);

        let gray = build_domain(&records, DomainVariant::Grayscale, Role::Test, &ctx).unwrap();
        for img in &gray {
            assert!(img.data().chunks_exact(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        }

        let low = build_domain(&records, DomainVariant::LowQuality, Role::Test, &ctx).unwrap();
        assert_eq!(low, build_domain(&records, DomainVariant::LowQuality, Role::Test, &ctx).unwrap());
        assert_ne!(low, build_domain(&records, DomainVariant::LowQuality, Role::Train, &ctx).unwrap());
        let enhanced = build_domain(&records, DomainVariant::EnhancedPix2Pix, Role::Test, &ctx).unwrap();
        assert_eq!(enhanced[0], gen.enhance(&low[0]));

        assert!(matches!(
            build_domain(&records, DomainVariant::EnhancedCycleGan, Role::Test, &ctx),
            Err(Error::MissingModel(_))
        ));
        ctx.pix2pix = None;
        assert!(build_domain(&records, DomainVariant::EnhancedPix2Pix, Role::Test, &ctx).is_err());
    }
}
