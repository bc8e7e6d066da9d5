//! Seeded inputs shared by the benchmarks.

use ovadet_core::dataset::{Annotation, ClassLabel};
use ovadet_core::detect::RawDetection;
use ovadet_core::postprocess::BoundingBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_box<R: Rng>(rng: &mut R, extent: f64) -> BoundingBox {
    let (x, y) = (rng.random_range(0.0..extent * 0.8), rng.random_range(0.0..extent * 0.8));
    let (w, h) = (rng.random_range(4.0..extent * 0.2), rng.random_range(4.0..extent * 0.2));
    BoundingBox::new(x, y, x + w, y + h)
}

/// `n` detections clustered around a few centres, as a detector emits them.
pub fn detections(n: usize, seed: u64) -> Vec<RawDetection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<BoundingBox> = (0..5).map(|_| random_box(&mut rng, 256.0)).collect();
    (0..n)
        .map(|i| {
            let c = centres[i % centres.len()];
            let j = |rng: &mut ChaCha8Rng| rng.random_range(-4.0..4.0);
            let bbox = BoundingBox::new(c.xmin + j(&mut rng), c.ymin + j(&mut rng), c.xmax + j(&mut rng), c.ymax + j(&mut rng));
            RawDetection {
                bbox,
                label: ClassLabel::ALL[rng.random_range(0..5)],
                score: rng.random_range(0.0..1.0),
            }
        })
        .collect()
}

pub fn truth(n: usize, seed: u64) -> Vec<Annotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Annotation::new(ClassLabel::ALL[rng.random_range(0..5)], random_box(&mut rng, 256.0)))
        .collect()
}
