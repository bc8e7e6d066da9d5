use std::sync::OnceLock;

use ovadet_core::dataset::{Annotation, ClassLabel};
use ovadet_core::degrade::Image;
use ovadet_core::detect::{build_detector, train_detector, DetectorConfig, DetectorModel};
use ovadet_core::nn::AdamConfig;
use ovadet_core::postprocess::{iou, BoundingBox};
use ovadet_core::synth::generate_toy_corpus;
use ovadet_core::Error;
use proptest::prelude::*;

fn toy_data(n: usize, seed: u64) -> Vec<(Image, Vec<Annotation>)> {
    let c = generate_toy_corpus(n, 64, seed);
    c.images.iter().cloned().zip(c.manifest.records().iter().map(|r| r.annotations.clone())).collect()
}

fn config() -> DetectorConfig {
    DetectorConfig { optimizer: AdamConfig { lr: 2e-3, ..AdamConfig::default() }, ..DetectorConfig::default() }
}

fn trained() -> &'static DetectorModel {
    static MODEL: OnceLock<DetectorModel> = OnceLock::new();
    MODEL.get_or_init(|| train_detector(&build_detector(&config(), 1).unwrap(), &toy_data(60, 2), 15, None, 3).unwrap())
}

#[test]
fn build_is_seeded_and_validated() {
    let img = &toy_data(1, 9)[0].0;
    let a = build_detector(&config(), 5).unwrap();
    let b = build_detector(&config(), 5).unwrap();
    assert_eq!(a.infer(img, 0.0), b.infer(img, 0.0));
    assert_eq!(a.config().head_classes(), 6);
    let bad = DetectorConfig { backbone: "vgg".into(), ..config() };
    assert!(matches!(build_detector(&bad, 0), Err(Error::UnknownBackbone(name)) if name == "vgg"));
}

#[test]
fn untrained_model_at_threshold_one_returns_little() {
    let m = build_detector(&config(), 5).unwrap();
    let img = &toy_data(1, 9)[0].0;
    assert!(m.infer(img, 1.0).len() <= 1);
}

#[test]
fn zero_epochs_and_invalid_input() {
    let m = build_detector(&config(), 5).unwrap();
    let img = &toy_data(1, 9)[0].0;
    let same = train_detector(&m, &[], 0, None, 0).unwrap();
    assert_eq!(same.infer(img, 0.0), m.infer(img, 0.0));
    assert!(matches!(train_detector(&m, &[], 1, None, 0), Err(Error::EmptyInput(_))));
    let outside = vec![(Image::new(64, 64), vec![Annotation::new(ClassLabel::HW, BoundingBox::new(50.0, 50.0, 70.0, 60.0))])];
    assert!(matches!(train_detector(&m, &outside, 1, None, 0), Err(Error::InvalidRecord { .. })));
}

#[test]
fn background_only_images_train() {
    let m = build_detector(&config(), 5).unwrap();
    let data = vec![(Image::filled(64, 64, [0.4, 0.5, 0.6]), vec![]), (Image::filled(64, 64, [0.2, 0.2, 0.2]), vec![])];
    let t = train_detector(&m, &data, 2, None, 0).unwrap();
    assert!(t.meta().history.iter().all(|h| h.total().is_finite()));
}

#[test]
fn overfits_five_images() {
    let data = toy_data(5, 31);
    let m = train_detector(&build_detector(&config(), 2).unwrap(), &data, 200, None, 4).unwrap();
    assert!(m.meta().history.iter().all(|h| h.total().is_finite()));
    for (i, (img, anns)) in data.iter().enumerate() {
        let dets = m.infer(img, 0.9);
        for a in anns {
            assert!(
                dets.iter().any(|d| d.label == a.label && iou(&d.bbox, &a.bbox) > 0.5),
                "image {i}: {a:?} not recovered from {dets:?}"
            );
        }
    }
}

#[test]
fn held_out_single_object_is_found() {
    let m = trained();
    let held = toy_data(40, 77);
    let singles: Vec<_> = held.iter().filter(|(_, a)| a.len() == 1).collect();
    assert!(!singles.is_empty());
    let found = singles.iter().filter(|(img, a)| m.infer(img, 0.5).iter().any(|d| iou(&d.bbox, &a[0].bbox) > 0.5)).count();
    assert!(found * 2 > singles.len(), "{found}/{}", singles.len());
}

#[test]
fn detections_stay_in_original_coordinates() {
    let m = trained();
    let (img, anns) = &toy_data(1, 5)[0];
    let big = img.resize_bilinear(128, 96);
    for d in m.infer(&big, 0.0) {
        assert!(d.bbox.is_valid() && d.bbox.xmax <= 128.0 && d.bbox.ymax <= 96.0);
    }
    let scaled: Vec<BoundingBox> = anns.iter().map(|a| a.bbox.scale(2.0, 1.5)).collect();
    let dets = m.infer(&big, 0.5);
    assert!(scaled.iter().any(|b| dets.iter().any(|d| iou(&d.bbox, b) > 0.3)), "{dets:?} vs {scaled:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn threshold_is_monotone_and_inference_deterministic(seed in 0u64..1000, t1 in 0.0f64..1.0, dt in 0.0f64..0.5) {
        let m = trained();
        let img = &toy_data(1, seed)[0].0;
        let t2 = (t1 + dt).min(1.0);
        let low = m.infer(img, t1);
        let high = m.infer(img, t2);
        prop_assert!(high.iter().all(|d| low.contains(d)));
        prop_assert!(low.iter().all(|d| d.score >= t1 && d.bbox.is_valid() && d.bbox.xmax <= 64.0 && d.bbox.ymax <= 64.0));
        prop_assert!(low.len() <= m.config().max_detections);
        prop_assert_eq!(low, m.infer(img, t1));
    }
}
