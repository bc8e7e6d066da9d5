//! Seeded synthetic degradation, grayscale conversion and box-aware
//! affine augmentation.

mod affine;
mod image;
mod ops;
mod spec;

pub use affine::{affine_augment, affine_augment_annotated, transform_point, AffineSampler, AffineSpec};
pub use image::{images_to_tensor, tensor_to_images, Image};
pub use ops::{brightness_contrast, color_jitter, hsv_to_rgb, motion_blur, motion_kernel, rgb_to_hsv, to_grayscale, LUMA_WEIGHTS};
pub use spec::{
    apply_spec, degrade_corpus, image_seed, make_paired_sample, sample_spec, DegradationRanges, DegradationSpec,
    PairConfig,
};

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn scene(w: usize, h: usize, k: f32) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f32 / w as f32, y as f32 / h as f32);
            [
                (0.5 + 0.5 * (k * fx * 6.0).sin()).clamp(0.0, 1.0),
                fy,
                ((fx + fy) * 0.5 * k).fract(),
            ]
        })
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let r = DegradationRanges::test_default();
        for s in 0..200 {
            let a = sample_spec(s, &r);
            assert_eq!(a, sample_spec(s, &r));
            assert!(a.within(&r));
            assert!(a.blur_angle < 180.0);
        }
        assert_ne!(sample_spec(1, &r), sample_spec(2, &r));
    }

    #[test]
    fn point_ranges_reproduce_the_point() {
        let p = DegradationSpec {
            blur_length: 4,
            blur_angle: 30.0,
            hue_shift: 0.02,
            saturation_factor: 0.8,
            brightness_delta: -0.1,
            contrast_factor: 1.2,
            seed: 9,
        };
        assert_eq!(sample_spec(9, &DegradationRanges::point(&p)), p);
    }

    #[test]
    fn sample_means_match_range_midpoints() {
        let r = DegradationRanges::test_default();
        let n = 10_000;
        let specs: Vec<_> = (0..n).map(|s| sample_spec(s, &r)).collect();
        let check = |name: &str, vals: Vec<f64>, [lo, hi]: [f64; 2], discrete: bool| {
            let mean = vals.iter().sum::<f64>() / n as f64;
            let width = hi - lo;
            let var = if discrete {
                ((width + 1.0).powi(2) - 1.0) / 12.0
            } else {
                width * width / 12.0
            };
            let se = (var / n as f64).sqrt();
            let mid = (lo + hi) / 2.0;
            assert!((mean - mid).abs() < 3.0 * se, "{name}: mean {mean} vs {mid} (se {se})");
        };
        let [blo, bhi] = r.blur_length;
        check("blur_length", specs.iter().map(|s| s.blur_length as f64).collect(), [blo as f64, bhi as f64], true);
        check("blur_angle", specs.iter().map(|s| s.blur_angle as f64).collect(), r.blur_angle, false);
        check("hue_shift", specs.iter().map(|s| s.hue_shift as f64).collect(), r.hue_shift, false);
        check("saturation", specs.iter().map(|s| s.saturation_factor as f64).collect(), r.saturation_factor, false);
        check("brightness", specs.iter().map(|s| s.brightness_delta as f64).collect(), r.brightness_delta, false);
        check("contrast", specs.iter().map(|s| s.contrast_factor as f64).collect(), r.contrast_factor, false);
    }

    #[test]
    fn identity_spec_is_identity() {
        let img = scene(20, 16, 1.3);
        let out = apply_spec(&img, &DegradationSpec::identity());
        assert!(out.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn range_validation() {
        assert!(DegradationRanges::train_default().validate().is_ok());
        assert!(DegradationRanges::test_default().validate().is_ok());
        let mut r = DegradationRanges::train_default();
        r.hue_shift = [0.05, -0.05];
        assert!(r.validate().is_err());
        let mut r = DegradationRanges::train_default();
        r.brightness_delta = [-0.5, 0.0];
        assert!(r.validate().is_err());
        let mut r = DegradationRanges::train_default();
        r.blur_length = [0, 3];
        assert!(r.validate().is_err());
        let json = serde_json::to_string(&DegradationRanges::test_default()).unwrap();
        let back: DegradationRanges = serde_json::from_str(&json).unwrap();
        assert_eq!(back, DegradationRanges::test_default());
    }

    #[test]
    fn paired_sample_contract() {
        let img = scene(32, 32, 2.0);
        let cfg = PairConfig::default();
        for seed in 0..20 {
            let (deg, clean) = make_paired_sample(&img, seed, &cfg);
            assert_eq!(deg.dims(), clean.dims());
            assert_eq!(clean, img);
            assert!(!sample_spec(seed, &cfg.ranges).is_identity());
            assert!(deg.l1_distance(&clean) > 0.0);
        }
    }

    #[test]
    fn paired_augmentation_keeps_alignment() {
        let img = scene(24, 16, 1.0);
        let cfg = PairConfig {
            ranges: DegradationRanges::point(&DegradationSpec::identity()),
            affine: Some(AffineSampler::default()),
        };
        let mut rotated = false;
        for seed in 0..16 {
            let (deg, clean) = make_paired_sample(&img, seed, &cfg);
            assert!(deg.l1_distance(&clean) < 1e-6);
            rotated |= clean.dims() == (16, 24);
        }
        assert!(rotated);
    }

    #[test]
    fn parallel_and_serial_degradation_agree_bytewise() {
        let images: Vec<_> = (0..12).map(|i| (format!("img_{i}"), scene(24, 20, 0.5 + i as f32 * 0.3))).collect();
        let r = DegradationRanges::test_default();
        let a = degrade_corpus(&images, &r, 77, "test-degrade", true);
        let b = degrade_corpus(&images, &r, 77, "test-degrade", false);
        for ((sa, ia), (sb, ib)) in a.iter().zip(&b) {
            assert_eq!(sa, sb);
            let (ba, bb): (Vec<u32>, Vec<u32>) = (
                ia.data().iter().map(|v| v.to_bits()).collect(),
                ib.data().iter().map(|v| v.to_bits()).collect(),
            );
            assert_eq!(ba, bb);
        }
        // reordering the corpus does not change any image's result
        let mut rev = images.clone();
        rev.reverse();
        let c = degrade_corpus(&rev, &r, 77, "test-degrade", true);
        assert_eq!(c[0].1, a[11].1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn operators_are_closed_on_unit_interval(seed in any::<u64>(), k in 0.1f32..5.0) {
            let img = scene(16, 12, k);
            let spec = sample_spec(seed, &DegradationRanges::test_default());
            let outs = [
                apply_spec(&img, &spec),
                motion_blur(&img, spec.blur_length, spec.blur_angle),
                color_jitter(&img, spec.hue_shift, spec.saturation_factor),
                brightness_contrast(&img, spec.brightness_delta, spec.contrast_factor),
                to_grayscale(&img),
                affine_augment(&img, &[], &AffineSpec { rotation: 90, jitter_deg: 7.0, flip_h: true, flip_v: false }).0,
            ];
            for o in &outs {
                let (lo, hi) = o.min_max();
                prop_assert!(lo >= 0.0 && hi <= 1.0);
            }
            prop_assert_eq!(apply_spec(&img, &spec), apply_spec(&img, &spec));
        }
    }
}
