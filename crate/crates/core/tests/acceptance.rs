//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ovadet_core::dataset::{manifest_with_counts, stratified_kfold, Annotation, ClassLabel, PAPER_CLASS_COUNTS};
use ovadet_core::degrade::{
    apply_spec, degrade_corpus, make_paired_sample, sample_spec, DegradationRanges, DegradationSpec, Image,
    PairConfig,
};
use ovadet_core::detect::RawDetection;
use ovadet_core::domain::{DomainVariant, Setting};
use ovadet_core::enhance::{build_enhancer, train_paired, GeneratorConfig, LossWeights, TrainOptions};
use ovadet_core::experiments::{emit_table, parse_config_str, restoration_examples, Experiment, Overrides, Profile, TableFormat};
use ovadet_core::nn::AdamConfig;
use ovadet_core::postprocess::{iou, match_detections, nms, precision_recall, BoundingBox};
use ovadet_core::seed::{derive_seed, rng_for};
use ovadet_core::synth::generate_toy_corpus;
use rand::Rng;

type Outcome = Result<String, String>;

fn within(limit: Duration, t: Instant) -> Result<String, String> {
    let e = t.elapsed();
    if e <= limit {
        Ok(format!("{:.1}s", e.as_secs_f64()))
    } else {
        Err(format!("took {:.1}s, limit {}s", e.as_secs_f64(), limit.as_secs()))
    }
}

// Geometry

fn lattice_count(lo: f64, hi: f64, step: f64, extent: f64) -> u64 {
    let n = (extent / step).round() as u64;
    (0..n).filter(|k| {
        let c = (*k as f64 + 0.5) * step;
        c >= lo && c < hi
    })
    .count() as u64
}

// Pixel counts factor over the axes for axis-aligned boxes.
fn lattice_iou(a: &BoundingBox, b: &BoundingBox, step: f64, extent: f64) -> f64 {
    let count = |x0: f64, y0: f64, x1: f64, y1: f64| {
        if x1 <= x0 || y1 <= y0 {
            return 0;
        }
        lattice_count(x0, x1, step, extent) * lattice_count(y0, y1, step, extent)
    };
    let ca = count(a.xmin, a.ymin, a.xmax, a.ymax);
    let cb = count(b.xmin, b.ymin, b.xmax, b.ymax);
    let ci = count(a.xmin.max(b.xmin), a.ymin.max(b.ymin), a.xmax.min(b.xmax), a.ymax.min(b.ymax));
    ci as f64 / (ca + cb - ci) as f64
}

fn geometry() -> Outcome {
    let t = Instant::now();
    let third = iou(&BoundingBox::new(0.0, 0.0, 10.0, 10.0), &BoundingBox::new(5.0, 0.0, 15.0, 10.0));
    if third != 1.0 / 3.0 {
        return Err(format!("(0,0,10,10)/(5,0,15,10) gave {third}"));
    }
    let quarter = iou(&BoundingBox::new(0.0, 0.0, 4.0, 4.0), &BoundingBox::new(2.0, 2.0, 6.0, 6.0));
    if quarter != 4.0 / 28.0 {
        return Err(format!("(0,0,4,4)/(2,2,6,6) gave {quarter}"));
    }
    let mut rng = rng_for(1, &["geometry"]);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        // half the pairs on a 0.01 grid, half continuous
        let quantised = i % 2 == 0;
        let side = |rng: &mut rand_chacha::ChaCha8Rng| {
            let lo: f64 = rng.random_range(0.0..8.0);
            let hi: f64 = rng.random_range(lo + 1.0..10.0);
            if quantised {
                ((lo * 100.0).round() / 100.0, (hi * 100.0).round() / 100.0)
            } else {
                (lo, hi)
            }
        };
        let (ax0, ax1) = side(&mut rng);
        let (ay0, ay1) = side(&mut rng);
        let (bx0, bx1) = side(&mut rng);
        let (by0, by1) = side(&mut rng);
        let a = BoundingBox::new(ax0, ay0, ax1, ay1);
        let b = BoundingBox::new(bx0, by0, bx1, by1);
        let step = if quantised { 1e-3 } else { 2.5e-4 };
        let d = (iou(&a, &b) - lattice_iou(&a, &b, step, 10.0)).abs();
        worst = worst.max(d);
        if d > 1e-3 {
            return Err(format!("{a:?} / {b:?} differs from lattice by {d}"));
        }
    }
    within(Duration::from_secs(10), t).map(|s| format!("10000 pairs, max |err| {worst:.2e}, {s}"))
}

// NMS

fn reference_order(a: &RawDetection, b: &RawDetection) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then(a.bbox.xmin.partial_cmp(&b.bbox.xmin).unwrap())
        .then(a.bbox.ymin.partial_cmp(&b.bbox.ymin).unwrap())
        .then(a.bbox.xmax.partial_cmp(&b.bbox.xmax).unwrap())
        .then(a.bbox.ymax.partial_cmp(&b.bbox.ymax).unwrap())
        .then(a.label.index().cmp(&b.label.index()))
}

fn brute_force_nms(dets: &[RawDetection], thr: f64, class_aware: bool) -> Vec<RawDetection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(reference_order);
    let n = sorted.len();
    // kept[i] holds iff no earlier kept detection suppresses i
    let mut kept = vec![false; n];
    for i in 0..n {
        kept[i] = (0..i).all(|j| {
            !kept[j]
                || (class_aware && sorted[j].label != sorted[i].label)
                || iou(&sorted[j].bbox, &sorted[i].bbox) <= thr
        });
    }
    sorted.into_iter().zip(kept).filter(|(_, k)| *k).map(|(d, _)| d).collect()
}

fn random_detection(rng: &mut impl Rng, labels: usize) -> RawDetection {
    let x = rng.random_range(0..12) as f64 * 2.0;
    let y = rng.random_range(0..12) as f64 * 2.0;
    let w = rng.random_range(2..10) as f64 * 2.0;
    let h = rng.random_range(2..10) as f64 * 2.0;
    RawDetection {
        bbox: BoundingBox::new(x, y, x + w, y + h),
        label: ClassLabel::ALL[rng.random_range(0..labels)],
        // a coarse score grid forces ties
        score: rng.random_range(0..20) as f64 / 20.0,
    }
}

fn nms_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = rng_for(2, &["nms"]);
    let mut checked = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..=50);
        let dets: Vec<_> = (0..n).map(|_| random_detection(&mut rng, 3)).collect();
        for thr in [0.3, 0.5, 0.7] {
            for class_aware in [true, false] {
                let got = nms(&dets, thr, class_aware);
                let want = brute_force_nms(&dets, thr, class_aware);
                if got != want {
                    return Err(format!("mismatch at threshold {thr}, class_aware {class_aware}, {n} detections"));
                }
                checked += 1;
            }
        }
    }
    within(Duration::from_secs(30), t).map(|s| format!("{checked} comparisons, {s}"))
}

// Matching

fn assignments(n_det: usize, n_gt: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![vec![]];
    for _ in 0..n_det {
        let mut next = Vec::new();
        for partial in &out {
            let mut none = partial.clone();
            none.push(None);
            next.push(none);
            for g in 0..n_gt {
                if !partial.contains(&Some(g)) {
                    let mut p = partial.clone();
                    p.push(Some(g));
                    next.push(p);
                }
            }
        }
        out = next;
    }
    out
}

// Per-detection key compared lexicographically in score order: matched
// beats unmatched, higher IoU beats lower, lower truth index breaks ties.
fn key(d: &BoundingBox, gts: &[BoundingBox], a: Option<usize>) -> (bool, f64, i64) {
    match a {
        Some(g) => (true, iou(d, &gts[g]), -(g as i64)),
        None => (false, 0.0, 0),
    }
}

fn exhaustive_counts(dets: &[RawDetection], truth: &[Annotation], thr: f64) -> BTreeMap<usize, (u64, u64, u64)> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(reference_order);
    let mut out = BTreeMap::new();
    for class in ClassLabel::ALL {
        let ds: Vec<BoundingBox> = sorted.iter().filter(|d| d.label == class).map(|d| d.bbox).collect();
        let gs: Vec<BoundingBox> = truth.iter().filter(|a| a.label == class).map(|a| a.bbox).collect();
        let feasible = assignments(ds.len(), gs.len())
            .into_iter()
            .filter(|a| a.iter().enumerate().all(|(i, g)| g.is_none_or(|g| iou(&ds[i], &gs[g]) > thr)));
        let best = feasible
            .max_by(|x, y| {
                for i in 0..ds.len() {
                    let o = key(&ds[i], &gs, x[i]).partial_cmp(&key(&ds[i], &gs, y[i])).unwrap();
                    if o != Ordering::Equal {
                        return o;
                    }
                }
                Ordering::Equal
            })
            .unwrap();
        let tp = best.iter().filter(|g| g.is_some()).count() as u64;
        out.insert(class.index(), (tp, ds.len() as u64 - tp, gs.len() as u64 - tp));
    }
    out
}

fn matching_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = rng_for(3, &["matching"]);
    let mut cases = 0;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    let mut all = Vec::new();
    for n_det in 0..=4 {
        for n_gt in 0..=4 {
            for _ in 0..450 {
                let truth: Vec<_> = (0..n_gt)
                    .map(|_| {
                        let d = random_detection(&mut rng, 2);
                        Annotation::new(d.label, d.bbox)
                    })
                    .collect();
                // most detections are perturbed copies of a truth box so
                // that matches, near misses and contention all occur
                let dets: Vec<_> = (0..n_det)
                    .map(|_| {
                        let mut d = random_detection(&mut rng, 2);
                        if n_gt > 0 && rng.random_bool(0.8) {
                            let t = truth[rng.random_range(0..n_gt)];
                            let dx = rng.random_range(-3..=3) as f64;
                            let dy = rng.random_range(-3..=3) as f64;
                            let grow = rng.random_range(0..=4) as f64;
                            d.bbox = BoundingBox::new(t.bbox.xmin + dx, t.bbox.ymin + dy, t.bbox.xmax + dx + grow, t.bbox.ymax + dy);
                            if rng.random_bool(0.85) {
                                d.label = t.label;
                            }
                        }
                        d
                    })
                    .collect();
                for thr in [0.3, 0.5] {
                    let got = match_detections(&dets, &truth, thr);
                    let want = exhaustive_counts(&dets, &truth, thr);
                    for c in ClassLabel::ALL {
                        let g = got.counts[c];
                        if (g.tp, g.fp, g.fn_) != want[&c.index()] {
                            return Err(format!("{n_det} dets / {n_gt} truths at {thr}: {c} got {g:?}, want {:?}", want[&c.index()]));
                        }
                    }
                    if thr == 0.5 {
                        let p = got.pooled();
                        tp += p.tp;
                        fp += p.fp;
                        fn_ += p.fn_;
                        all.push(got);
                    }
                    cases += 1;
                }
            }
        }
    }
    let report = precision_recall(&all);
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    if report.all.precision.value != Some(p) || report.all.recall.value != Some(r) {
        return Err(format!("pooled P/R {:?} {:?}, recomputed {p} {r}", report.all.precision, report.all.recall));
    }
    for c in ClassLabel::ALL {
        let k = report.classes[c].counts;
        let want_p = (k.tp + k.fp > 0).then(|| k.tp as f64 / (k.tp + k.fp) as f64);
        let want_r = (k.tp + k.fn_ > 0).then(|| k.tp as f64 / (k.tp + k.fn_) as f64);
        if report.classes[c].precision.value != want_p || report.classes[c].recall.value != want_r {
            return Err(format!("class {c} P/R arithmetic differs"));
        }
    }
    Ok(format!("{cases} cases, pooled P {p:.4} R {r:.4}, {:.1}s", t.elapsed().as_secs_f64()))
}

// Splitter

fn splitter_suite() -> Outcome {
    let t = Instant::now();
    let manifest = manifest_with_counts(&PAPER_CLASS_COUNTS);
    for seed in [0, 1, 42] {
        let a = stratified_kfold(&manifest, 5, seed).map_err(|e| e.to_string())?;
        if stratified_kfold(&manifest, 5, seed).map_err(|e| e.to_string())? != a {
            return Err(format!("seed {seed} is not deterministic"));
        }
        if a.assignment.len() != manifest.len() {
            return Err(format!("{} of {} images assigned", a.assignment.len(), manifest.len()));
        }
        let mut per = [[0usize; 5]; 5];
        for r in manifest.records() {
            let f = a.fold_of(&r.id).ok_or_else(|| format!("{} unassigned", r.id))?;
            if f >= 5 {
                return Err(format!("{} in fold {f}", r.id));
            }
            per[r.annotations[0].label.index()][f] += 1;
        }
        for (c, folds) in per.iter().enumerate() {
            let spread = folds.iter().max().unwrap() - folds.iter().min().unwrap();
            if spread > 1 || folds.iter().sum::<usize>() != PAPER_CLASS_COUNTS[c].1 {
                return Err(format!("seed {seed}: class {} folds {folds:?}", PAPER_CLASS_COUNTS[c].0));
            }
        }
    }
    within(Duration::from_secs(5), t).map(|s| format!("2907 images, 3 seeds, {s}"))
}

// Degradation

fn degradation_suite() -> Outcome {
    let corpus = generate_toy_corpus(24, 48, 5);
    for img in &corpus.images {
        let out = apply_spec(img, &DegradationSpec::identity());
        let d = out.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        if d > 1e-6 {
            return Err(format!("identity spec moved a pixel by {d}"));
        }
    }
    let wide = DegradationRanges {
        blur_length: [1, 15],
        blur_angle: [0.0, 360.0],
        hue_shift: [-0.5, 0.5],
        saturation_factor: [0.0, 3.0],
        brightness_delta: [-1.0, 1.0],
        contrast_factor: [0.0, 4.0],
    };
    let mut rng = rng_for(6, &["closure"]);
    let extremes = Image::from_fn(32, 32, |x, y| match (x + y) % 3 {
        0 => [0.0, 0.0, 0.0],
        1 => [1.0, 1.0, 1.0],
        _ => [1.0, 0.0, (x as f32) / 31.0],
    });
    for i in 0..400 {
        let img = if i % 4 == 0 { &extremes } else { &corpus.images[i % corpus.images.len()] };
        let out = apply_spec(img, &sample_spec(rng.random(), &wide));
        let (lo, hi) = out.min_max();
        if lo < 0.0 || hi > 1.0 || out.data().iter().any(|v| !v.is_finite()) {
            return Err(format!("output range [{lo}, {hi}] leaves [0,1]"));
        }
    }
    let named: Vec<(String, Image)> =
        corpus.manifest.records().iter().map(|r| r.id.clone()).zip(corpus.images.iter().cloned()).collect();
    let ranges = DegradationRanges::test_default();
    let bits = |v: Vec<(DegradationSpec, Image)>| -> Vec<(DegradationSpec, Vec<u32>)> {
        v.into_iter().map(|(s, i)| (s, i.data().iter().map(|f| f.to_bits()).collect())).collect()
    };
    let par = bits(degrade_corpus(&named, &ranges, 9, "test-degrade", true));
    let ser = bits(degrade_corpus(&named, &ranges, 9, "test-degrade", false));
    if par != ser {
        return Err("parallel and serial corpus degradation differ".into());
    }
    Ok("identity, closure over 400 specs, parallel == serial".into())
}

// Enhancement

fn enhancement_suite() -> Outcome {
    let t = Instant::now();
    let corpus = generate_toy_corpus(200, 64, 11);
    let cfg = PairConfig::default();
    let pairs: Vec<(Image, Image)> = corpus
        .manifest
        .records()
        .iter()
        .zip(&corpus.images)
        .map(|(r, img)| make_paired_sample(img, derive_seed(11, &["enhancer-pair", &r.id]), &cfg))
        .collect();
    let (train, held_out) = pairs.split_at(160);
    let opts = TrainOptions {
        batch_size: 4,
        optimizer: AdamConfig { lr: 1e-3, beta1: 0.5, ..AdamConfig::default() },
        ..TrainOptions::default()
    };
    let init = build_enhancer(&GeneratorConfig::default(), 1).map_err(|e| e.to_string())?;
    let model = train_paired(&init, train, 30, &LossWeights::default(), &opts, 2).map_err(|e| e.to_string())?;
    let (mut enhanced, mut degraded, mut improved) = (0.0, 0.0, 0);
    for (d, clean) in held_out {
        let e = model.enhance(d).l1_distance(clean);
        let b = d.l1_distance(clean);
        enhanced += e;
        degraded += b;
        improved += (e < b) as usize;
    }
    let n = held_out.len() as f64;
    let msg = format!(
        "held-out L1 {:.4} vs degraded {:.4}, {improved}/{} improved, {:.0}s",
        enhanced / n,
        degraded / n,
        held_out.len(),
        t.elapsed().as_secs_f64()
    );
    if enhanced < degraded && improved as f64 >= 0.8 * n && t.elapsed() <= Duration::from_secs(15 * 60) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// Detection and the framework effect share one cross-validated run.

const TOY_MATRIX: &str = r#"{
    "toy": {"images": 500, "size": 64, "seed": 21},
    "folds": 2,
    "cyclegan": null,
    "settings": [
        {"train": "original", "test": "original"},
        {"train": "original", "test": "low_quality"},
        {"train": "pix2pix", "test": "low_quality"}
    ]
}"#;

struct Matrix {
    precision_recall: Vec<(Setting, Option<f64>, Option<f64>)>,
    markdown: String,
    csv: String,
    elapsed: Duration,
    restored: Vec<String>,
}

fn run_toy_matrix(dir: &Path) -> Result<Matrix, String> {
    let t = Instant::now();
    let overrides = Overrides { output_dir: Some(dir.join("out")), ..Overrides::default() };
    let cfg = parse_config_str(TOY_MATRIX, dir, Path::new("toy.json"), Profile::Desk, &overrides)
        .map_err(|e| e.to_string())?;
    let mut exp = Experiment::open(cfg).map_err(|e| e.to_string())?;
    let table = exp.run_matrix().map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let restored = restoration_examples(&mut exp, 3).map_err(|e| e.to_string())?;
    Ok(Matrix {
        precision_recall: table
            .rows
            .iter()
            .map(|r| (r.setting, r.report.all.precision.value, r.report.all.recall.value))
            .collect(),
        markdown: emit_table(&table, TableFormat::Markdown),
        csv: emit_table(&table, TableFormat::Csv),
        elapsed,
        restored,
    })
}

fn lookup(m: &Matrix, train: DomainVariant, test: DomainVariant) -> (f64, f64) {
    let s = Setting::new(train, test);
    let (_, p, r) = m.precision_recall.iter().find(|(x, _, _)| *x == s).expect("setting ran");
    (p.unwrap_or(0.0), r.unwrap_or(0.0))
}

fn detection_suite(m: &Matrix) -> Outcome {
    let (p, r) = lookup(m, DomainVariant::Original, DomainVariant::Original);
    let md: Vec<&str> = m.markdown.lines().collect();
    let header = "| Settings (Training domain / Testing domain) | AL | HW | OV | TS | Tri | All | AL | HW | OV | TS | Tri | All |";
    let layout_ok = md.len() >= 6
        && md[0] == "| |Precision | | | | | |Recall | | | | | |"
        && md[2] == header
        && md[3].starts_with("| Original / Original |")
        && md[3].matches('|').count() == 14
        && m.csv.lines().next() == Some("Settings,Precision,,,,,,Recall,,,,,");
    let msg = format!("Original/Original P {p:.3} R {r:.3}, {:.0}s", m.elapsed.as_secs_f64());
    if !layout_ok {
        return Err(format!("{msg}; table layout differs:\n{}", m.markdown));
    }
    if p >= 0.8 && r >= 0.8 && m.elapsed <= Duration::from_secs(30 * 60) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn framework_suite(m: &Matrix) -> Outcome {
    let (_, base) = lookup(m, DomainVariant::Original, DomainVariant::LowQuality);
    let (_, enh) = lookup(m, DomainVariant::EnhancedPix2Pix, DomainVariant::LowQuality);
    let msg = format!("recall Pix2Pix/LowQuality {enh:.3} vs Original/LowQuality {base:.3}");
    if enh >= base {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL {name}: {detail}");
        }
    };
    report("geometry oracle", geometry());
    report("nms oracle", nms_suite());
    report("matching and metrics oracle", matching_suite());
    report("stratified splitter", splitter_suite());
    report("degradation", degradation_suite());
    report("toy enhancement convergence", enhancement_suite());

    let tmp = tempfile::tempdir().expect("temp dir");
    match run_toy_matrix(tmp.path()) {
        Ok(m) => {
            report("toy detection end-to-end", detection_suite(&m));
            report("toy framework effect", framework_suite(&m));
            println!("info: restoration examples {:?}", m.restored);
            println!("{}", m.markdown);
        }
        Err(e) => {
            report("toy detection end-to-end", Err(e.clone()));
            report("toy framework effect", Err(e));
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
