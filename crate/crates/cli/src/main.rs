//! `ovadet`: degrade, enhance, detect and evaluate microscopy images, or
//! run the whole cross-validated train/test matrix from a config file.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use ovadet_core::checkpoint;
use ovadet_core::dataset::{load_manifest, stratified_kfold, DatasetManifest, ImageRecord};
use ovadet_core::degrade::{
    apply_spec, image_seed, make_paired_sample, sample_spec, DegradationRanges, Image, PairConfig,
};
use ovadet_core::detect::{
    build_detector, read_detections, train_detector, write_detections, DetectionRecord, DetectorModel,
};
use ovadet_core::domain::DomainVariant;
use ovadet_core::enhance::{build_enhancer, train_paired, train_unpaired, EnhancerModel};
use ovadet_core::experiments::{
    build_domain, emit_figures, emit_table, merge_json, parse_config, DetectorSection, DomainContext,
    EnhancerSection, EvaluationSection, Experiment, FileSource, ImageSource, Overrides, Profile, RangesRef,
    Role, TableFormat,
};
use ovadet_core::postprocess::{match_detections, nms, precision_recall, EvaluationReport};
use ovadet_core::seed::derive_seed;
use ovadet_core::synth::generate_toy_corpus;
use ovadet_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ovadet", version, about = "Parasitic egg detection with GAN-based image enhancement")]
struct Cli {
    /// Experiment config (JSON) merged over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default hyperparameters: `desk` (small, fast) or `paper` (full scale).
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RangeSet {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Paired,
    Unpaired,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural toy corpus (images plus manifest).
    Synth {
        #[arg(long, default_value_t = 500)]
        images: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Stratified k-fold split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Degrade a corpus; writes the images, a manifest, the per-image
    /// specs and a (degraded, clean) pair list.
    Degrade {
        #[arg(long)]
        manifest: PathBuf,
        /// Built-in ranges to use when no ranges file is given.
        #[arg(long, value_enum, default_value = "test")]
        set: RangeSet,
        /// JSON file mapping each parameter to `[min, max]`.
        #[arg(long)]
        ranges: Option<PathBuf>,
    },
    /// Train a paired (Pix2Pix) or unpaired (CycleGAN) enhancer on
    /// degraded/clean versions of a corpus.
    TrainEnhancer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "paired")]
        mode: Mode,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Enhance every image of a manifest or directory.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        /// A manifest JSON file or a directory of PNG/JPEG images.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a detector on one domain view of a corpus.
    TrainDetector {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "original")]
        domain: String,
        /// Enhancer checkpoint for the enhanced domains.
        #[arg(long)]
        enhancer: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run a detector (with NMS) over a manifest or directory.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Score threshold; defaults to the model's.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Match detections against a manifest's ground truth.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run every configured train/test setting over every fold.
    RunMatrix,
    /// Print a checkpoint's header and metadata.
    ModelInfo { model: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

/// Profile defaults with the optional config file merged on top.
struct Settings {
    tree: Value,
    base_dir: PathBuf,
    seed: u64,
    out: PathBuf,
}

impl Settings {
    fn load(cli: &Cli, profile: Profile) -> Result<Self> {
        let mut tree = profile.defaults();
        let mut base_dir = PathBuf::new();
        if let Some(path) = &cli.config {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let user: Value = serde_json::from_str(&text).map_err(|source| Error::Parse {
                path: path.clone(),
                source,
            })?;
            merge_json(&mut tree, user);
            base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        }
        let seed = cli.seed.or_else(|| tree["seed"].as_u64()).unwrap_or(0);
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { tree, base_dir, seed, out })
    }

    fn section<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        serde_json::from_value(self.tree[key].clone())
            .map_err(|e| Error::InvalidConfig(format!("config section `{key}`: {e}")))
    }

    fn enhancer(&self, mode: Mode) -> Result<EnhancerSection> {
        let key = match mode {
            Mode::Paired => "pix2pix",
            Mode::Unpaired => "cyclegan",
        };
        let section: Option<EnhancerSection> = self.section(key)?;
        section.ok_or_else(|| Error::InvalidConfig(format!("config section `{key}` is null")))
    }

    fn ranges(&self, key: &str, default: DegradationRanges) -> Result<DegradationRanges> {
        let r: Option<RangesRef> = serde_json::from_value(self.tree["degradation"][key].clone())
            .map_err(|e| Error::InvalidConfig(format!("degradation.{key}: {e}")))?;
        match r {
            None => Ok(default),
            Some(RangesRef::Inline(r)) => {
                r.validate()?;
                Ok(r)
            }
            Some(RangesRef::Path(p)) => DegradationRanges::load(&self.base_dir.join(p)),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serialises");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn load_all(manifest: &DatasetManifest) -> Result<Vec<Image>> {
    let source = FileSource::new(manifest);
    manifest.records().iter().map(|r| source.load(r)).collect()
}

/// `(id, image)` for a manifest file or every PNG/JPEG in a directory.
fn load_inputs(input: &Path) -> Result<Vec<(String, Image)>> {
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| io_err(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Ok((id, Image::load(&p)?))
            })
            .collect()
    } else {
        let manifest = load_manifest(input)?;
        let images = load_all(&manifest)?;
        Ok(manifest.records().iter().map(|r| r.id.clone()).zip(images).collect())
    }
}

/// Missing inputs are usage errors, not runtime failures.
fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("`{}` does not exist", path.display())))
    }
}

fn inputs(cmd: &Command) -> Vec<&Path> {
    match cmd {
        Command::Synth { .. } | Command::RunMatrix => vec![],
        Command::Split { manifest, .. } | Command::TrainEnhancer { manifest, .. } => vec![manifest],
        Command::Degrade { manifest, ranges, .. } => [Some(manifest), ranges.as_ref()].into_iter().flatten().map(|p| p.as_path()).collect(),
        Command::Enhance { model, input } | Command::Detect { model, input, .. } => vec![model, input],
        Command::TrainDetector { manifest, enhancer, .. } => [Some(manifest), enhancer.as_ref()].into_iter().flatten().map(|p| p.as_path()).collect(),
        Command::Evaluate { detections, manifest } => vec![detections, manifest],
        Command::ModelInfo { model } => vec![model],
    }
}

fn run(cli: Cli) -> Result<()> {
    let profile: Profile = cli.profile.parse()?;
    for p in cli.config.iter().map(PathBuf::as_path).chain(inputs(&cli.command)) {
        require(p)?;
    }
    if matches!(cli.command, Command::RunMatrix) {
        return run_matrix(&cli, profile);
    }
    let s = Settings::load(&cli, profile)?;
    match &cli.command {
        Command::Synth { images, size } => {
            if *images == 0 || *size < 16 {
                return Err(Error::InvalidConfig("synth needs --images > 0 and --size >= 16".into()));
            }
            let corpus = generate_toy_corpus(*images, *size, s.seed);
            corpus.write(&s.out)?;
            println!("wrote {} images to {}", images, s.out.display());
        }
        Command::Split { manifest, k } => {
            let m = load_manifest(manifest)?;
            let folds = stratified_kfold(&m, *k, s.seed)?;
            create_dir(&s.out)?;
            let path = s.out.join("folds.json");
            folds.save(&path)?;
            println!("fold sizes {:?} -> {}", folds.fold_sizes(), path.display());
        }
        Command::Degrade { manifest, set, ranges } => degrade(&s, manifest, *set, ranges.as_deref())?,
        Command::TrainEnhancer { manifest, mode, epochs } => train_enhancer(&s, manifest, *mode, *epochs)?,
        Command::Enhance { model, input } => {
            let model = EnhancerModel::load(model)?;
            create_dir(&s.out)?;
            let inputs = load_inputs(input)?;
            for (id, img) in &inputs {
                model.enhance(img).save(&s.out.join(format!("{id}.png")))?;
            }
            println!("enhanced {} images into {}", inputs.len(), s.out.display());
        }
        Command::TrainDetector {
            manifest,
            domain,
            enhancer,
            epochs,
        } => train_detector_cmd(&s, manifest, domain, enhancer.as_deref(), *epochs)?,
        Command::Detect { model, input, threshold } => {
            let model = DetectorModel::load(model)?;
            let ev: EvaluationSection = s.section("evaluation")?;
            let thr = threshold.unwrap_or(model.config().score_threshold);
            if !(0.0..=1.0).contains(&thr) {
                return Err(Error::InvalidConfig(format!("threshold {thr} outside [0, 1]")));
            }
            let mut records = Vec::new();
            for (id, img) in load_inputs(input)? {
                for d in nms(&model.infer(&img, thr), ev.nms_iou, ev.class_aware_nms) {
                    records.push(DetectionRecord::from_detection(&id, &d));
                }
            }
            create_dir(&s.out)?;
            let path = s.out.join("detections.json");
            write_detections(&path, &records)?;
            println!("{} detections -> {}", records.len(), path.display());
        }
        Command::Evaluate { detections, manifest } => {
            let ev: EvaluationSection = s.section("evaluation")?;
            let report = evaluate(&load_manifest(manifest)?, &read_detections(detections)?, ev.match_iou)?;
            create_dir(&s.out)?;
            write_json(&s.out.join("report.json"), &report)?;
            print_report(&report);
        }
        Command::ModelInfo { model } => {
            let d = checkpoint::read(model)?;
            let info = serde_json::json!({
                "kind": format!("{:?}", d.kind),
                "version": d.version,
                "tensors": d.params.len(),
                "parameters": d.params.num_scalars(),
                "meta": d.meta,
            });
            println!("{}", serde_json::to_string_pretty(&info).expect("json"));
        }
        Command::RunMatrix => unreachable!("handled above"),
    }
    Ok(())
}

fn degrade(s: &Settings, manifest: &Path, set: RangeSet, ranges: Option<&Path>) -> Result<()> {
    let m = load_manifest(manifest)?;
    let (key, stream, default) = match set {
        RangeSet::Train => ("train", "train-degrade", DegradationRanges::train_default()),
        RangeSet::Test => ("test", "test-degrade", DegradationRanges::test_default()),
    };
    let ranges = match ranges {
        Some(p) => DegradationRanges::load(p)?,
        None => s.ranges(key, default)?,
    };
    let images = load_all(&m)?;
    let img_dir = s.out.join("images");
    create_dir(&img_dir)?;
    let mut records = Vec::new();
    let mut specs = serde_json::Map::new();
    let mut pairs = Vec::new();
    for (r, img) in m.records().iter().zip(&images) {
        let spec = sample_spec(image_seed(s.seed, stream, &r.id), &ranges);
        let rel = format!("images/{}.png", r.id);
        apply_spec(img, &spec).save(&s.out.join(&rel))?;
        specs.insert(r.id.clone(), serde_json::to_value(spec).expect("spec serialises"));
        let clean = fs::canonicalize(m.resolve(r)).unwrap_or_else(|_| m.resolve(r));
        pairs.push(serde_json::json!({"id": r.id, "degraded": rel, "clean": clean}));
        records.push(ImageRecord {
            path: rel,
            ..r.clone()
        });
    }
    DatasetManifest::new(records, &s.out)?.save(&s.out.join("manifest.json"))?;
    write_json(&s.out.join("specs.json"), &specs)?;
    write_json(&s.out.join("pairs.json"), &pairs)?;
    println!("degraded {} images into {}", images.len(), s.out.display());
    Ok(())
}

fn train_enhancer(s: &Settings, manifest: &Path, mode: Mode, epochs: Option<usize>) -> Result<()> {
    let m = load_manifest(manifest)?;
    let section = s.enhancer(mode)?;
    let epochs = epochs.unwrap_or(section.epochs);
    let pair_cfg = PairConfig {
        ranges: s.ranges("train", DegradationRanges::train_default())?,
        affine: serde_json::from_value(s.tree["degradation"]["pair_augment"].clone())
            .map_err(|e| Error::InvalidConfig(format!("degradation.pair_augment: {e}")))?,
    };
    let images = load_all(&m)?;
    let pairs: Vec<(Image, Image)> = m
        .records()
        .iter()
        .zip(&images)
        .map(|(r, img)| make_paired_sample(img, image_seed(s.seed, "enhancer-pair", &r.id), &pair_cfg))
        .collect();
    let init = build_enhancer(&section.generator, derive_seed(s.seed, &["enhancer"]))?;
    let model = match mode {
        Mode::Paired => train_paired(&init, &pairs, epochs, &section.weights, &section.options, s.seed)?,
        Mode::Unpaired => {
            let (a, b): (Vec<Image>, Vec<Image>) = pairs.into_iter().unzip();
            let back = build_enhancer(&section.generator, derive_seed(s.seed, &["enhancer", "inverse"]))?;
            train_unpaired(&init, &back, &a, &b, epochs, &section.weights, &section.options, s.seed)?.0
        }
    };
    create_dir(&s.out)?;
    let path = s.out.join("enhancer.ovdt");
    model.save(&path)?;
    if let Some(last) = model.meta().history.last() {
        println!(
            "final epoch: generator {:.4}, discriminator {:.4}, reconstruction {:.4}",
            last.generator, last.discriminator, last.reconstruction
        );
    }
    println!("saved {}", path.display());
    Ok(())
}

fn train_detector_cmd(
    s: &Settings,
    manifest: &Path,
    domain: &str,
    enhancer: Option<&Path>,
    epochs: Option<usize>,
) -> Result<()> {
    let m = load_manifest(manifest)?;
    let variant: DomainVariant = domain.parse()?;
    let section: DetectorSection = s.section("detector")?;
    let enhancer = match enhancer {
        Some(p) => Some(EnhancerModel::load(p)?),
        None if variant.needs_enhancer() => return Err(Error::MissingModel(variant.display_name().into())),
        None => None,
    };
    let source = FileSource::new(&m);
    let ctx = DomainContext {
        source: &source,
        seed: s.seed,
        train_ranges: s.ranges("train", DegradationRanges::train_default())?,
        test_ranges: s.ranges("test", DegradationRanges::test_default())?,
        pix2pix: enhancer.as_ref().filter(|_| variant == DomainVariant::EnhancedPix2Pix),
        cyclegan: enhancer.as_ref().filter(|_| variant == DomainVariant::EnhancedCycleGan),
    };
    let records: Vec<&ImageRecord> = m.records().iter().collect();
    let images = build_domain(&records, variant, Role::Train, &ctx)?;
    let data: Vec<_> = images.into_iter().zip(&records).map(|(i, r)| (i, r.annotations.clone())).collect();
    let seed = derive_seed(s.seed, &["detector"]);
    let init = build_detector(&section.config, seed)?;
    let mut model = train_detector(&init, &data, epochs.unwrap_or(section.epochs), section.augment.as_ref(), seed)?;
    model.set_domain_tag(variant.key());
    create_dir(&s.out)?;
    let path = s.out.join("detector.ovdt");
    model.save(&path)?;
    if let Some(last) = model.meta().history.last() {
        println!("final epoch: classification {:.4}, regression {:.4}", last.classification, last.regression);
    }
    println!("saved {}", path.display());
    Ok(())
}

fn evaluate(m: &DatasetManifest, dets: &[DetectionRecord], iou: f64) -> Result<EvaluationReport> {
    let mut by_image: HashMap<&str, Vec<_>> = HashMap::new();
    for d in dets {
        if m.get(&d.image_id).is_none() {
            return Err(Error::UnknownImage(d.image_id.clone()));
        }
        by_image.entry(d.image_id.as_str()).or_default().push(d.detection());
    }
    let matches: Vec<_> = m
        .records()
        .iter()
        .map(|r| match_detections(by_image.get(r.id.as_str()).map_or(&[][..], Vec::as_slice), &r.annotations, iou))
        .collect();
    Ok(precision_recall(&matches))
}

fn print_report(r: &EvaluationReport) {
    let f = |m: ovadet_core::postprocess::Metric| m.value.map_or("—".to_owned(), |v| format!("{v:.2}"));
    println!("class  precision  recall   tp   fp   fn");
    for (c, cr) in r.classes.iter() {
        println!(
            "{:<5}  {:>9}  {:>6}  {:>3}  {:>3}  {:>3}",
            c.as_str(),
            f(cr.precision),
            f(cr.recall),
            cr.counts.tp,
            cr.counts.fp,
            cr.counts.fn_
        );
    }
    println!("{:<5}  {:>9}  {:>6}", "All", f(r.all.precision), f(r.all.recall));
    println!("{:<5}  {:>9}  {:>6}", "macro", f(r.all_macro.precision), f(r.all_macro.recall));
}

fn run_matrix(cli: &Cli, profile: Profile) -> Result<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("run-matrix needs --config".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        output_dir: cli.out.clone(),
    };
    let cfg = parse_config(path, profile, &overrides)?;
    let out = cfg.output_dir.clone();
    let figures = cfg.figures.clone();
    let mut exp = Experiment::open(cfg)?;
    let table = exp.run_matrix()?;
    create_dir(&out)?;
    for format in [TableFormat::Markdown, TableFormat::Csv, TableFormat::Json] {
        let p = out.join(format!("table.{}", format.extension()));
        fs::write(&p, emit_table(&table, format)).map_err(|e| io_err(&p, e))?;
    }
    if !figures.is_empty() {
        emit_figures(&mut exp, &figures, &out.join("figures"))?;
    }
    print!("{}", emit_table(&table, TableFormat::Markdown));
    Ok(())
}
