use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{EnhancerSection, ExperimentConfig};
use super::table::{ResultsRow, ResultsTable};
use super::views::{build_domain, DomainContext, FileSource, ImageSource, MemorySource, Role};
use crate::dataset::{load_manifest, stratified_kfold, DatasetManifest, FoldAssignment, ImageRecord};
use crate::degrade::{make_paired_sample, image_seed, Image, PairConfig};
use crate::detect::{build_detector, train_detector, DetectorModel, RawDetection};
use crate::domain::{DomainVariant, Setting};
use crate::enhance::{build_enhancer, train_paired, train_unpaired, EnhancerModel};
use crate::error::{Error, Result};
use crate::postprocess::{average_over_folds, match_detections, nms, precision_recall, EvaluationReport, MatchResult};
use crate::seed::{derive_seed, sha256_hex};
use crate::synth::generate_toy_corpus;

/// Hex sha256 of a JSON value's compact serialisation.
fn key_of(v: &Value) -> String {
    sha256_hex(serde_json::to_string(v).expect("json serialises").as_bytes())
}

fn ids_key(ids: &[&str]) -> String {
    key_of(&json!(ids))
}

/// Writes through a temporary file so readers never see partial output.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct CachedReport {
    key: String,
    sha256: String,
    report: EvaluationReport,
}

/// Per-image detections and matches for one test view.
pub struct ViewOutcome {
    pub ids: Vec<String>,
    pub detections: Vec<Vec<RawDetection>>,
    pub matches: Vec<MatchResult>,
}

/// A loaded corpus plus its fold assignment, with trained models memoised
/// in memory and cached on disk under content-addressed keys.
pub struct Experiment {
    cfg: ExperimentConfig,
    manifest: DatasetManifest,
    source: Box<dyn ImageSource>,
    source_key: String,
    folds: FoldAssignment,
    enhancers: HashMap<String, Arc<EnhancerModel>>,
    detectors: HashMap<String, Arc<DetectorModel>>,
}

impl Experiment {
    /// Loads the configured manifest (or generates the toy corpus) and the
    /// fold assignment.
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        if let Some(path) = &cfg.manifest {
            let manifest = load_manifest(path)?;
            let key = sha256_hex(manifest.to_json().as_bytes());
            let source = Box::new(FileSource::new(&manifest));
            Self::with_source(cfg, manifest, source, key)
        } else {
            let t = cfg.toy.expect("validated: manifest or toy");
            let corpus = generate_toy_corpus(t.images, t.size, t.seed);
            let source = Box::new(MemorySource::new(
                corpus
                    .manifest
                    .records()
                    .iter()
                    .map(|r| r.id.clone())
                    .zip(corpus.images),
            ));
            let key = key_of(&json!({"toy": t}));
            Self::with_source(cfg, corpus.manifest, source, key)
        }
    }

    /// Uses an explicit corpus. `source_key` must change whenever the
    /// images behind `source` change, since it keys every cache entry.
    pub fn with_source(
        cfg: ExperimentConfig,
        manifest: DatasetManifest,
        source: Box<dyn ImageSource>,
        source_key: String,
    ) -> Result<Self> {
        let folds = match &cfg.fold_file {
            Some(path) => {
                let f = FoldAssignment::load(path)?;
                f.check_covers(&manifest)?;
                f
            }
            None => stratified_kfold(&manifest, cfg.folds, cfg.fold_seed)?,
        };
        for id in &cfg.figures {
            if manifest.get(id).is_none() {
                return Err(Error::UnknownImage(id.clone()));
            }
        }
        Ok(Self {
            cfg,
            manifest,
            source,
            source_key,
            folds,
            enhancers: HashMap::new(),
            detectors: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cfg.output_dir.join("cache")
    }

    fn records(&self, ids: &[&str]) -> Vec<&ImageRecord> {
        ids.iter().map(|id| self.manifest.get(id).expect("fold ids come from the manifest")).collect()
    }

    fn split(&self, fold: usize) -> Result<(Vec<&str>, Vec<&str>)> {
        if fold >= self.folds.k {
            return Err(Error::InvalidConfig(format!("fold {fold} out of range for k = {}", self.folds.k)));
        }
        let train = self.folds.train_ids(fold);
        let test = self.folds.test_ids(fold);
        let test_set: HashSet<&str> = test.iter().copied().collect();
        let shared = train.iter().filter(|id| test_set.contains(*id)).count();
        if shared > 0 {
            return Err(Error::Leakage(shared));
        }
        Ok((train, test))
    }

    fn section(&self, variant: DomainVariant) -> Result<&EnhancerSection> {
        self.cfg
            .enhancer_section(variant)
            .ok_or_else(|| Error::MissingModel(variant.display_name().into()))
    }

    /// Cache key of the enhancer behind `variant` for `fold`, or `None`
    /// when the variant uses no enhancer.
    fn enhancer_key(&self, variant: DomainVariant, fold: usize) -> Result<Option<String>> {
        if !variant.needs_enhancer() {
            return Ok(None);
        }
        let section = self.section(variant)?;
        if let Some(path) = &section.model {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            return Ok(Some(sha256_hex(&bytes)));
        }
        let (train, _) = self.split(fold)?;
        Ok(Some(key_of(&json!({
            "kind": "enhancer",
            "variant": variant,
            "source": self.source_key,
            "seed": self.cfg.seed,
            "train_ids": ids_key(&train),
            "ranges": self.cfg.degradation.train_ranges(),
            "pair_augment": self.cfg.degradation.pair_augment,
            "generator": section.generator,
            "epochs": section.epochs,
            "weights": section.weights,
            "options": section.options,
        }))))
    }

    fn load_or_train<M>(
        &self,
        path: &Path,
        load: impl Fn(&Path) -> Result<M>,
        train: impl FnOnce() -> Result<M>,
        save: impl Fn(&M, &Path) -> Result<()>,
    ) -> Result<M> {
        if path.exists() {
            return load(path).map_err(|_| Error::CacheCorrupt(path.to_path_buf()));
        }
        let model = train()?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        save(&model, &tmp)?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(model)
    }

    /// The enhancer for `variant` trained on `fold`'s training images.
    pub fn enhancer(&mut self, variant: DomainVariant, fold: usize) -> Result<Arc<EnhancerModel>> {
        let key = self
            .enhancer_key(variant, fold)?
            .ok_or_else(|| Error::InvalidConfig(format!("{variant} does not use an enhancer")))?;
        if let Some(m) = self.enhancers.get(&key) {
            return Ok(m.clone());
        }
        let section = self.section(variant)?.clone();
        let model = match &section.model {
            Some(path) => EnhancerModel::load(path)?,
            None => {
                let path = self.cache_dir().join("models").join(format!("{key}.ovdt"));
                fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
                self.load_or_train(&path, EnhancerModel::load, || self.train_enhancer(variant, fold, &section), |m, p| m.save(p))?
            }
        };
        let model = Arc::new(model);
        self.enhancers.insert(key, model.clone());
        Ok(model)
    }

    fn train_enhancer(&self, variant: DomainVariant, fold: usize, section: &EnhancerSection) -> Result<EnhancerModel> {
        let (train, _) = self.split(fold)?;
        let records = self.records(&train);
        let fold_tag = fold.to_string();
        let seed = derive_seed(self.cfg.seed, &[variant.key(), "fold", &fold_tag]);
        log::info!("training {variant} enhancer for fold {fold} on {} images", records.len());
        let clean: Vec<Image> = records.iter().map(|r| self.source.load(r)).collect::<Result<_>>()?;
        let pair_cfg = PairConfig {
            ranges: self.cfg.degradation.train_ranges(),
            affine: self.cfg.degradation.pair_augment,
        };
        let pairs: Vec<(Image, Image)> = records
            .iter()
            .zip(&clean)
            .map(|(r, img)| make_paired_sample(img, image_seed(self.cfg.seed, "enhancer-pair", &r.id), &pair_cfg))
            .collect();
        let init = build_enhancer(&section.generator, seed)?;
        match variant {
            DomainVariant::EnhancedPix2Pix => {
                train_paired(&init, &pairs, section.epochs, &section.weights, &section.options, seed)
            }
            _ => {
                // the two collections are shuffled independently, so the
                // pairing is never seen
                let (degraded, clean): (Vec<Image>, Vec<Image>) = pairs.into_iter().unzip();
                let back = build_enhancer(&section.generator, derive_seed(seed, &["inverse"]))?;
                let (ab, _) = train_unpaired(
                    &init,
                    &back,
                    &degraded,
                    &clean,
                    section.epochs,
                    &section.weights,
                    &section.options,
                    seed,
                )?;
                Ok(ab)
            }
        }
    }

    fn context<'a>(&'a self, pix2pix: Option<&'a EnhancerModel>, cyclegan: Option<&'a EnhancerModel>) -> DomainContext<'a> {
        DomainContext {
            source: self.source.as_ref(),
            seed: self.cfg.seed,
            train_ranges: self.cfg.degradation.train_ranges(),
            test_ranges: self.cfg.degradation.test_ranges(),
            pix2pix,
            cyclegan,
        }
    }

    /// Materialises `ids` in `variant`, training the fold's enhancer first
    /// when the variant needs one.
    pub fn view(&mut self, ids: &[&str], variant: DomainVariant, role: Role, fold: usize) -> Result<Vec<Image>> {
        let enhancer = if variant.needs_enhancer() {
            Some(self.enhancer(variant, fold)?)
        } else {
            None
        };
        let (p2p, cyc) = match variant {
            DomainVariant::EnhancedPix2Pix => (enhancer.as_deref(), None),
            DomainVariant::EnhancedCycleGan => (None, enhancer.as_deref()),
            _ => (None, None),
        };
        build_domain(&self.records(ids), variant, role, &self.context(p2p, cyc))
    }

    fn detector_key(&self, train_domain: DomainVariant, fold: usize) -> Result<String> {
        let (train, _) = self.split(fold)?;
        let degraded = !matches!(train_domain, DomainVariant::Original | DomainVariant::Grayscale);
        Ok(key_of(&json!({
            "kind": "detector",
            "train_domain": train_domain,
            "source": self.source_key,
            "seed": self.cfg.seed,
            "train_ids": ids_key(&train),
            "ranges": degraded.then(|| self.cfg.degradation.train_ranges()),
            "enhancer": self.enhancer_key(train_domain, fold)?,
            "detector": self.cfg.detector,
        })))
    }

    /// The detector trained on `fold`'s training images in `train_domain`.
    pub fn detector(&mut self, train_domain: DomainVariant, fold: usize) -> Result<Arc<DetectorModel>> {
        let key = self.detector_key(train_domain, fold)?;
        if let Some(m) = self.detectors.get(&key) {
            return Ok(m.clone());
        }
        let path = self.cache_dir().join("models").join(format!("{key}.ovdt"));
        fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
        let model = if path.exists() {
            DetectorModel::load(&path).map_err(|_| Error::CacheCorrupt(path.clone()))?
        } else {
            let (train, _) = self.split(fold)?;
            let train: Vec<String> = train.into_iter().map(str::to_owned).collect();
            let ids: Vec<&str> = train.iter().map(String::as_str).collect();
            let images = self.view(&ids, train_domain, Role::Train, fold)?;
            let data: Vec<_> = images
                .into_iter()
                .zip(self.records(&ids))
                .map(|(img, r)| (img, r.annotations.clone()))
                .collect();
            let fold_tag = fold.to_string();
            let seed = derive_seed(self.cfg.seed, &["detector", train_domain.key(), "fold", &fold_tag]);
            log::info!("training detector on {train_domain} for fold {fold} ({} images)", data.len());
            let d = &self.cfg.detector;
            let mut model = train_detector(&build_detector(&d.config, seed)?, &data, d.epochs, d.augment.as_ref(), seed)?;
            model.set_domain_tag(train_domain.key());
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            model.save(&tmp)?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
            model
        };
        let model = Arc::new(model);
        self.detectors.insert(key, model.clone());
        Ok(model)
    }

    /// Runs a detector over a test view and matches against ground truth
    /// with the configured NMS and IoU settings.
    pub fn evaluate_view(&self, model: &DetectorModel, ids: &[&str], images: &[Image]) -> ViewOutcome {
        let ev = self.cfg.evaluation;
        let refs: Vec<&Image> = images.iter().collect();
        let raw = model.infer_batch(&refs, model.config().score_threshold);
        let detections: Vec<Vec<RawDetection>> = raw.iter().map(|d| nms(d, ev.nms_iou, ev.class_aware_nms)).collect();
        let matches = detections
            .iter()
            .zip(self.records(ids))
            .map(|(d, r)| match_detections(d, &r.annotations, ev.match_iou))
            .collect();
        ViewOutcome {
            ids: ids.iter().map(|s| (*s).to_owned()).collect(),
            detections,
            matches,
        }
    }

    fn report_key(&self, setting: Setting, fold: usize) -> Result<String> {
        let (_, test) = self.split(fold)?;
        let degraded = !matches!(setting.test, DomainVariant::Original | DomainVariant::Grayscale);
        Ok(key_of(&json!({
            "kind": "report",
            "detector": self.detector_key(setting.train, fold)?,
            "test_domain": setting.test,
            "test_ids": ids_key(&test),
            "ranges": degraded.then(|| self.cfg.degradation.test_ranges()),
            "enhancer": self.enhancer_key(setting.test, fold)?,
            "evaluation": self.cfg.evaluation,
        })))
    }

    /// Trains (or loads) the setting's detector on the fold's training
    /// images and evaluates it on the held-out fold.
    pub fn run_setting(&mut self, setting: Setting, fold: usize) -> Result<EvaluationReport> {
        let key = self.report_key(setting, fold)?;
        let path = self.cache_dir().join("reports").join(format!("{key}.json"));
        if path.exists() {
            return read_cached_report(&path, &key);
        }
        let model = self.detector(setting.train, fold)?;
        let (_, test) = self.split(fold)?;
        let test: Vec<String> = test.into_iter().map(str::to_owned).collect();
        let ids: Vec<&str> = test.iter().map(String::as_str).collect();
        let images = self.view(&ids, setting.test, Role::Test, fold)?;
        let outcome = self.evaluate_view(&model, &ids, &images);
        let report = precision_recall(&outcome.matches).with_setting(setting);
        let body = serde_json::to_string(&report).expect("report serialises");
        let cached = CachedReport {
            key,
            sha256: sha256_hex(body.as_bytes()),
            report: report.clone(),
        };
        write_atomic(&path, serde_json::to_string_pretty(&cached).expect("report serialises").as_bytes())?;
        Ok(report)
    }

    /// Every configured setting over every fold, averaged per setting, in
    /// config order. On failure the completed rows are written to
    /// `partial_results.json` before the error is returned.
    pub fn run_matrix(&mut self) -> Result<ResultsTable> {
        let settings = self.cfg.settings.clone();
        let mut table = ResultsTable::default();
        for setting in settings {
            log::info!("setting {setting}");
            match self.run_folds(setting) {
                Ok(row) => table.rows.push(row),
                Err(e) => {
                    let dump = json!({"completed": table, "failed_setting": setting, "error": e.to_string()});
                    let path = self.cfg.output_dir.join("partial_results.json");
                    write_atomic(&path, serde_json::to_string_pretty(&dump).expect("json").as_bytes())?;
                    return Err(e);
                }
            }
        }
        Ok(table)
    }

    fn run_folds(&mut self, setting: Setting) -> Result<ResultsRow> {
        let fold_reports = (0..self.folds.k)
            .map(|f| self.run_setting(setting, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResultsRow {
            setting,
            report: average_over_folds(&fold_reports)?,
            fold_reports,
        })
    }
}

fn read_cached_report(path: &Path, key: &str) -> Result<EvaluationReport> {
    let corrupt = || Error::CacheCorrupt(path.to_path_buf());
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cached: CachedReport = serde_json::from_str(&text).map_err(|_| corrupt())?;
    let body = serde_json::to_string(&cached.report).expect("report serialises");
    if cached.key != key || cached.sha256 != sha256_hex(body.as_bytes()) {
        return Err(corrupt());
    }
    Ok(cached.report)
}

/// Opens the experiment and evaluates one setting on one fold.
pub fn run_setting(cfg: &ExperimentConfig, setting: Setting, fold: usize) -> Result<EvaluationReport> {
    Experiment::open(cfg.clone())?.run_setting(setting, fold)
}

/// Opens the experiment and runs the full matrix.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    Experiment::open(cfg.clone())?.run_matrix()
}
