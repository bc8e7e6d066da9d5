use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::degrade::{AffineSampler, DegradationRanges};
use crate::detect::DetectorConfig;
use crate::domain::{DomainVariant, Setting};
use crate::enhance::{GeneratorConfig, LossWeights, TrainOptions};
use crate::error::{Error, Result};

/// Named bundle of defaults a config file is merged over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Small inputs and short schedules that finish on one CPU.
    #[default]
    Desk,
    /// Full-size networks, 500 enhancer epochs and 50 detector epochs.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidConfig(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

/// The ten train/test cells in results-table order.
pub fn canonical_settings() -> Vec<Setting> {
    use DomainVariant::*;
    [Original, EnhancedPix2Pix]
        .into_iter()
        .flat_map(|train| {
            [Original, Grayscale, LowQuality, EnhancedCycleGan, EnhancedPix2Pix]
                .into_iter()
                .map(move |test| Setting::new(train, test))
        })
        .collect()
}

impl Profile {
    /// Default config tree for this profile.
    pub fn defaults(self) -> Value {
        let settings = serde_json::to_value(canonical_settings()).expect("settings serialise");
        match self {
            Profile::Desk => json!({
                "seed": 0,
                "folds": 5,
                "fold_seed": 0,
                "degradation": {"train": null, "test": null, "pair_augment": null},
                "pix2pix": {
                    "generator": {"input_size": 64, "depth": 3, "base_channels": 16, "skip_connections": true},
                    "epochs": 30,
                    "weights": {"adversarial_weight": 1.0, "reconstruction_weight": 100.0, "cycle_weight": 10.0},
                    "options": {
                        "batch_size": 4,
                        "optimizer": {"lr": 1e-3, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8},
                        "discriminator_channels": 16,
                        "discriminator_depth": 3
                    }
                },
                "cyclegan": {
                    "generator": {"input_size": 64, "depth": 3, "base_channels": 16, "skip_connections": true},
                    "epochs": 30,
                    "weights": {"adversarial_weight": 1.0, "reconstruction_weight": 100.0, "cycle_weight": 10.0},
                    "options": {
                        "batch_size": 4,
                        "optimizer": {"lr": 1e-3, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8},
                        "discriminator_channels": 16,
                        "discriminator_depth": 3
                    }
                },
                "detector": {
                    "config": {
                        "backbone": "toy",
                        "input_size": 64,
                        "base_channels": 16,
                        "anchor_sizes": [10.0, 16.0, 24.0],
                        "anchor_ratios": [0.5, 1.0, 2.0],
                        "batch_size": 8,
                        "optimizer": {"lr": 2e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
                    },
                    "epochs": 50,
                    "augment": {"flip_h_prob": 0.5, "flip_v_prob": 0.5, "quarter_turns": true, "max_jitter_deg": 0.0}
                },
                "evaluation": {"nms_iou": 0.5, "class_aware_nms": true, "match_iou": 0.5},
                "settings": settings,
                "output_dir": "out",
                "figures": []
            }),
            Profile::Paper => json!({
                "seed": 0,
                "folds": 5,
                "fold_seed": 0,
                "degradation": {"train": null, "test": null, "pair_augment": {"flip_h_prob": 0.5, "flip_v_prob": 0.5, "quarter_turns": true, "max_jitter_deg": 0.0}},
                "pix2pix": {
                    "generator": {"input_size": 256, "depth": 8, "base_channels": 64, "skip_connections": true},
                    "epochs": 500,
                    "weights": {"adversarial_weight": 1.0, "reconstruction_weight": 100.0, "cycle_weight": 10.0},
                    "options": {
                        "batch_size": 1,
                        "optimizer": {"lr": 2e-4, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8},
                        "discriminator_channels": 64,
                        "discriminator_depth": 3
                    }
                },
                "cyclegan": {
                    "generator": {"input_size": 256, "depth": 8, "base_channels": 64, "skip_connections": true},
                    "epochs": 500,
                    "weights": {"adversarial_weight": 1.0, "reconstruction_weight": 100.0, "cycle_weight": 10.0},
                    "options": {
                        "batch_size": 1,
                        "optimizer": {"lr": 2e-4, "beta1": 0.5, "beta2": 0.999, "eps": 1e-8},
                        "discriminator_channels": 64,
                        "discriminator_depth": 3
                    }
                },
                "detector": {
                    "config": {
                        "backbone": "resnet",
                        "input_size": 512,
                        "base_channels": 64,
                        "anchor_sizes": [32.0, 64.0, 128.0],
                        "anchor_ratios": [0.5, 1.0, 2.0],
                        "batch_size": 4,
                        "optimizer": {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
                    },
                    "epochs": 50,
                    "augment": {"flip_h_prob": 0.5, "flip_v_prob": 0.5, "quarter_turns": true, "max_jitter_deg": 0.0}
                },
                "evaluation": {"nms_iou": 0.5, "class_aware_nms": true, "match_iou": 0.5},
                "settings": settings,
                "output_dir": "out",
                "figures": []
            }),
        }
    }
}

/// Recursively overlays `patch` on `base`. Objects merge key by key;
/// everything else (arrays, scalars, null) replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

/// Procedurally generated corpus used instead of a manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySource {
    pub images: usize,
    pub size: usize,
    pub seed: u64,
}

/// Degradation ranges given inline or as a path to a ranges file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RangesRef {
    Path(PathBuf),
    Inline(DegradationRanges),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSection {
    /// Ranges for enhancer training pairs and the Pix2Pix training view;
    /// `null` selects the built-in training ranges.
    pub train: Option<RangesRef>,
    /// Ranges for the Low Quality test view; `null` selects the built-in
    /// test ranges.
    pub test: Option<RangesRef>,
    /// Shared geometric augmentation for enhancer training pairs.
    pub pair_augment: Option<AffineSampler>,
}

impl DegradationSection {
    pub fn train_ranges(&self) -> DegradationRanges {
        match &self.train {
            Some(RangesRef::Inline(r)) => *r,
            _ => DegradationRanges::train_default(),
        }
    }

    pub fn test_ranges(&self) -> DegradationRanges {
        match &self.test {
            Some(RangesRef::Inline(r)) => *r,
            _ => DegradationRanges::test_default(),
        }
    }
}

/// An enhancer either loaded from `model` or trained per fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhancerSection {
    /// Pretrained checkpoint; when set the training fields are ignored.
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub epochs: usize,
    pub weights: LossWeights,
    pub options: TrainOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub config: DetectorConfig,
    pub epochs: usize,
    /// Training-time geometric augmentation; test images are never augmented.
    pub augment: Option<AffineSampler>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub nms_iou: f64,
    pub class_aware_nms: bool,
    pub match_iou: f64,
}

/// A fully merged and validated experiment description. Relative paths are
/// resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub toy: Option<ToySource>,
    pub seed: u64,
    pub folds: usize,
    pub fold_seed: u64,
    /// Precomputed fold assignment; otherwise folds are drawn from `fold_seed`.
    #[serde(default)]
    pub fold_file: Option<PathBuf>,
    pub degradation: DegradationSection,
    pub pix2pix: Option<EnhancerSection>,
    pub cyclegan: Option<EnhancerSection>,
    pub detector: DetectorSection,
    pub evaluation: EvaluationSection,
    pub settings: Vec<Setting>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub figures: Vec<String>,
}

/// Command-line overrides applied after the file is merged.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Reads `path`, merges it over the profile defaults and validates it.
pub fn parse_config(path: &Path, profile: Profile, overrides: &Overrides) -> Result<ExperimentConfig> {
    require_file(path, "config file")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base, path, profile, overrides)
}

/// [`parse_config`] on in-memory text; `origin` only labels errors.
pub fn parse_config_str(
    text: &str,
    base_dir: &Path,
    origin: &Path,
    profile: Profile,
    overrides: &Overrides,
) -> Result<ExperimentConfig> {
    let parse_err = |source| Error::Parse {
        path: origin.to_path_buf(),
        source,
    };
    let user: Value = serde_json::from_str(text).map_err(parse_err)?;
    if !user.is_object() {
        return Err(Error::InvalidConfig(format!("{}: top level must be an object", origin.display())));
    }
    check_variants(&user)?;
    let mut merged = profile.defaults();
    merge_json(&mut merged, user);
    let mut cfg: ExperimentConfig = serde_json::from_value(merged).map_err(parse_err)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.output_dir {
        cfg.output_dir = out.clone();
    }
    cfg.resolve(base_dir)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Surfaces unknown variant names as such instead of a generic parse error.
fn check_variants(user: &Value) -> Result<()> {
    let Some(settings) = user.get("settings").and_then(Value::as_array) else {
        return Ok(());
    };
    for s in settings {
        for key in ["train", "test"] {
            if let Some(name) = s.get(key).and_then(Value::as_str) {
                name.parse::<DomainVariant>()?;
            }
        }
    }
    Ok(())
}

fn absolutise(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} `{}` does not exist", p.display())))
    }
}

impl ExperimentConfig {
    fn resolve(&mut self, base: &Path) -> Result<()> {
        for p in [&mut self.manifest, &mut self.fold_file, &mut self.detector.config.pretrained_source]
            .into_iter()
            .flatten()
        {
            absolutise(base, p);
        }
        absolutise(base, &mut self.output_dir);
        for section in [&mut self.pix2pix, &mut self.cyclegan].into_iter().flatten() {
            if let Some(m) = &mut section.model {
                absolutise(base, m);
                require_file(m, "enhancer model")?;
            }
        }
        for (slot, what) in [
            (&mut self.degradation.train, "train degradation config"),
            (&mut self.degradation.test, "test degradation config"),
        ] {
            if let Some(RangesRef::Path(p)) = slot {
                absolutise(base, p);
                require_file(p, what)?;
                *slot = Some(RangesRef::Inline(DegradationRanges::load(p)?));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.manifest, &self.toy) {
            (Some(m), None) => require_file(m, "manifest")?,
            (None, Some(t)) => {
                if t.images == 0 || t.size < 16 {
                    return Err(Error::InvalidConfig("toy corpus needs images > 0 and size >= 16".into()));
                }
            }
            _ => return Err(Error::InvalidConfig("exactly one of `manifest` and `toy` must be set".into())),
        }
        if let Some(f) = &self.fold_file {
            require_file(f, "fold file")?;
        }
        if let Some(p) = &self.detector.config.pretrained_source {
            require_file(p, "pretrained detector source")?;
        }
        if self.settings.is_empty() {
            return Err(Error::InvalidConfig("settings list is empty".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("folds must be at least 2, got {}", self.folds)));
        }
        for s in &self.settings {
            for v in [s.train, s.test] {
                if self.enhancer_section(v).is_none() && v.needs_enhancer() {
                    return Err(Error::MissingModel(v.display_name().into()));
                }
            }
        }
        for section in [&self.pix2pix, &self.cyclegan].into_iter().flatten() {
            section.generator.validate()?;
            section.weights.validate()?;
            if section.options.batch_size == 0 {
                return Err(Error::InvalidConfig("enhancer batch_size must be positive".into()));
            }
        }
        self.detector.config.validate()?;
        self.degradation.train_ranges().validate()?;
        self.degradation.test_ranges().validate()?;
        let ev = &self.evaluation;
        if !(0.0..=1.0).contains(&ev.nms_iou) || !(0.0..=1.0).contains(&ev.match_iou) || ev.match_iou == 0.0 {
            return Err(Error::InvalidConfig("IoU thresholds must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Enhancer section serving `variant`, if that variant uses one.
    pub fn enhancer_section(&self, variant: DomainVariant) -> Option<&EnhancerSection> {
        match variant {
            DomainVariant::EnhancedPix2Pix => self.pix2pix.as_ref(),
            DomainVariant::EnhancedCycleGan => self.cyclegan.as_ref(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let dir = std::env::temp_dir();
        parse_config_str(text, &dir, Path::new("cfg.json"), Profile::Desk, &Overrides::default())
    }

    const TOY: &str = r#""toy": {"images": 20, "size": 32, "seed": 1}"#;

    #[test]
    fn canonical_config_has_ten_settings() {
        let cfg = parse(&format!("{{{TOY}}}")).unwrap();
        assert_eq!(cfg.settings.len(), 10);
        let trains: std::collections::BTreeSet<_> = cfg.settings.iter().map(|s| s.train).collect();
        let tests: std::collections::BTreeSet<_> = cfg.settings.iter().map(|s| s.test).collect();
        assert_eq!((trains.len(), tests.len()), (2, 5));
        assert_eq!(cfg.settings[0], Setting::new(DomainVariant::Original, DomainVariant::Original));
        assert_eq!(cfg.settings[9], Setting::new(DomainVariant::EnhancedPix2Pix, DomainVariant::EnhancedPix2Pix));
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(parse(&format!(r#"{{{TOY}, "settings": []}}"#)), Err(Error::InvalidConfig(_))));
        let e = parse(&format!(r#"{{{TOY}, "settings": [{{"train": "sepia", "test": "original"}}]}}"#)).unwrap_err();
        assert!(e.to_string().contains("sepia"));
        let e = parse(&format!(r#"{{{TOY}, "pix2pix": {{"model": "nowhere.ovdt"}}}}"#)).unwrap_err();
        assert!(e.to_string().contains("nowhere.ovdt"));
        assert!(matches!(parse(&format!(r#"{{{TOY}, "cyclegan": null}}"#)), Err(Error::MissingModel(_))));
        assert!(parse(r#"{"manifest": "missing/manifest.json"}"#).is_err());
        assert!(parse("{}").is_err());
    }

    #[test]
    fn user_values_override_profile() {
        let cfg = parse(&format!(
            r#"{{{TOY}, "folds": 2, "detector": {{"epochs": 3, "config": {{"optimizer": {{"lr": 0.01}}}}}}}}"#
        ))
        .unwrap();
        assert_eq!(cfg.folds, 2);
        assert_eq!(cfg.detector.epochs, 3);
        assert_eq!(cfg.detector.config.optimizer.lr, 0.01);
        assert_eq!(cfg.detector.config.optimizer.beta2, 0.999);
        assert_eq!(cfg.detector.config.backbone, "toy");
    }

    #[test]
    fn paper_profile_schedules() {
        let dir = std::env::temp_dir();
        let cfg = parse_config_str(&format!("{{{TOY}}}"), &dir, Path::new("c"), Profile::Paper, &Overrides::default())
            .unwrap();
        assert_eq!(cfg.pix2pix.as_ref().unwrap().epochs, 500);
        assert_eq!(cfg.cyclegan.as_ref().unwrap().epochs, 500);
        assert_eq!(cfg.detector.epochs, 50);
        assert_eq!(cfg.evaluation.nms_iou, 0.5);
        assert_eq!(cfg.folds, 5);
    }
}
