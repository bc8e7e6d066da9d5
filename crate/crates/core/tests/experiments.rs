use std::fs;
use std::path::Path;

use ovadet_core::domain::{DomainVariant, Setting};
use ovadet_core::experiments::{
    emit_figures, emit_table, parse_config_str, Experiment, ExperimentConfig, FigureMeta, Overrides, Profile,
    ResultsTable, TableFormat,
};
use ovadet_core::Error;

fn config(dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "toy": {{"images": 80, "size": 48, "seed": 4}},
            "folds": 2,
            "detector": {{"epochs": 25, "config": {{"input_size": 48}}}},
            "pix2pix": {{"epochs": 2, "generator": {{"input_size": 16, "depth": 2, "base_channels": 4}},
                         "options": {{"discriminator_channels": 4, "discriminator_depth": 2}}}},
            "cyclegan": null,
            "settings": [{{"train": "original", "test": "original"}}],
            "output_dir": "out"
            {extra}
        }}"#
    );
    parse_config_str(&text, dir, Path::new("test.json"), Profile::Desk, &Overrides::default()).unwrap()
}

fn cache_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn matrix_caches_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let mut exp = Experiment::open(cfg.clone()).unwrap();
    let table = exp.run_matrix().unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].fold_reports.len(), 2);
    assert_eq!(table.rows[0].report.folds, 2);
    let r = &table.rows[0].report;
    assert!(r.all.precision.value.is_some() && r.all.recall.value.is_some());
    assert!(r.all.recall.value.unwrap() > 0.5, "toy Original/Original recall {:?}", r.all.recall);

    let reports = cfg.output_dir.join("cache/reports");
    let before: Vec<_> = cache_files(&reports).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before.len(), 2);

    // a fresh run hits the cache and reproduces the table byte for byte
    let again = Experiment::open(cfg.clone()).unwrap().run_matrix().unwrap();
    assert_eq!(emit_table(&again, TableFormat::Json), emit_table(&table, TableFormat::Json));

    // dropping the reports but keeping models recomputes identical reports
    fs::remove_dir_all(&reports).unwrap();
    let recomputed = Experiment::open(cfg.clone()).unwrap().run_matrix().unwrap();
    assert_eq!(recomputed, table);
    let after: Vec<_> = cache_files(&reports).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(after, before);

    // an independent output directory (no cache) gives the same table
    let mut fresh_cfg = cfg.clone();
    fresh_cfg.output_dir = tmp.path().join("other");
    let fresh = Experiment::open(fresh_cfg).unwrap().run_matrix().unwrap();
    assert_eq!(fresh, table);

    let json = emit_table(&table, TableFormat::Json);
    let back: ResultsTable = serde_json::from_str(&json).unwrap();
    assert_eq!(back, table);
}

#[test]
fn corrupt_cache_entries_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let setting = Setting::new(DomainVariant::Original, DomainVariant::Original);
    Experiment::open(cfg.clone()).unwrap().run_setting(setting, 0).unwrap();

    let reports = cache_files(&cfg.output_dir.join("cache/reports"));
    let text = fs::read_to_string(&reports[0]).unwrap();
    let tampered = text.replacen("\"tp\": ", "\"tp\": 1", 1);
    assert_ne!(tampered, text);
    fs::write(&reports[0], tampered).unwrap();
    let err = Experiment::open(cfg.clone()).unwrap().run_setting(setting, 0).unwrap_err();
    assert!(matches!(err, Error::CacheCorrupt(_)), "{err}");

    fs::remove_file(&reports[0]).unwrap();
    let models = cache_files(&cfg.output_dir.join("cache/models"));
    let mut bytes = fs::read(&models[0]).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&models[0], bytes).unwrap();
    let err = Experiment::open(cfg).unwrap().run_setting(setting, 0).unwrap_err();
    assert!(matches!(err, Error::CacheCorrupt(_)), "{err}");
}

#[test]
fn failures_leave_a_partial_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("p2p.ovdt");
    fs::write(&model, b"placeholder").unwrap();
    let cfg = config(
        tmp.path(),
        r#", "pix2pix": {"model": "p2p.ovdt"},
            "settings": [{"train": "original", "test": "original"}, {"train": "original", "test": "pix2pix"}]"#,
    );
    let err = Experiment::open(cfg.clone()).unwrap().run_matrix().unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
    let dump: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("partial_results.json")).unwrap()).unwrap();
    assert_eq!(dump["completed"]["rows"].as_array().unwrap().len(), 1);
    assert_eq!(dump["failed_setting"]["test"], "pix2pix");
}

#[test]
fn unknown_figure_ids_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#", "figures": ["toy_99999"]"#);
    assert!(matches!(Experiment::open(cfg), Err(Error::UnknownImage(id)) if id == "toy_99999"));
    let cfg = config(tmp.path(), "");
    let mut exp = Experiment::open(cfg).unwrap();
    let err = emit_figures(&mut exp, &["nope".to_owned()], tmp.path()).unwrap_err();
    assert!(matches!(err, Error::UnknownImage(_)));
}

#[test]
fn figure_panel_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let mut exp = Experiment::open(cfg).unwrap();
    let id = exp.manifest().records()[3].id.clone();
    let dir = tmp.path().join("figs");
    let written = emit_figures(&mut exp, std::slice::from_ref(&id), &dir).unwrap();
    assert_eq!(written, vec![dir.join(format!("{id}.png"))]);

    let png = image::open(&written[0]).unwrap().to_rgb8();
    let meta: FigureMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{id}.json"))).unwrap()).unwrap();
    assert_eq!(meta.panels.len(), 4);
    let names: Vec<&str> = meta.panels.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, ["Original", "Grayscale", "Degraded", "Enhanced"]);
    let side = 48 * meta.scale;
    assert_eq!(png.dimensions(), (2 * side + 4, 2 * side + 4));
    for p in &meta.panels {
        for b in &p.boxes {
            let c = image::Rgb(ovadet_core::experiments::class_color(b.label));
            let [x0, y0, x1, y1] = b.rect;
            assert_eq!(*png.get_pixel(x0, y0), c);
            assert_eq!(*png.get_pixel(x1, y1), c);
            let s = meta.scale as f64;
            assert_eq!(x0 - p.origin[0], (b.bbox.xmin * s).floor() as u32);
            assert_eq!(y0 - p.origin[1], (b.bbox.ymin * s).floor() as u32);
        }
    }
    assert!(meta.panels[0].boxes.iter().any(|b| b.score >= 0.5));
}
