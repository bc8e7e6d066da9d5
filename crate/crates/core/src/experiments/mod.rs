//! Config-driven orchestration: domain views, per-fold training and
//! evaluation with a content-addressed cache, and table/figure output.

mod config;
mod figures;
mod runner;
mod table;
mod views;

pub use config::{
    canonical_settings, merge_json, parse_config, parse_config_str, DegradationSection, DetectorSection,
    EnhancerSection, EvaluationSection, ExperimentConfig, Overrides, Profile, RangesRef, ToySource,
};
pub use figures::{class_color, compose_panel, emit_figures, restoration_examples, DrawnBox, FigureMeta, PanelMeta};
pub use runner::{run_matrix, run_setting, Experiment, ViewOutcome};
pub use table::{emit_table, read_table, write_table, ResultsRow, ResultsTable, TableFormat, COLUMNS};
pub use views::{build_domain, DomainContext, FileSource, ImageSource, MemorySource, Role};
