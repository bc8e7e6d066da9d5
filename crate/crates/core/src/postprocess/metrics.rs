use serde::{Deserialize, Serialize};

use super::matching::{ClassCounts, MatchResult};
use crate::dataset::{ClassLabel, PerClass};
use crate::domain::Setting;
use crate::error::{Error, Result};

/// A fold-averaged metric. `value` is `None` when every contributing fold
/// had a zero denominator; `undefined_folds` counts folds left out of the
/// mean for that reason.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    pub undefined_folds: usize,
}

impl Metric {
    pub fn single(value: Option<f64>) -> Self {
        Self {
            value,
            undefined_folds: usize::from(value.is_none()),
        }
    }

    fn ratio(num: u64, den: u64) -> Self {
        Self::single((den > 0).then(|| num as f64 / den as f64))
    }

    fn mean(metrics: impl Iterator<Item = Metric>) -> Self {
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut undefined = 0;
        for m in metrics {
            undefined += m.undefined_folds;
            if let Some(v) = m.value {
                sum += v;
                n += 1;
            }
        }
        Self {
            value: (n > 0).then(|| sum / n as f64),
            undefined_folds: undefined,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: Metric,
    pub recall: Metric,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub precision: Metric,
    pub recall: Metric,
    /// Raw counts pooled over every image and fold behind this report.
    pub counts: ClassCounts,
}

/// Per-class and aggregate precision/recall for one setting.
///
/// `all` is the micro average (counts pooled across classes); `all_macro`
/// is the unweighted mean of the defined per-class values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub setting: Option<Setting>,
    pub folds: usize,
    pub classes: PerClass<ClassReport>,
    pub all: PrecisionRecall,
    pub all_macro: PrecisionRecall,
}

impl EvaluationReport {
    pub fn with_setting(mut self, setting: Setting) -> Self {
        self.setting = Some(setting);
        self
    }

    /// Every defined precision/recall value in the report.
    pub fn defined_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.classes
            .values()
            .flat_map(|c| [c.precision, c.recall])
            .chain([self.all.precision, self.all.recall, self.all_macro.precision, self.all_macro.recall])
            .filter_map(|m| m.value)
    }
}

/// Pools per-image counts and derives precision/recall. A zero denominator
/// yields an undefined metric rather than 0 or NaN.
pub fn precision_recall(matches: &[MatchResult]) -> EvaluationReport {
    let mut pooled = MatchResult::default();
    for m in matches {
        pooled.add(m);
    }
    let classes = PerClass::from_fn(|c: ClassLabel| {
        let k = pooled.counts[c];
        ClassReport {
            precision: Metric::ratio(k.tp, k.tp + k.fp),
            recall: Metric::ratio(k.tp, k.tp + k.fn_),
            counts: k,
        }
    });
    let total = pooled.pooled();
    let all = PrecisionRecall {
        precision: Metric::ratio(total.tp, total.tp + total.fp),
        recall: Metric::ratio(total.tp, total.tp + total.fn_),
    };
    EvaluationReport {
        setting: None,
        folds: 1,
        all_macro: macro_of(&classes),
        classes,
        all,
    }
}

fn macro_of(classes: &PerClass<ClassReport>) -> PrecisionRecall {
    let mean = |vals: Vec<Option<f64>>| {
        let defined: Vec<f64> = vals.into_iter().flatten().collect();
        Metric::single((!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64))
    };
    PrecisionRecall {
        precision: mean(classes.values().map(|c| c.precision.value).collect()),
        recall: mean(classes.values().map(|c| c.recall.value).collect()),
    }
}

/// Arithmetic mean of each metric across fold reports, skipping undefined
/// entries (and counting them in `undefined_folds`). Counts are summed.
pub fn average_over_folds(reports: &[EvaluationReport]) -> Result<EvaluationReport> {
    let first = reports.first().ok_or(Error::EmptyInput("no fold reports to average"))?;
    for r in &reports[1..] {
        if r.setting != first.setting {
            return Err(Error::SettingMismatch(
                tag(first.setting),
                tag(r.setting),
            ));
        }
    }
    let classes = PerClass::from_fn(|c| {
        let mut counts = ClassCounts::default();
        for r in reports {
            counts.add(&r.classes[c].counts);
        }
        ClassReport {
            precision: Metric::mean(reports.iter().map(|r| r.classes[c].precision)),
            recall: Metric::mean(reports.iter().map(|r| r.classes[c].recall)),
            counts,
        }
    });
    let avg = |f: fn(&EvaluationReport) -> PrecisionRecall| PrecisionRecall {
        precision: Metric::mean(reports.iter().map(|r| f(r).precision)),
        recall: Metric::mean(reports.iter().map(|r| f(r).recall)),
    };
    Ok(EvaluationReport {
        setting: first.setting,
        folds: reports.iter().map(|r| r.folds).sum(),
        classes,
        all: avg(|r| r.all),
        all_macro: avg(|r| r.all_macro),
    })
}

fn tag(s: Option<Setting>) -> String {
    s.map_or_else(|| "<untagged>".to_owned(), |s| s.to_string())
}
