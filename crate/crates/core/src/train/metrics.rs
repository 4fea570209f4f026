use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::TrainError;
use crate::skeleton::ActivityClass;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub support: usize,
    pub predicted: usize,
    /// `None` when the class is never predicted.
    pub precision: Option<f64>,
    /// `None` when the class has no samples.
    pub recall: Option<f64>,
    /// `2TP / (2TP + FP + FN)`; `None` when the class neither occurs nor is predicted.
    pub f1: Option<f64>,
}

/// Classification quality over one test set. Macro averages are unweighted
/// means over the classes present in the test set; precision additionally
/// skips classes that were never predicted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    /// Builds the report from `(true, predicted)` class pairs.
    pub fn from_predictions(num_classes: usize, pairs: &[(usize, usize)]) -> Result<Self, TrainError> {
        if pairs.is_empty() {
            return Err(TrainError::Contract("cannot evaluate an empty test set".into()));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for &(t, p) in pairs {
            if t >= num_classes || p >= num_classes {
                return Err(TrainError::Contract(format!(
                    "class pair ({t}, {p}) outside {num_classes} classes"
                )));
            }
            confusion[t][p] += 1;
        }
        let total = pairs.len();
        let correct: usize = (0..num_classes).map(|k| confusion[k][k]).sum();
        let per_class: Vec<ClassMetrics> = (0..num_classes)
            .map(|k| {
                let tp = confusion[k][k];
                let support: usize = confusion[k].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[k]).sum();
                let (fp, fn_) = (predicted - tp, support - tp);
                ClassMetrics {
                    support,
                    predicted,
                    precision: (predicted > 0).then(|| tp as f64 / predicted as f64),
                    recall: (support > 0).then(|| tp as f64 / support as f64),
                    f1: (support + predicted > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
                }
            })
            .collect();
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
        let absent = num_classes - present.len();
        if absent > 0 {
            log::warn!("{absent} of {num_classes} classes absent from the test set; excluded from macro averages");
        }
        Ok(Self {
            total,
            accuracy: correct as f64 / total as f64,
            macro_precision: mean(present.iter().filter_map(|c| c.precision)),
            macro_recall: mean(present.iter().filter_map(|c| c.recall)),
            macro_f1: mean(present.iter().filter_map(|c| c.f1)),
            per_class,
            confusion,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    /// Canonical `key=value` rendering, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        let _ = writeln!(s, "samples={}", self.total);
        let _ = writeln!(s, "accuracy={:.6}", self.accuracy);
        let _ = writeln!(s, "macro_precision={:.6}", self.macro_precision);
        let _ = writeln!(s, "macro_recall={:.6}", self.macro_recall);
        let _ = writeln!(s, "macro_f1={:.6}", self.macro_f1);
        for (k, c) in self.per_class.iter().enumerate() {
            let name = class_name(k, self.num_classes());
            let _ = writeln!(s, "class.{name}.support={}", c.support);
            let _ = writeln!(s, "class.{name}.precision={}", opt(c.precision));
            let _ = writeln!(s, "class.{name}.recall={}", opt(c.recall));
            let _ = writeln!(s, "class.{name}.f1={}", opt(c.f1));
        }
        s
    }

    /// Confusion matrix with a header row and a leading true-class column.
    pub fn confusion_csv(&self) -> String {
        let k = self.num_classes();
        let names: Vec<String> = (0..k).map(|i| class_name(i, k)).collect();
        let mut s = format!("true\\predicted,{}\n", names.join(","));
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{},{}", names[i], cells.join(","));
        }
        s
    }

    /// Writes `<stem>.txt` (metrics) and `<stem>_confusion.csv` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.to_key_values())?;
        std::fs::write(dir.join(format!("{stem}_confusion.csv")), self.confusion_csv())?;
        Ok(())
    }
}

/// Activity code when the model has the standard twelve outputs, else the index.
pub fn class_name(index: usize, num_classes: usize) -> String {
    match ActivityClass::from_index(index) {
        Some(c) if num_classes == ActivityClass::ALL.len() => c.code().to_string(),
        _ => index.to_string(),
    }
}
