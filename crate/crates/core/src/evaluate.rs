//! Classification metrics, confusion matrices and reference comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{SplitError, SplitPlan, Task};
use crate::features::FeatureTable;
use crate::models::{argmax, ModelError, ModelKind, TrainedModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test side is empty")]
    Empty,
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("report file {path}: {message}")]
    File { path: String, message: String },
}

pub const AUC_METHOD_BINARY: &str = "binary";
pub const AUC_METHOD_OVR: &str = "one-vs-rest macro";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest AUC; absent when the class has no positives or no
    /// negatives in the test side.
    pub auc: Option<f64>,
}

/// Published accuracy, precision and F1 for a task, with our deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub delta_accuracy: f64,
    pub delta_precision: f64,
    pub delta_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub model: ModelKind,
    pub class_labels: Vec<String>,
    pub n_test: usize,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub roc_auc: Option<f64>,
    pub auc_method: String,
    /// Rows are true classes, columns predictions.
    pub confusion_matrix: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceComparison>,
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
    }
    m
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Per-class (precision, recall, F1) from a confusion matrix.
fn class_scores(cm: &[Vec<usize>]) -> Vec<(f64, f64, f64)> {
    let k = cm.len();
    (0..k)
        .map(|c| {
            let tp = cm[c][c];
            let support: usize = cm[c].iter().sum();
            let predicted: usize = (0..k).map(|r| cm[r][c]).sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, support));
            (p, r, f1(p, r))
        })
        .collect()
}

/// Macro-averaged F1 over the classes that occur in `truth`.
pub fn macro_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    let cm = confusion_matrix(truth, pred, n_classes);
    let scores = class_scores(&cm);
    let present: Vec<usize> = (0..n_classes).filter(|&c| cm[c].iter().sum::<usize>() > 0).collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().map(|&c| scores[c].2).sum::<f64>() / present.len() as f64
}

/// Area under the exact step ROC curve, ties contributing half. `None`
/// without both positives and negatives.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Twice the area, in units of pairs, so every step is an integer.
    let mut area2: u128 = 0;
    let mut tp: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        area2 += gn * (2 * tp + gp);
        tp += gp;
        i = j;
    }
    Some(area2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Metrics from true labels and per-row class probabilities.
pub fn evaluate_predictions(
    task: Task,
    model: ModelKind,
    class_labels: &[String],
    truth: &[usize],
    proba: &[Vec<f64>],
) -> Result<EvalReport, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = class_labels.len();
    let pred: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
    let cm = confusion_matrix(truth, &pred, k);
    let scores = class_scores(&cm);
    let n = truth.len();
    let trace: usize = (0..k).map(|c| cm[c][c]).sum();

    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(k);
    let mut present = Vec::new();
    for c in 0..k {
        let support: usize = cm[c].iter().sum();
        let predicted: usize = (0..k).map(|r| cm[r][c]).sum();
        let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let col: Vec<f64> = proba.iter().map(|p| p[c]).collect();
        if support == 0 {
            warnings.push(format!("class {:?} absent from the test side; excluded from macro averages", class_labels[c]));
        } else {
            present.push(c);
        }
        per_class.push(ClassMetrics {
            label: class_labels[c].clone(),
            support,
            predicted,
            precision: scores[c].0,
            recall: scores[c].1,
            f1: scores[c].2,
            auc: roc_auc(&col, &positive),
        });
    }
    let macro_of = |f: fn(&(f64, f64, f64)) -> f64| -> f64 {
        present.iter().map(|&c| f(&scores[c])).sum::<f64>() / present.len() as f64
    };
    let (roc_auc_value, auc_method) = if k == 2 {
        (per_class[1].auc, AUC_METHOD_BINARY)
    } else {
        let aucs: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
        let mean = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
        (mean, AUC_METHOD_OVR)
    };
    if roc_auc_value.is_none() {
        warnings.push("ROC AUC undefined: the test side holds a single class".into());
    }
    Ok(EvalReport {
        task,
        model,
        class_labels: class_labels.to_vec(),
        n_test: n,
        accuracy: trace as f64 / n as f64,
        precision_macro: macro_of(|s| s.0),
        recall_macro: macro_of(|s| s.1),
        f1_macro: macro_of(|s| s.2),
        roc_auc: roc_auc_value,
        auc_method: auc_method.to_string(),
        confusion_matrix: cm,
        per_class,
        warnings,
        reference: None,
    })
}

/// Scores `model` on the test side of `plan`.
pub fn evaluate(model: &TrainedModel, table: &FeatureTable, plan: &SplitPlan) -> Result<EvalReport, EvalError> {
    model.check_schema(&table.names)?;
    let (_, test) = plan.resolve(table)?;
    let mut truth = Vec::with_capacity(test.len());
    let mut proba = Vec::with_capacity(test.len());
    for fv in test {
        let label = plan.task.label(fv);
        let class = model
            .class_labels
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| EvalError::Schema(format!("test label {label:?} unknown to the model")))?;
        truth.push(class);
        proba.push(model.predict_proba(&table.names, fv)?);
    }
    evaluate_predictions(plan.task, model.kind, &model.class_labels, &truth, &proba)
}

/// Published (accuracy, precision, F1) for each task.
pub fn reference_values(task: Task) -> (f64, f64, f64) {
    match task {
        Task::Gender => (0.755, 0.766, 0.760),
        Task::AgeGroup => (0.671, 0.623, 0.633),
        Task::ParticipantId => (0.819, 0.817, 0.810),
    }
}

pub fn reference_compare(mut report: EvalReport) -> EvalReport {
    let (accuracy, precision, f1) = reference_values(report.task);
    report.reference = Some(ReferenceComparison {
        accuracy,
        precision,
        f1,
        delta_accuracy: report.accuracy - accuracy,
        delta_precision: report.precision_macro - precision,
        delta_f1: report.f1_macro - f1,
    });
    report
}

pub const CSV_HEADER: &str = "task,model,n_test,accuracy,precision_macro,recall_macro,f1_macro,roc_auc,\
ref_accuracy,ref_precision,ref_f1,delta_accuracy,delta_precision,delta_f1";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let r = self.reference.as_ref();
        [
            self.task.name().to_string(),
            self.model.to_string(),
            self.n_test.to_string(),
            self.accuracy.to_string(),
            self.precision_macro.to_string(),
            self.recall_macro.to_string(),
            self.f1_macro.to_string(),
            opt(self.roc_auc),
            opt(r.map(|r| r.accuracy)),
            opt(r.map(|r| r.precision)),
            opt(r.map(|r| r.f1)),
            opt(r.map(|r| r.delta_accuracy)),
            opt(r.map(|r| r.delta_precision)),
            opt(r.map(|r| r.delta_f1)),
        ]
        .join(",")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json()).map_err(|e| EvalError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let err = |message: String| EvalError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Index of the best report for each task: highest macro-F1, then
/// accuracy, then earliest.
pub fn best_per_task(reports: &[EvalReport]) -> Vec<usize> {
    let mut best: Vec<(Task, usize)> = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        match best.iter_mut().find(|(t, _)| *t == r.task) {
            Some((_, b)) => {
                let cur = &reports[*b];
                if (r.f1_macro, r.accuracy) > (cur.f1_macro, cur.accuracy) {
                    *b = i;
                }
            }
            None => best.push((r.task, i)),
        }
    }
    best.into_iter().map(|(_, i)| i).collect()
}

/// Summary table with one row per report and a `best` flag per task.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let best = best_per_task(reports);
    let mut out = format!("{CSV_HEADER},best\n");
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!("{},{}\n", r.csv_row(), best.contains(&i)));
    }
    out
}
