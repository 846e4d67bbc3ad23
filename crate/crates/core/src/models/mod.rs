//! Transparent classifiers behind a common [`Learner`] interface.
//!
//! Each model family registers itself in a [`LearnerRegistry`] under a
//! short name (`logistic`, `tree`, `forest`); the audit pipeline looks
//! learners up by the names given on the command line. Fitted models are
//! plain data ([`TrainedModel`]) that serialise to JSON and reload bit for
//! bit.

mod forest;
mod logistic;
mod registry;
mod tree;
mod tune;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Task;
use crate::features::FeatureVector;

pub use forest::{ForestConfig, ForestLearner};
pub use logistic::{LogisticConfig, LogisticLearner, LogisticParams};
pub use registry::{Learner, LearnerRegistry};
pub use tree::{Node, Tree, TreeConfig, TreeLearner};
pub use tune::{tune, TuneOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate training data: {0}")]
    Degenerate(String),
    #[error("empty training set")]
    Empty,
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("hyperparameters for {expected} given to the {got} learner")]
    WrongParams { expected: ModelKind, got: ModelKind },
    #[error("unknown model {0:?}")]
    Unknown(String),
    #[error("model file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Tree,
    Forest,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Logistic, ModelKind::Tree, ModelKind::Forest];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| ModelError::Unknown(s.to_string()))
    }
}

/// Hyperparameters of any registered family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HyperParams {
    Logistic(LogisticConfig),
    Tree(TreeConfig),
    Forest(ForestConfig),
}

impl HyperParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            HyperParams::Logistic(_) => ModelKind::Logistic,
            HyperParams::Tree(_) => ModelKind::Tree,
            HyperParams::Forest(_) => ModelKind::Forest,
        }
    }

    /// Sort key where smaller means simpler: fewer trees, shallower trees,
    /// stronger regularisation.
    pub fn complexity(&self) -> (usize, usize, f64) {
        match self {
            HyperParams::Logistic(c) => (0, 0, -c.l2_lambda),
            HyperParams::Tree(c) => (1, c.max_depth, 0.0),
            HyperParams::Forest(c) => (c.n_trees, c.max_depth, 0.0),
        }
    }
}

/// Per-feature centring and scaling learnt from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; d];
        for row in x {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelParams {
    Logistic(LogisticParams),
    Tree(Tree),
    Forest { trees: Vec<Tree>, tree_seeds: Vec<u64> },
}

/// Optimiser outcome recorded alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub hyperparams: HyperParams,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub class_labels: Vec<String>,
    /// Present for logistic regression only; trees split raw values.
    pub standardization: Option<Standardization>,
    pub params: ModelParams,
    pub fit: FitInfo,
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Class probabilities for one raw feature row.
    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.params {
            ModelParams::Logistic(p) => {
                let z = self.standardization.as_ref().map_or_else(|| x.to_vec(), |s| s.apply(x));
                logistic::softmax(&p.scores(&z))
            }
            ModelParams::Tree(t) => t.predict_proba(x),
            ModelParams::Forest { trees, .. } => forest::average_proba(trees, x, self.n_classes()),
        }
    }

    /// Probability of one class; allocation-free for tree models.
    pub fn class_proba_row(&self, x: &[f64], class: usize) -> f64 {
        match &self.params {
            ModelParams::Tree(t) => t.class_proba(x, class),
            ModelParams::Forest { trees, .. } => {
                trees.iter().map(|t| t.class_proba(x, class)).sum::<f64>() / trees.len() as f64
            }
            ModelParams::Logistic(_) => self.predict_proba_row(x)[class],
        }
    }

    /// Linear pre-softmax score of each class, in raw feature units.
    pub fn logit_row(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.params {
            ModelParams::Logistic(p) => {
                let z = self.standardization.as_ref().map_or_else(|| x.to_vec(), |s| s.apply(x));
                Some(p.scores(&z))
            }
            _ => None,
        }
    }

    /// Logistic weights mapped back to raw feature units: `w / std` per
    /// class and feature.
    pub fn raw_weights(&self) -> Option<Vec<Vec<f64>>> {
        let ModelParams::Logistic(p) = &self.params else { return None };
        let std = self.standardization.as_ref().map(|s| s.std.clone()).unwrap_or_else(|| vec![1.0; self.n_features()]);
        Some(p.weights.iter().map(|w| w.iter().zip(&std).map(|(a, s)| a / s).collect()).collect())
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba_row(x))
    }

    pub fn check_schema(&self, names: &[String]) -> Result<(), ModelError> {
        if names != self.feature_names.as_slice() {
            return Err(ModelError::Schema(format!(
                "model expects features {:?}, got {:?}",
                self.feature_names, names
            )));
        }
        Ok(())
    }

    /// Probabilities over `class_labels` for a feature vector from a table
    /// with column names `names`.
    pub fn predict_proba(&self, names: &[String], x: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        self.check_schema(names)?;
        if x.values.len() != self.n_features() || x.values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Schema(format!(
                "feature vector {}#{} is not {} finite values",
                x.participant_id,
                x.window_index,
                self.n_features()
            )));
        }
        Ok(self.predict_proba_row(&x.values))
    }

    pub fn predict(&self, names: &[String], x: &FeatureVector) -> Result<usize, ModelError> {
        Ok(argmax(&self.predict_proba(names, x)?))
    }

    /// Impurity-decrease importance, normalised to sum to 1, for tree models.
    pub fn feature_importance(&self) -> Option<Vec<f64>> {
        let trees: Vec<&Tree> = match &self.params {
            ModelParams::Tree(t) => vec![t],
            ModelParams::Forest { trees, .. } => trees.iter().collect(),
            ModelParams::Logistic(_) => return None,
        };
        let mut imp = vec![0.0; self.n_features()];
        for t in trees {
            t.accumulate_importance(&mut imp);
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        Some(imp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let err = |message: String| ModelError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(|e| err(e.to_string()))
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Training matrix with integer labels indexing `class_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub class_labels: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    /// Participant of each row, for grouped cross-validation.
    pub groups: Vec<String>,
}

impl Dataset {
    pub fn from_rows(
        feature_names: &[String],
        rows: &[&FeatureVector],
        task: Task,
        class_labels: &[String],
    ) -> Result<Self, ModelError> {
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        let mut groups = Vec::with_capacity(rows.len());
        for r in rows {
            let label = task.label(r);
            let class = class_labels
                .iter()
                .position(|c| *c == label)
                .ok_or_else(|| ModelError::Schema(format!("label {label:?} is not among {class_labels:?}")))?;
            if r.values.len() != feature_names.len() {
                return Err(ModelError::Schema(format!(
                    "row {}#{} has {} values for {} features",
                    r.participant_id,
                    r.window_index,
                    r.values.len(),
                    feature_names.len()
                )));
            }
            x.push(r.values.clone());
            y.push(class);
            groups.push(r.participant_id.clone());
        }
        Ok(Self {
            feature_names: feature_names.to_vec(),
            class_labels: class_labels.to_vec(),
            x,
            y,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            class_labels: self.class_labels.clone(),
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
        }
    }

    /// `n / (k * n_c)` for each class present, where `k` counts present
    /// classes; 0 for absent classes. With `balanced == false` every class
    /// weighs 1.
    pub fn class_weights(&self, balanced: bool) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_classes()];
        for &c in &self.y {
            counts[c] += 1;
        }
        if !balanced {
            return vec![1.0; self.n_classes()];
        }
        let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
        let n = self.len() as f64;
        counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { n / (present * c as f64) })
            .collect()
    }
}
