//! Exact Shapley attributions with an interventional value function.
//!
//! For a model output `f` and a background set `B`, the value of a feature
//! coalition `S` is the mean of `f` over hybrid rows that take the features
//! in `S` from the explained point and the rest from each background row.
//! All `2^M` coalitions are enumerated, so the attributions carry no
//! sampling error.

mod svg;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{SplitError, SplitPlan, Task, WindowKey};
use crate::features::{FeatureTable, FeatureVector};
use crate::models::{ModelError, ModelKind, ModelParams, Node, TrainedModel, Tree};

pub use svg::render_summary_svg;

pub const MAX_FEATURES: usize = 16;
pub const DEFAULT_BACKGROUND: usize = 128;
pub const DEFAULT_MAX_POINTS: usize = 500;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{0} features means 2^{0} coalitions; select at most {MAX_FEATURES} features before explaining")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("nothing to explain: the test side is empty")]
    Empty,
    #[error("class {0:?} is not a model class")]
    UnknownClass(String),
    #[error("the logit scale needs a logistic model, got {0}")]
    Scale(ModelKind),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("explanation file {path}: {message}")]
    File { path: String, message: String },
}

/// Model output being decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Probability of the explained class.
    #[default]
    Probability,
    /// Pre-softmax linear score of the explained class; logistic only.
    Logit,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "probability" => Ok(Scale::Probability),
            "logit" => Ok(Scale::Logit),
            other => Err(format!("unknown scale {other:?}; expected probability or logit")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "class")]
pub enum ClassPolicy {
    /// Explain whichever class the model predicts for each point.
    #[default]
    Predicted,
    Fixed(String),
}

impl fmt::Display for ClassPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassPolicy::Predicted => f.write_str("predicted"),
            ClassPolicy::Fixed(c) => write!(f, "fixed:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub phi: Vec<f64>,
    /// Mean model output over the background.
    pub phi0: f64,
    /// Model output at the explained point.
    pub fx: f64,
    pub explained_class: String,
    pub x: FeatureVector,
    pub background_size: usize,
    pub scale: Scale,
}

/// `s! (m - s - 1)! / m!` for `s = 0..m`.
fn shapley_weights(m: usize) -> Vec<f64> {
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    (0..m).map(|s| fact(s) * fact(m - s - 1) / fact(m)).collect()
}

/// Coalition values `v(S)` for every bitmask `S` over `x.len()` features.
pub fn coalition_values<F>(f: &F, x: &[f64], background: &[Vec<f64>]) -> Result<Vec<f64>, ExplainError>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let m = x.len();
    if m > MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(m));
    }
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let n_masks = 1usize << m;
    let mut v = vec![0.0; n_masks];
    let mut hybrid = vec![0.0; m];
    for b in background {
        for (mask, acc) in v.iter_mut().enumerate() {
            for j in 0..m {
                hybrid[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
            }
            *acc += f(&hybrid);
        }
    }
    let n = background.len() as f64;
    v.iter_mut().for_each(|a| *a /= n);
    Ok(v)
}

/// Bitsets over coalition masks, one per feature: bit `S` of `sel[j]` is
/// set when feature `j` belongs to `S`.
fn membership(m: usize) -> Vec<Vec<u64>> {
    let n_masks = 1usize << m;
    let words = n_masks.div_ceil(64);
    (0..m)
        .map(|j| {
            let mut w = vec![0u64; words];
            for mask in 0..n_masks {
                if mask >> j & 1 == 1 {
                    w[mask / 64] |= 1 << (mask % 64);
                }
            }
            w
        })
        .collect()
}

struct TreeWalk<'a> {
    class: usize,
    x: &'a [f64],
    b: &'a [f64],
    sel: &'a [Vec<u64>],
}

impl TreeWalk<'_> {
    /// Sends the coalitions in `alive` down `tree` from `node`: where the
    /// explained point and the background row disagree, coalitions holding
    /// the split feature follow the point and the rest follow the row.
    fn walk(&self, tree: &Tree, node: usize, alive: &[u64], acc: &mut [f64]) {
        match &tree.nodes[node] {
            Node::Leaf { counts } => {
                let total: f64 = counts.iter().sum();
                let v = if total > 0.0 { counts[self.class] / total } else { 1.0 / tree.n_classes as f64 };
                for (w, &word) in alive.iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let t = bits.trailing_zeros() as usize;
                        acc[w * 64 + t] += v;
                        bits &= bits - 1;
                    }
                }
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let x_left = self.x[*feature] <= *threshold;
                let b_left = self.b[*feature] <= *threshold;
                if x_left == b_left {
                    return self.walk(tree, if x_left { *left } else { *right }, alive, acc);
                }
                let sel = &self.sel[*feature];
                let with: Vec<u64> = alive.iter().zip(sel).map(|(a, s)| a & s).collect();
                let without: Vec<u64> = alive.iter().zip(sel).map(|(a, s)| a & !s).collect();
                let (x_child, b_child) = if x_left { (*left, *right) } else { (*right, *left) };
                if with.iter().any(|&w| w != 0) {
                    self.walk(tree, x_child, &with, acc);
                }
                if without.iter().any(|&w| w != 0) {
                    self.walk(tree, b_child, &without, acc);
                }
            }
        }
    }
}

/// Same table as [`coalition_values`] for the class probability of a tree
/// ensemble, computed by routing all coalitions through each tree at once.
pub fn tree_coalition_values(trees: &[Tree], class: usize, x: &[f64], background: &[Vec<f64>]) -> Result<Vec<f64>, ExplainError> {
    let m = x.len();
    if m > MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(m));
    }
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let n_masks = 1usize << m;
    let sel = membership(m);
    let mut all = vec![0u64; n_masks.div_ceil(64)];
    for mask in 0..n_masks {
        all[mask / 64] |= 1 << (mask % 64);
    }
    let mut v = vec![0.0; n_masks];
    let mut per_row = vec![0.0; n_masks];
    for b in background {
        per_row.iter_mut().for_each(|a| *a = 0.0);
        let walk = TreeWalk { class, x, b, sel: &sel };
        for t in trees {
            walk.walk(t, 0, &all, &mut per_row);
        }
        for (acc, r) in v.iter_mut().zip(&per_row) {
            *acc += r / trees.len() as f64;
        }
    }
    let n = background.len() as f64;
    v.iter_mut().for_each(|a| *a /= n);
    Ok(v)
}

/// Shapley values from a full table of coalition values.
pub fn shapley_from_values(v: &[f64], m: usize) -> Vec<f64> {
    let w = shapley_weights(m);
    let mut phi = vec![0.0; m];
    for mask in 0..v.len() {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += w[size] * (v[mask | 1 << i] - v[mask]);
            }
        }
    }
    phi
}

/// `(phi0, phi)` for an arbitrary scalar model.
pub fn shapley_values<F>(f: &F, x: &[f64], background: &[Vec<f64>]) -> Result<(f64, Vec<f64>), ExplainError>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let v = coalition_values(f, x, background)?;
    Ok((v[0], shapley_from_values(&v, x.len())))
}

fn class_index(model: &TrainedModel, class: &str) -> Result<usize, ExplainError> {
    model
        .class_labels
        .iter()
        .position(|c| c == class)
        .ok_or_else(|| ExplainError::UnknownClass(class.to_string()))
}

/// Scalar output of `model` for class `class` on `scale`.
pub fn model_output(model: &TrainedModel, class: usize, scale: Scale) -> Result<Box<dyn Fn(&[f64]) -> f64 + Sync + '_>, ExplainError> {
    match scale {
        Scale::Probability => Ok(Box::new(move |x: &[f64]| model.class_proba_row(x, class))),
        Scale::Logit => {
            if model.logit_row(&vec![0.0; model.n_features()]).is_none() {
                return Err(ExplainError::Scale(model.kind));
            }
            Ok(Box::new(move |x: &[f64]| model.logit_row(x).expect("logistic model")[class]))
        }
    }
}

/// Exact attribution of one prediction.
pub fn shap_exact(
    model: &TrainedModel,
    names: &[String],
    x: &FeatureVector,
    background: &[Vec<f64>],
    class: &str,
    scale: Scale,
) -> Result<ShapExplanation, ExplainError> {
    model.check_schema(names)?;
    let c = class_index(model, class)?;
    let f = model_output(model, c, scale)?;
    let v = match (&model.params, scale) {
        (ModelParams::Tree(t), Scale::Probability) => tree_coalition_values(std::slice::from_ref(t), c, &x.values, background)?,
        (ModelParams::Forest { trees, .. }, Scale::Probability) => tree_coalition_values(trees, c, &x.values, background)?,
        _ => coalition_values(f.as_ref(), &x.values, background)?,
    };
    Ok(ShapExplanation {
        phi: shapley_from_values(&v, x.values.len()),
        phi0: v[0],
        fx: f(&x.values),
        explained_class: class.to_string(),
        x: x.clone(),
        background_size: background.len(),
        scale,
    })
}

/// Up to `size` rows, drawn without replacement and kept in table order.
pub fn background_sample(rows: &[&FeatureVector], size: usize, seed: u64) -> Vec<Vec<f64>> {
    if rows.len() <= size {
        return rows.iter().map(|r| r.values.clone()).collect();
    }
    let mut rng = crate::seeds::rng(seed);
    let mut idx = index::sample(&mut rng, rows.len(), size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].values.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub background_size: usize,
    pub max_points: usize,
    pub scale: Scale,
    pub class_policy: ClassPolicy,
    pub seed: u64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            background_size: DEFAULT_BACKGROUND,
            max_points: DEFAULT_MAX_POINTS,
            scale: Scale::Probability,
            class_policy: ClassPolicy::Predicted,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub rank: usize,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub task: Task,
    pub model: ModelKind,
    pub config: SummaryConfig,
    pub feature_names: Vec<String>,
    /// Features by descending mean |phi|; rank 1 first.
    pub ranking: Vec<FeatureAttribution>,
    pub explanations: Vec<ShapExplanation>,
}

/// Explains the test side of `plan` against a background drawn from its
/// training side.
pub fn shap_summary(
    model: &TrainedModel,
    table: &FeatureTable,
    plan: &SplitPlan,
    cfg: &SummaryConfig,
) -> Result<ShapSummary, ExplainError> {
    model.check_schema(&table.names)?;
    let (mut train, mut test) = plan.resolve(table)?;
    if test.is_empty() {
        return Err(ExplainError::Empty);
    }
    if model.n_features() > MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(model.n_features()));
    }
    train.sort_by_key(|fv| WindowKey::of(fv));
    let background = background_sample(&train, cfg.background_size, crate::seeds::derive(cfg.seed, "shap-background"));
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    test.sort_by_key(|fv| WindowKey::of(fv));
    if test.len() > cfg.max_points {
        let mut rng = crate::seeds::rng(crate::seeds::derive(cfg.seed, "shap-points"));
        let mut idx = index::sample(&mut rng, test.len(), cfg.max_points).into_vec();
        idx.sort_unstable();
        test = idx.into_iter().map(|i| test[i]).collect();
    }
    if let ClassPolicy::Fixed(c) = &cfg.class_policy {
        class_index(model, c)?;
    }
    let explanations = test
        .par_iter()
        .map(|fv| {
            let class = match &cfg.class_policy {
                ClassPolicy::Predicted => model.class_labels[model.predict_row(&fv.values)].clone(),
                ClassPolicy::Fixed(c) => c.clone(),
            };
            shap_exact(model, &table.names, fv, &background, &class, cfg.scale)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ShapSummary {
        task: plan.task,
        model: model.kind,
        config: cfg.clone(),
        feature_names: table.names.clone(),
        ranking: rank_features(&table.names, &explanations),
        explanations,
    })
}

/// Mean |phi| per feature, sorted descending with ties in column order.
pub fn rank_features(names: &[String], explanations: &[ShapExplanation]) -> Vec<FeatureAttribution> {
    let n = explanations.len().max(1) as f64;
    let mut means: Vec<(usize, f64)> = (0..names.len())
        .map(|j| (j, explanations.iter().map(|e| e.phi[j].abs()).sum::<f64>() / n))
        .collect();
    means.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    means
        .into_iter()
        .enumerate()
        .map(|(r, (j, m))| FeatureAttribution {
            feature: names[j].clone(),
            rank: r + 1,
            mean_abs_phi: m,
        })
        .collect()
}

impl ShapSummary {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranking.iter().find(|a| a.feature == feature).map(|a| a.rank)
    }

    /// Beeswarm rows `feature,rank,value,phi`, features in rank order.
    pub fn beeswarm_csv(&self) -> String {
        let mut out = String::from("feature,rank,value,phi\n");
        for a in &self.ranking {
            let j = self.feature_names.iter().position(|n| *n == a.feature).expect("ranked feature exists");
            for e in &self.explanations {
                out.push_str(&format!("{},{},{},{}\n", a.feature, a.rank, e.x.values[j], e.phi[j]));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> Result<(), ExplainError> {
        std::fs::write(path, self.to_json()).map_err(|e| ExplainError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ExplainError> {
        let err = |message: String| ExplainError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(|e| err(e.to_string()))
    }
}
