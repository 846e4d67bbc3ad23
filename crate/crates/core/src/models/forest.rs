//! Bagged random-subspace ensembles of CART trees.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, row_weights, GrowConfig};
use super::{Dataset, FitInfo, HyperParams, Learner, ModelError, ModelKind, ModelParams, TrainedModel, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split.
    pub mtry: usize,
    pub bootstrap: bool,
    pub class_weighting: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 16,
            min_leaf: 1,
            mtry: 3,
            bootstrap: true,
            class_weighting: true,
        }
    }
}

pub(crate) fn average_proba(trees: &[Tree], x: &[f64], n_classes: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_classes];
    for t in trees {
        for (a, b) in p.iter_mut().zip(t.predict_proba(x)) {
            *a += b;
        }
    }
    let n = trees.len().max(1) as f64;
    p.iter_mut().for_each(|v| *v /= n);
    p
}

pub struct ForestLearner;

impl Learner for ForestLearner {
    fn name(&self) -> &'static str {
        "forest"
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Forest
    }

    fn default_params(&self) -> HyperParams {
        HyperParams::Forest(ForestConfig::default())
    }

    fn default_grid(&self) -> Vec<HyperParams> {
        let mut grid = Vec::new();
        for n_trees in [50, 100] {
            for max_depth in [8, 16] {
                grid.push(HyperParams::Forest(ForestConfig {
                    n_trees,
                    max_depth,
                    ..ForestConfig::default()
                }));
            }
        }
        grid
    }

    fn fit(&self, data: &Dataset, params: &HyperParams, seed: u64) -> Result<TrainedModel, ModelError> {
        let HyperParams::Forest(cfg) = params else {
            return Err(ModelError::WrongParams {
                expected: params.kind(),
                got: ModelKind::Forest,
            });
        };
        if data.is_empty() {
            return Err(ModelError::Empty);
        }
        if cfg.n_trees == 0 {
            return Err(ModelError::Degenerate("forest needs at least one tree".into()));
        }
        let w = row_weights(data, cfg.class_weighting);
        let grow = GrowConfig {
            max_depth: cfg.max_depth,
            min_leaf: cfg.min_leaf,
            mtry: Some(cfg.mtry),
        };
        let tree_seeds: Vec<u64> = (0..cfg.n_trees)
            .map(|i| crate::seeds::derive_indexed(seed, "tree", i as u64))
            .collect();
        let n = data.len();
        let trees: Vec<Tree> = tree_seeds
            .par_iter()
            .map(|&s| {
                let mut rng = crate::seeds::rng(s);
                let rows: Vec<usize> = if cfg.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                grow_tree(&data.x, &data.y, &w, rows, data.n_classes(), &grow, &mut rng)
            })
            .collect();
        Ok(TrainedModel {
            kind: ModelKind::Forest,
            feature_names: data.feature_names.clone(),
            class_labels: data.class_labels.clone(),
            standardization: None,
            params: ModelParams::Forest { trees, tree_seeds },
            fit: FitInfo {
                hyperparams: params.clone(),
                seed,
                iterations: 0,
                converged: true,
            },
        })
    }
}
