//! CART classification trees grown on weighted Gini impurity.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FitInfo, HyperParams, Learner, ModelError, ModelKind, ModelParams, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    /// Minimum number of training rows on each side of a split.
    pub min_leaf: usize,
    pub class_weighting: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 5,
            class_weighting: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        impurity_decrease: f64,
    },
    /// Weighted class totals of the training rows reaching the leaf.
    Leaf { counts: Vec<f64> },
}

/// Nodes in pre-order; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf(x);
        let total: f64 = counts.iter().sum();
        if total > 0.0 {
            counts.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / self.n_classes as f64; self.n_classes]
        }
    }

    pub fn class_proba(&self, x: &[f64], class: usize) -> f64 {
        let counts = self.leaf(x);
        let total: f64 = counts.iter().sum();
        if total > 0.0 {
            counts[class] / total
        } else {
            1.0 / self.n_classes as f64
        }
    }

    pub fn accumulate_importance(&self, out: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split {
                feature,
                impurity_decrease,
                ..
            } = n
            {
                out[*feature] += impurity_decrease;
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

pub(crate) struct GrowConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; `None` means all.
    pub mtry: Option<usize>,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    w: &'a [f64],
    n_classes: usize,
    n_features: usize,
    cfg: &'a GrowConfig,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

/// `W * gini` for class totals with sum `total`.
fn weighted_gini(counts: &[f64], total: f64) -> f64 {
    if total > 0.0 {
        total - sum_sq(counts) / total
    } else {
        0.0
    }
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_classes];
        for &r in rows {
            c[self.y[r]] += self.w[r];
        }
        c
    }

    fn best_split(&self, rows: &[usize], counts: &[f64], features: &[usize]) -> Option<BestSplit> {
        let total: f64 = counts.iter().sum();
        let parent = weighted_gini(counts, total);
        let min_leaf = self.cfg.min_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        let mut order = rows.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0.0; self.n_classes];
            let mut wl = 0.0;
            for i in 0..order.len() - 1 {
                let r = order[i];
                left[self.y[r]] += self.w[r];
                wl += self.w[r];
                let (a, b) = (self.x[r][f], self.x[order[i + 1]][f]);
                if a == b || i + 1 < min_leaf || order.len() - i - 1 < min_leaf {
                    continue;
                }
                let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let gain = parent - weighted_gini(&left, wl) - weighted_gini(&right, total - wl);
                if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn features(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.cfg.mtry {
            Some(m) if m < self.n_features => {
                let mut f = index::sample(rng, self.n_features, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_leaf.max(1) {
            return id;
        }
        let features = self.features(rng);
        let Some(split) = self.best_split(&rows, &counts, &features) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            impurity_decrease: split.gain,
        };
        id
    }
}

/// Grows one tree on `rows` (which may repeat) with per-row weights `w`.
pub(crate) fn grow_tree(
    x: &[Vec<f64>],
    y: &[usize],
    w: &[f64],
    rows: Vec<usize>,
    n_classes: usize,
    cfg: &GrowConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let n_features = x.first().map_or(0, Vec::len);
    let mut g = Grower {
        x,
        y,
        w,
        n_classes,
        n_features,
        cfg,
        nodes: Vec::new(),
    };
    g.grow(rows, 0, rng);
    Tree {
        nodes: g.nodes,
        n_features,
        n_classes,
    }
}

pub(crate) fn row_weights(data: &Dataset, balanced: bool) -> Vec<f64> {
    let cw = data.class_weights(balanced);
    data.y.iter().map(|&c| cw[c]).collect()
}

pub struct TreeLearner;

impl Learner for TreeLearner {
    fn name(&self) -> &'static str {
        "tree"
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Tree
    }

    fn default_params(&self) -> HyperParams {
        HyperParams::Tree(TreeConfig::default())
    }

    fn default_grid(&self) -> Vec<HyperParams> {
        [4, 8, 16]
            .into_iter()
            .map(|max_depth| {
                HyperParams::Tree(TreeConfig {
                    max_depth,
                    ..TreeConfig::default()
                })
            })
            .collect()
    }

    fn fit(&self, data: &Dataset, params: &HyperParams, seed: u64) -> Result<TrainedModel, ModelError> {
        let HyperParams::Tree(cfg) = params else {
            return Err(ModelError::WrongParams {
                expected: params.kind(),
                got: ModelKind::Tree,
            });
        };
        if data.is_empty() {
            return Err(ModelError::Empty);
        }
        let w = row_weights(data, cfg.class_weighting);
        let grow = GrowConfig {
            max_depth: cfg.max_depth,
            min_leaf: cfg.min_leaf,
            mtry: None,
        };
        let mut rng = crate::seeds::rng(seed);
        let tree = grow_tree(&data.x, &data.y, &w, (0..data.len()).collect(), data.n_classes(), &grow, &mut rng);
        Ok(TrainedModel {
            kind: ModelKind::Tree,
            feature_names: data.feature_names.clone(),
            class_labels: data.class_labels.clone(),
            standardization: None,
            params: ModelParams::Tree(tree),
            fit: FitInfo {
                hyperparams: params.clone(),
                seed,
                iterations: 0,
                converged: true,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testdata::{blobs, clusters};

    fn fit(data: &Dataset, cfg: TreeConfig) -> Tree {
        match TreeLearner.fit(data, &HyperParams::Tree(cfg), 0).unwrap().params {
            ModelParams::Tree(t) => t,
            _ => unreachable!(),
        }
    }

    fn gini(rows: &[(f64, usize)], k: usize) -> f64 {
        let mut c = vec![0.0; k];
        for &(_, y) in rows {
            c[y] += 1.0;
        }
        let n = rows.len() as f64;
        1.0 - c.iter().map(|v| (v / n) * (v / n)).sum::<f64>()
    }

    #[test]
    fn stump_matches_brute_force_split() {
        let data = clusters(3, 30, 1, 1.5, 21);
        let tree = fit(
            &data,
            TreeConfig {
                max_depth: 1,
                min_leaf: 1,
                class_weighting: false,
            },
        );
        let rows: Vec<(f64, usize)> = data.x.iter().map(|r| r[0]).zip(data.y.iter().copied()).collect();
        let mut values: Vec<f64> = rows.iter().map(|r| r.0).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let n = rows.len() as f64;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for pair in values.windows(2) {
            let t = (pair[0] + pair[1]) / 2.0;
            let (l, r): (Vec<_>, Vec<_>) = rows.iter().partition(|p| p.0 <= t);
            let score = -(l.len() as f64 / n * gini(&l, 3) + r.len() as f64 / n * gini(&r, 3));
            if score > best.0 + 1e-12 {
                best = (score, t);
            }
        }
        match &tree.nodes[0] {
            Node::Split { threshold, .. } => assert!((threshold - best.1).abs() < 1e-12),
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn pure_node_is_a_single_leaf() {
        let mut data = blobs(20, 2, 3.0, 1);
        data.y.iter_mut().for_each(|y| *y = 0);
        let tree = fit(&data, TreeConfig::default());
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_proba(&[0.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn leaf_probability_is_count_fraction() {
        let t = Tree {
            nodes: vec![Node::Leaf { counts: vec![3.0, 1.0] }],
            n_features: 1,
            n_classes: 2,
        };
        assert_eq!(t.predict_proba(&[0.0]), vec![0.75, 0.25]);
        assert_eq!(t.class_proba(&[0.0], 1), 0.25);
    }

    #[test]
    fn children_follow_parents_and_depth_is_bounded() {
        let data = clusters(4, 40, 3, 1.0, 3);
        let tree = fit(&data, TreeConfig { max_depth: 5, ..Default::default() });
        assert!(tree.depth() <= 5);
        for (i, n) in tree.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = n {
                assert!(*left > i && *right > i);
            }
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let data = clusters(3, 40, 4, 1.0, 8);
        assert_eq!(fit(&data, TreeConfig::default()), fit(&data, TreeConfig::default()));
    }

    #[test]
    fn positive_affine_rescaling_keeps_structure() {
        let data = clusters(3, 40, 3, 1.0, 11);
        let mut scaled = data.clone();
        for row in scaled.x.iter_mut() {
            row[0] = 4.0 * row[0] - 2.0;
            row[1] = 0.25 * row[1] + 10.0;
            row[2] = 8.0 * row[2];
        }
        let a = fit(&data, TreeConfig::default());
        let b = fit(&scaled, TreeConfig::default());
        assert_eq!(a.nodes.len(), b.nodes.len());
        for (na, nb) in a.nodes.iter().zip(&b.nodes) {
            match (na, nb) {
                (Node::Split { feature: fa, left: la, .. }, Node::Split { feature: fb, left: lb, .. }) => {
                    assert_eq!((fa, la), (fb, lb));
                }
                (Node::Leaf { counts: ca }, Node::Leaf { counts: cb }) => assert_eq!(ca, cb),
                _ => panic!("structure differs"),
            }
        }
    }

    #[test]
    fn importance_sums_to_one() {
        let data = blobs(100, 3, 4.0, 2);
        let m = TreeLearner.fit(&data, &TreeLearner.default_params(), 0).unwrap();
        let imp = m.feature_importance().unwrap();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(crate::models::argmax(&imp), 0);
    }
}
