//! Multinomial logistic regression fitted by gradient descent.

use serde::{Deserialize, Serialize};

use super::{Dataset, FitInfo, HyperParams, Learner, ModelError, ModelKind, ModelParams, Standardization, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2_lambda: f64,
    pub max_iter: usize,
    /// Stop once the gradient's infinity norm falls below this.
    pub tol: f64,
    pub class_weighting: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-3,
            max_iter: 1000,
            tol: 1e-6,
            class_weighting: true,
        }
    }
}

/// Weights act on standardised features; one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl LogisticParams {
    pub fn scores(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + w.iter().zip(z).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Weighted mean cross-entropy plus `lambda/2 * ||W||^2`, over standardised
/// rows. Parameters are flattened as `[W (k x d) row-major, b (k)]`.
pub(crate) struct Objective<'a> {
    pub z: &'a [Vec<f64>],
    pub y: &'a [usize],
    pub row_weight: Vec<f64>,
    pub k: usize,
    pub d: usize,
    pub lambda: f64,
}

impl Objective<'_> {
    pub fn n_params(&self) -> usize {
        self.k * (self.d + 1)
    }

    fn unpack<'p>(&self, theta: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        theta.split_at(self.k * self.d)
    }

    fn scores(&self, theta: &[f64], row: &[f64]) -> Vec<f64> {
        let (w, b) = self.unpack(theta);
        (0..self.k)
            .map(|c| b[c] + w[c * self.d..(c + 1) * self.d].iter().zip(row).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let total: f64 = self.row_weight.iter().sum();
        let mut loss = 0.0;
        for ((row, &y), &s) in self.z.iter().zip(self.y).zip(&self.row_weight) {
            let sc = self.scores(theta, row);
            let max = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + sc.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += s * (lse - sc[y]);
        }
        let (w, _) = self.unpack(theta);
        loss / total + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let total: f64 = self.row_weight.iter().sum();
        let mut g = vec![0.0; self.n_params()];
        let kd = self.k * self.d;
        for ((row, &y), &s) in self.z.iter().zip(self.y).zip(&self.row_weight) {
            let p = softmax(&self.scores(theta, row));
            for c in 0..self.k {
                let err = s * (p[c] - if c == y { 1.0 } else { 0.0 }) / total;
                for (j, v) in row.iter().enumerate() {
                    g[c * self.d + j] += err * v;
                }
                g[kd + c] += err;
            }
        }
        for (gj, wj) in g[..kd].iter_mut().zip(&theta[..kd]) {
            *gj += self.lambda * wj;
        }
        g
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient descent with Barzilai-Borwein step proposals and a
/// non-monotone Armijo backtracking search. Returns `(theta, iterations,
/// converged)`.
pub(crate) fn minimize(obj: &Objective, max_iter: usize, tol: f64) -> (Vec<f64>, usize, bool) {
    const MEMORY: usize = 10;
    let mut theta = vec![0.0; obj.n_params()];
    let mut f = obj.loss(&theta);
    let mut g = obj.gradient(&theta);
    let mut recent = std::collections::VecDeque::from([f]);
    let mut step = 1.0;
    for it in 0..max_iter {
        if inf_norm(&g) < tol {
            return (theta, it, true);
        }
        let gg = dot(&g, &g);
        let f_ref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut t = step;
        let (next, f_next) = loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(a, gi)| a - t * gi).collect();
            let fc = obj.loss(&cand);
            // Below rounding level the loss can no longer rank candidates.
            let flat = (fc - f).abs() <= 8.0 * f64::EPSILON * f.abs().max(1.0);
            if fc <= f_ref - 1e-4 * t * gg || flat {
                break (cand, fc);
            }
            t *= 0.5;
            if t < 1e-20 {
                return (theta, it, false);
            }
        };
        let g_next = obj.gradient(&next);
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        theta = next;
        f = f_next;
        g = g_next;
        recent.push_back(f);
        if recent.len() > MEMORY {
            recent.pop_front();
        }
    }
    let converged = inf_norm(&g) < tol;
    (theta, max_iter, converged)
}

pub struct LogisticLearner;

impl Learner for LogisticLearner {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Logistic
    }

    fn default_params(&self) -> HyperParams {
        HyperParams::Logistic(LogisticConfig::default())
    }

    fn default_grid(&self) -> Vec<HyperParams> {
        [0.0, 1e-3, 1e-1]
            .into_iter()
            .map(|l2_lambda| {
                HyperParams::Logistic(LogisticConfig {
                    l2_lambda,
                    ..LogisticConfig::default()
                })
            })
            .collect()
    }

    fn fit(&self, data: &Dataset, params: &HyperParams, seed: u64) -> Result<TrainedModel, ModelError> {
        let HyperParams::Logistic(cfg) = params else {
            return Err(ModelError::WrongParams {
                expected: params.kind(),
                got: ModelKind::Logistic,
            });
        };
        if data.is_empty() {
            return Err(ModelError::Empty);
        }
        let mut present = data.y.clone();
        present.sort_unstable();
        present.dedup();
        if present.len() < 2 {
            return Err(ModelError::Degenerate("logistic regression needs at least two classes".into()));
        }

        let standardization = Standardization::fit(&data.x);
        let z: Vec<Vec<f64>> = data.x.iter().map(|r| standardization.apply(r)).collect();
        let cw = data.class_weights(cfg.class_weighting);
        let obj = Objective {
            z: &z,
            y: &data.y,
            row_weight: data.y.iter().map(|&c| cw[c]).collect(),
            k: data.n_classes(),
            d: data.n_features(),
            lambda: cfg.l2_lambda,
        };
        let (theta, iterations, converged) = minimize(&obj, cfg.max_iter, cfg.tol);
        if !converged {
            log::debug!("logistic regression stopped after {iterations} iterations without reaching tol {}", cfg.tol);
        }
        let (w, b) = theta.split_at(obj.k * obj.d);
        let params = LogisticParams {
            weights: w.chunks(obj.d).map(<[f64]>::to_vec).collect(),
            intercepts: b.to_vec(),
        };
        Ok(TrainedModel {
            kind: ModelKind::Logistic,
            feature_names: data.feature_names.clone(),
            class_labels: data.class_labels.clone(),
            standardization: Some(standardization),
            params: ModelParams::Logistic(params),
            fit: FitInfo {
                hyperparams: HyperParams::Logistic(cfg.clone()),
                seed,
                iterations,
                converged,
            },
        })
    }
}
