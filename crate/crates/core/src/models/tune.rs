//! Grid search by grouped three-fold cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{Dataset, HyperParams, Learner, ModelError, TrainedModel};
use crate::cohort::Task;
use crate::evaluate::macro_f1;

pub const N_FOLDS: usize = 3;

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: HyperParams,
    /// Mean validation macro-F1 per grid point, in complexity order.
    pub cv_scores: Vec<(HyperParams, f64)>,
    pub model: TrainedModel,
    pub warnings: Vec<String>,
}

/// Fold index of every row.
///
/// Identity tasks cut each participant's rows into contiguous blocks so
/// every fold sees every class. Other tasks keep participants whole and
/// deal them round-robin within their majority class; with fewer than
/// three participants rows are dealt individually instead.
pub fn assign_folds(data: &Dataset, task: Task, seed: u64, warnings: &mut Vec<String>) -> Vec<usize> {
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in data.groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut folds = vec![0; data.len()];
    if task == Task::ParticipantId {
        for rows in by_group.values() {
            let n = rows.len();
            for (k, &r) in rows.iter().enumerate() {
                folds[r] = k * N_FOLDS / n.max(1);
            }
        }
        return folds;
    }
    let mut rng = crate::seeds::rng(seed);
    if by_group.len() < N_FOLDS {
        warnings.push(format!(
            "only {} participants in the training side; cross-validating over individual windows",
            by_group.len()
        ));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for (k, r) in order.into_iter().enumerate() {
            folds[r] = k % N_FOLDS;
        }
        return folds;
    }
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (g, rows) in &by_group {
        let mut counts = vec![0usize; data.n_classes()];
        for &r in rows {
            counts[data.y[r]] += 1;
        }
        let majority = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).map_or(0, |(c, _)| c);
        by_class.entry(majority).or_default().push(g);
    }
    let mut k = 0;
    for groups in by_class.values_mut() {
        groups.shuffle(&mut rng);
        for g in groups.iter() {
            for &r in &by_group[g] {
                folds[r] = k % N_FOLDS;
            }
            k += 1;
        }
    }
    folds
}

fn cv_score(
    learner: &dyn Learner,
    data: &Dataset,
    folds: &[usize],
    params: &HyperParams,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<f64, ModelError> {
    let mut scores = Vec::new();
    for f in 0..N_FOLDS {
        let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
        let valid: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
        if train.is_empty() || valid.is_empty() {
            continue;
        }
        let fold_seed = crate::seeds::derive_indexed(seed, "cv-fold", f as u64);
        let model = match learner.fit(&data.subset(&train), params, fold_seed) {
            Ok(m) => m,
            Err(ModelError::Degenerate(msg)) => {
                warnings.push(format!("fold {f} skipped: {msg}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let truth: Vec<usize> = valid.iter().map(|&i| data.y[i]).collect();
        let pred: Vec<usize> = valid.iter().map(|&i| model.predict_row(&data.x[i])).collect();
        scores.push(macro_f1(&truth, &pred, data.n_classes()));
    }
    if scores.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Picks the grid point with the best mean validation macro-F1 (ties go to
/// the simpler point) and refits it on all of `data`.
pub fn tune(
    learner: &dyn Learner,
    data: &Dataset,
    task: Task,
    grid: &[HyperParams],
    seed: u64,
) -> Result<TuneOutcome, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::Degenerate("empty tuning grid".into()));
    }
    if data.is_empty() {
        return Err(ModelError::Empty);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| {
        let (ka, kb) = (a.complexity(), b.complexity());
        ka.0.cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
    });
    let mut warnings = Vec::new();
    let folds = assign_folds(data, task, crate::seeds::derive(seed, "cv-assign"), &mut warnings);
    let mut cv_scores: Vec<(HyperParams, f64)> = Vec::with_capacity(grid.len());
    let mut best = 0;
    for (i, params) in grid.iter().enumerate() {
        let score = cv_score(learner, data, &folds, params, seed, &mut warnings)?;
        if i > 0 && score > cv_scores[best].1 {
            best = i;
        }
        cv_scores.push((params.clone(), score));
    }
    warnings.dedup();
    let model = learner.fit(data, &grid[best], crate::seeds::derive(seed, "refit"))?;
    Ok(TuneOutcome {
        best: grid[best].clone(),
        cv_scores,
        model,
        warnings,
    })
}
