use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use ecg_reid::audit::{run_audit, ExplainSettings, InputSource, RunConfig};
use ecg_reid::cohort::{assign_age_group, split, SplitPlan, MIN_WINDOWS_PER_PARTICIPANT, TRAIN_FRACTION};
use ecg_reid::delineate::{delineate_beats, detect_r_peaks, BeatAnnotation, DelineationConfig, Fiducial, Wave};
use ecg_reid::ecg_io::{generate_population, Gender, SyntheticPopulationConfig};
use ecg_reid::evaluate::{confusion_matrix, evaluate_predictions, macro_f1, roc_auc};
use ecg_reid::explain::{shap_exact, shap_summary, Scale, SummaryConfig};
use ecg_reid::features::{feature_values, mean_amplitude_difference, mean_interval, FeatureTable, FeatureVector, IntervalSet};
use ecg_reid::models::{
    Dataset, FitInfo, ForestConfig, ForestLearner, HyperParams, Learner, LogisticConfig, LogisticLearner, ModelKind,
    ModelParams, Node, TrainedModel, Tree, TreeConfig,
};
use ecg_reid::preprocess::{clean, highpass_butterworth, powerline_notch, FilterSpec};
use ecg_reid::seeds;
use ecg_reid::{AgeGroup, Task};

struct Check {
    failures: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self { failures: Vec::new() }
    }

    fn that(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok && self.failures.len() < 5 {
            self.failures.push(what());
        }
    }

    fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn report(id: usize, title: &str, elapsed: Duration, detail: String, check: Check) -> bool {
    let status = if check.ok() { "PASS" } else { "FAIL" };
    println!("[{status}] criterion {id}: {title} ({detail}; {:.1}s)", elapsed.as_secs_f64());
    for f in &check.failures {
        println!("         {f}");
    }
    check.ok()
}

// ---------------------------------------------------------------- trees

fn random_tree(rng: &mut impl Rng, used: &[usize], m: usize, k: usize, depth: usize) -> Tree {
    fn grow(rng: &mut impl Rng, used: &[usize], k: usize, depth: usize, nodes: &mut Vec<Node>) -> usize {
        let at = nodes.len();
        if depth == 0 || used.is_empty() || rng.random_bool(0.25) {
            let counts = (0..k).map(|_| rng.random_range(0..6) as f64).collect();
            nodes.push(Node::Leaf { counts });
            return at;
        }
        nodes.push(Node::Leaf { counts: Vec::new() });
        let feature = used[rng.random_range(0..used.len())];
        let threshold = rng.random_range(-0.8..0.8);
        let left = grow(rng, used, k, depth - 1, nodes);
        let right = grow(rng, used, k, depth - 1, nodes);
        nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
            impurity_decrease: 0.0,
        };
        at
    }
    let mut nodes = Vec::new();
    grow(rng, used, k, depth, &mut nodes);
    Tree {
        nodes,
        n_features: m,
        n_classes: k,
    }
}

fn swap_features(t: &Tree, a: usize, b: usize) -> Tree {
    let nodes = t
        .nodes
        .iter()
        .map(|n| match n {
            Node::Split {
                feature,
                threshold,
                left,
                right,
                impurity_decrease,
            } => Node::Split {
                feature: if *feature == a {
                    b
                } else if *feature == b {
                    a
                } else {
                    *feature
                },
                threshold: *threshold,
                left: *left,
                right: *right,
                impurity_decrease: *impurity_decrease,
            },
            leaf => leaf.clone(),
        })
        .collect();
    Tree { nodes, ..t.clone() }
}

fn used_features(trees: &[Tree]) -> BTreeSet<usize> {
    trees
        .iter()
        .flat_map(|t| t.nodes.iter())
        .filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
        .collect()
}

fn wrap_model(trees: Vec<Tree>, m: usize, k: usize) -> TrainedModel {
    let params = if trees.len() == 1 {
        ModelParams::Tree(trees.into_iter().next().unwrap())
    } else {
        let n = trees.len();
        ModelParams::Forest {
            trees,
            tree_seeds: (0..n as u64).collect(),
        }
    };
    let kind = match params {
        ModelParams::Tree(_) => ModelKind::Tree,
        _ => ModelKind::Forest,
    };
    TrainedModel {
        kind,
        feature_names: (0..m).map(|j| format!("f{j}")).collect(),
        class_labels: (0..k).map(|c| format!("c{c}")).collect(),
        standardization: None,
        params,
        fit: FitInfo {
            hyperparams: HyperParams::Tree(TreeConfig::default()),
            seed: 0,
            iterations: 0,
            converged: true,
        },
    }
}

fn labels_for(pid: &str, gender: Gender, age_group: AgeGroup, window_index: usize, values: Vec<f64>) -> FeatureVector {
    FeatureVector {
        participant_id: pid.to_string(),
        window_index,
        gender,
        age_group,
        values,
    }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, m - 1);
            out.push(q);
        }
    }
    out
}

/// Interventional value of coalition `mask`, evaluated straight from the model.
fn oracle_value(model: &TrainedModel, class: usize, x: &[f64], bg: &[Vec<f64>], mask: usize) -> f64 {
    let mut z = vec![0.0; x.len()];
    let mut total = 0.0;
    for b in bg {
        for j in 0..x.len() {
            z[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
        }
        total += model.class_proba_row(&z, class);
    }
    total / bg.len() as f64
}

fn permutation_oracle(model: &TrainedModel, class: usize, x: &[f64], bg: &[Vec<f64>]) -> Vec<f64> {
    let m = x.len();
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut v = |mask: usize| *cache.entry(mask).or_insert_with(|| oracle_value(model, class, x, bg, mask));
    let perms = permutations(m);
    let mut phi = vec![0.0; m];
    for p in &perms {
        let mut mask = 0usize;
        for &j in p {
            let before = v(mask);
            mask |= 1 << j;
            phi[j] += v(mask) - before;
        }
    }
    phi.iter().map(|s| s / perms.len() as f64).collect()
}

fn criterion_1() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let mut rng = seeds::rng(1);
    let (mut oracle_cases, mut dummy_checks, mut max_eff, mut max_sym, mut max_perm) = (0, 0, 0f64, 0f64, 0f64);
    for case in 0..200 {
        let m = rng.random_range(2..=8);
        let k = rng.random_range(2..=3);
        let dummy = rng.random_range(0..m);
        let (a, b) = loop {
            let a = rng.random_range(0..m);
            let b = rng.random_range(0..m);
            if a != b && a != dummy && b != dummy {
                break (a, b);
            }
            if m == 2 {
                break (usize::MAX, usize::MAX);
            }
        };
        let usable: Vec<usize> = (0..m).filter(|&j| j != dummy).collect();
        let n_trees = if case % 2 == 0 { 1 } else { rng.random_range(2..=4) };
        let mut trees: Vec<Tree> = (0..n_trees).map(|_| random_tree(&mut rng, &usable, m, k, 4)).collect();
        let symmetric = a != usize::MAX && case % 4 == 1;
        if symmetric {
            trees = vec![trees[0].clone(), swap_features(&trees[0], a, b)];
        }
        let used = used_features(&trees);
        let model = wrap_model(trees, m, k);

        let mut draw = || -> Vec<f64> { (0..m).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let mut x = draw();
        let mut bg: Vec<Vec<f64>> = (0..12).map(|_| draw()).collect();
        if symmetric {
            x[b] = x[a];
            for r in &mut bg {
                r[b] = r[a];
            }
        }
        let fv = labels_for("p", Gender::Female, AgeGroup::From21To30, 0, x.clone());
        let class = case % k;
        let e = shap_exact(&model, &model.feature_names, &fv, &bg, &model.class_labels[class], Scale::Probability).unwrap();

        let eff = (e.phi0 + e.phi.iter().sum::<f64>() - model.class_proba_row(&x, class)).abs();
        max_eff = max_eff.max(eff);
        check.that(eff < 1e-9, || format!("case {case}: efficiency gap {eff:e}"));
        for j in (0..m).filter(|j| !used.contains(j)) {
            dummy_checks += 1;
            check.that(e.phi[j] == 0.0, || format!("case {case}: dummy feature {j} has phi {:e}", e.phi[j]));
        }
        if symmetric {
            let d = (e.phi[a] - e.phi[b]).abs();
            max_sym = max_sym.max(d);
            check.that(d <= 1e-12, || format!("case {case}: symmetric features differ by {d:e}"));
        }
        if m <= 6 {
            oracle_cases += 1;
            let phi = permutation_oracle(&model, class, &x, &bg);
            for j in 0..m {
                let d = (phi[j] - e.phi[j]).abs();
                max_perm = max_perm.max(d);
                check.that(d <= 1e-12, || format!("case {case}: feature {j} differs from permutation oracle by {d:e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check.that(elapsed < Duration::from_secs(30), || format!("runtime {:.1}s >= 30s", elapsed.as_secs_f64()));
    report(
        1,
        "Shapley axioms on 200 random trees/forests",
        elapsed,
        format!(
            "max efficiency gap {max_eff:.1e}, {dummy_checks} dummy checks, max symmetry gap {max_sym:.1e}, {oracle_cases} permutation-oracle cases max diff {max_perm:.1e}"
        ),
        check,
    )
}

// ---------------------------------------------------------------- logistic

fn criterion_2() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let mut rng = seeds::rng(2);
    let names = IntervalSet::Adjacent.feature_names();
    let m = names.len();
    let classes = ["a", "b", "c"];
    let mut rows = Vec::new();
    for i in 0..90 {
        let c = i % 3;
        let values: Vec<f64> = (0..m)
            .map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64 + if j == c { 1.5 } else { 0.0 } + 3.0 * j as f64)
            .collect();
        rows.push((classes[c], values));
    }
    let data = Dataset {
        feature_names: names.clone(),
        class_labels: classes.iter().map(|s| s.to_string()).collect(),
        x: rows.iter().map(|r| r.1.clone()).collect(),
        y: rows.iter().map(|r| classes.iter().position(|c| *c == r.0).unwrap()).collect(),
        groups: (0..rows.len()).map(|i| format!("g{}", i % 9)).collect(),
    };
    let model = LogisticLearner
        .fit(&data, &HyperParams::Logistic(LogisticConfig::default()), 0)
        .unwrap();
    let w = model.raw_weights().unwrap();
    let bg: Vec<Vec<f64>> = data.x.iter().step_by(3).cloned().collect();
    let mean: Vec<f64> = (0..m).map(|j| bg.iter().map(|r| r[j]).sum::<f64>() / bg.len() as f64).collect();
    let mut worst = 0f64;
    for i in 0..100 {
        let x: Vec<f64> = (0..m).map(|j| rng.random_range(-2.0..2.0) * (j + 1) as f64 + 3.0 * j as f64).collect();
        let fv = labels_for("p", Gender::Male, AgeGroup::From21To30, i, x.clone());
        let c = i % 3;
        let e = shap_exact(&model, &names, &fv, &bg, classes[c], Scale::Logit).unwrap();
        for j in 0..m {
            let d = (e.phi[j] - w[c][j] * (x[j] - mean[j])).abs();
            worst = worst.max(d);
            check.that(d <= 1e-10, || format!("instance {i} feature {j}: off by {d:e}"));
        }
    }
    report(
        2,
        "logistic logit attributions equal w_i (x_i - background mean)",
        start.elapsed(),
        format!("100 instances, max diff {worst:.1e}"),
        check,
    )
}

// ---------------------------------------------------------------- filters

fn sine(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
    let n = (seconds * fs) as usize;
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Output/input RMS ratio over the middle half, away from edge transients.
fn measured_gain(input: &[f64], output: &[f64]) -> f64 {
    let (lo, hi) = (input.len() / 4, 3 * input.len() / 4);
    let rms = |v: &[f64]| (v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64).sqrt();
    rms(&output[lo..hi]) / rms(&input[lo..hi])
}

fn db(g: f64) -> f64 {
    20.0 * g.log10()
}

/// Forward-backward Butterworth highpass gain from the bilinear-warped
/// analog prototype.
fn butterworth_oracle(order: usize, cutoff: f64, freq: f64, fs: f64) -> f64 {
    let wc = (PI * cutoff / fs).tan();
    let w = (PI * freq / fs).tan();
    1.0 / (1.0 + (wc / w).powi(2 * order as i32))
}

/// Forward-backward gain of the biquad notch b = [1, -2cos w0, 1],
/// a = [1 + alpha, -2cos w0, 1 - alpha].
fn notch_oracle(center: f64, q: f64, freq: f64, fs: f64) -> f64 {
    let w0 = 2.0 * PI * center / fs;
    let alpha = w0.sin() / (2.0 * q);
    let w = 2.0 * PI * freq / fs;
    let eval = |c: [f64; 3]| {
        let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
        let im = -(c[1] * w.sin() + c[2] * (2.0 * w).sin());
        (re * re + im * im).sqrt()
    };
    let g = eval([1.0, -2.0 * w0.cos(), 1.0]) / eval([1.0 + alpha, -2.0 * w0.cos(), 1.0 - alpha]);
    g * g
}

fn criterion_3() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let spec = FilterSpec::default();
    let mut parts = Vec::new();
    for fs in [250.0, 360.0, 500.0] {
        let x = sine(5.0, fs, 60.0);
        let g = measured_gain(&x, &highpass_butterworth(&x, fs, &spec).unwrap());
        let oracle = butterworth_oracle(spec.highpass_order, spec.highpass_cutoff_hz, 5.0, fs);
        check.that(db(g).abs() <= 1.0, || format!("highpass 5 Hz @ {fs}: {:.3} dB", db(g)));
        check.that(db(oracle).abs() <= 1.0, || format!("oracle highpass 5 Hz @ {fs}: {:.3} dB", db(oracle)));
        check.that((db(g) - db(oracle)).abs() <= 0.01, || format!("highpass 5 Hz @ {fs}: measured {:.4} dB vs oracle {:.4} dB", db(g), db(oracle)));

        let x = sine(0.05, fs, 400.0);
        let g = measured_gain(&x, &highpass_butterworth(&x, fs, &spec).unwrap());
        let oracle = butterworth_oracle(spec.highpass_order, spec.highpass_cutoff_hz, 0.05, fs);
        check.that(db(g) <= -40.0, || format!("highpass 0.05 Hz @ {fs}: {:.1} dB", db(g)));
        check.that(db(oracle) <= -40.0, || format!("oracle highpass 0.05 Hz @ {fs}: {:.1} dB", db(oracle)));
        if fs == 250.0 {
            parts.push(format!("hp 0.05 Hz {:.0} dB (oracle {:.0} dB)", db(g), db(oracle)));
        }

        let x = sine(50.0, fs, 60.0);
        let g = measured_gain(&x, &powerline_notch(&x, fs, &spec).unwrap());
        let oracle = notch_oracle(spec.powerline_freq_hz, spec.notch_quality, 50.0, fs);
        check.that(g <= 0.01, || format!("notch 50 Hz @ {fs}: residual {g:.4}"));
        check.that(oracle <= 1e-12, || format!("oracle notch 50 Hz @ {fs}: {oracle:e}"));
        if fs == 250.0 {
            parts.push(format!("notch residual {g:.1e}"));
        }

        let x = sine(5.0, fs, 60.0);
        let g = measured_gain(&x, &powerline_notch(&x, fs, &spec).unwrap());
        let oracle = notch_oracle(spec.powerline_freq_hz, spec.notch_quality, 5.0, fs);
        check.that(db(g).abs() <= 0.5, || format!("notch 5 Hz @ {fs}: {:.4} dB", db(g)));
        check.that((db(g) - db(oracle)).abs() <= 0.01, || format!("notch 5 Hz @ {fs}: measured {:.4} dB vs oracle {:.4} dB", db(g), db(oracle)));
    }
    report(3, "highpass and notch responses", start.elapsed(), parts.join(", "), check)
}

// ---------------------------------------------------------------- delineation

/// One-to-one matches between two sorted index lists within `tol`.
fn matched_pairs(truth: &[usize], found: &[usize], tol: usize) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < truth.len() && j < found.len() {
        if truth[i].abs_diff(found[j]) <= tol {
            n += 1;
            i += 1;
            j += 1;
        } else if truth[i] < found[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    n
}

fn criterion_4() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let fs = 250.0;
    let pop = generate_population(&SyntheticPopulationConfig::new(20, 2024, 60.0, fs).with_snr_db(10.0)).unwrap();
    let r_tol = (0.050 * fs).round() as usize;
    let w_tol = (0.025 * fs).round() as usize;
    let (mut tp, mut n_truth, mut n_found) = (0, 0, 0);
    let mut hit = [0usize; 4];
    let mut total = [0usize; 4];
    for (rec, truth) in pop.records.iter().zip(&pop.truth) {
        let c = clean(rec, &FilterSpec::default()).unwrap();
        let peaks = detect_r_peaks(&c.samples, fs).unwrap();
        let beats = delineate_beats(&c.samples, fs, &peaks, &DelineationConfig::default());
        let true_r = truth.r_peaks();
        tp += matched_pairs(&true_r, &peaks, r_tol);
        n_truth += true_r.len();
        n_found += peaks.len();
        for tb in &truth.beats {
            let near = beats.iter().filter(|b| b.r.index.abs_diff(tb.r) <= r_tol).min_by_key(|b| b.r.index.abs_diff(tb.r));
            for (k, (wave, want)) in [(Wave::P, tb.p), (Wave::Q, tb.q), (Wave::S, tb.s), (Wave::T, tb.t)].into_iter().enumerate() {
                let Some(want) = want else { continue };
                total[k] += 1;
                if near.and_then(|b| b.get(wave)).is_some_and(|f| f.index.abs_diff(want) <= w_tol) {
                    hit[k] += 1;
                }
            }
        }
    }
    let recall = tp as f64 / n_truth as f64;
    let precision = tp as f64 / n_found as f64;
    check.that(recall >= 0.98, || format!("R recall {recall:.4}"));
    check.that(precision >= 0.98, || format!("R precision {precision:.4}"));
    let mut rates = Vec::new();
    for (k, name) in ["P", "Q", "S", "T"].into_iter().enumerate() {
        let rate = hit[k] as f64 / total[k] as f64;
        rates.push(format!("{name} {rate:.3}"));
        check.that(rate >= 0.95, || format!("{name} within 25 ms for {rate:.4} of beats"));
    }
    let elapsed = start.elapsed();
    check.that(elapsed < Duration::from_secs(60), || format!("runtime {:.1}s >= 60s", elapsed.as_secs_f64()));
    report(
        4,
        "delineation on 20 synthetic participants at 10 dB SNR",
        elapsed,
        format!("R recall {recall:.4} precision {precision:.4}, {}", rates.join(" ")),
        check,
    )
}

// ---------------------------------------------------------------- features

fn fiducial(samples: &[f64], fs: f64, index: usize) -> Fiducial {
    Fiducial {
        index,
        amplitude_mv: samples[index],
        time_s: index as f64 / fs,
    }
}

fn beat_at(r: usize, amps: [f64; 5], offsets: [isize; 5], fs: f64) -> BeatAnnotation {
    let f = |k: usize| Fiducial {
        index: (r as isize + offsets[k]) as usize,
        amplitude_mv: amps[k],
        time_s: (r as isize + offsets[k]) as f64 / fs,
    };
    BeatAnnotation {
        p: Some(f(0)),
        q: Some(f(1)),
        r: f(2),
        s: Some(f(3)),
        t: Some(f(4)),
    }
}

/// Same fiducial indices re-read from another signal.
fn reread(beats: &[BeatAnnotation], samples: &[f64], fs: f64) -> Vec<BeatAnnotation> {
    let f = |o: &Option<Fiducial>| o.as_ref().map(|x| fiducial(samples, fs, x.index));
    beats
        .iter()
        .map(|b| BeatAnnotation {
            p: f(&b.p),
            q: f(&b.q),
            r: fiducial(samples, fs, b.r.index),
            s: f(&b.s),
            t: f(&b.t),
        })
        .collect()
}

fn brute_amplitude(beats: &[BeatAnnotation], w: Wave) -> Option<f64> {
    let mut diffs = Vec::new();
    for b in beats {
        if let Some(f) = b.get(w) {
            diffs.push(f.amplitude_mv - b.r.amplitude_mv);
        }
    }
    if diffs.is_empty() {
        None
    } else {
        Some(diffs.iter().sum::<f64>() / diffs.len() as f64)
    }
}

fn brute_interval(beats: &[BeatAnnotation], x: Wave, y: Wave) -> Option<f64> {
    let mut diffs = Vec::new();
    for b in beats {
        if let (Some(fx), Some(fy)) = (b.get(x), b.get(y)) {
            diffs.push(fy.index as f64 / 250.0 - fx.index as f64 / 250.0);
        }
    }
    if diffs.is_empty() {
        None
    } else {
        Some(diffs.iter().sum::<f64>() / diffs.len() as f64)
    }
}

fn criterion_5() -> bool {
    let start = Instant::now();
    let mut check = Check::new();

    let a = beat_at(50, [0.1, -0.1, 1.0, -0.2, 0.3], [-20, -4, 0, 4, 30], 100.0);
    let b = beat_at(150, [0.3, -0.1, 1.2, -0.2, 0.3], [-20, -4, 0, 4, 30], 100.0);
    let amp = mean_amplitude_difference(&[a, b], Wave::P).unwrap();
    check.that((amp - (-0.9)).abs() <= 1e-12, || format!("amplitude hand value {amp}"));
    let a = beat_at(20, [0.0; 5], [-10, -6, 0, 4, 30], 100.0);
    let b = beat_at(120, [0.0; 5], [-10, -5, 0, 4, 30], 100.0);
    let int = mean_interval(&[a, b], Wave::P, Wave::Q).unwrap();
    check.that((int - 0.045).abs() <= 1e-12, || format!("interval hand value {int}"));

    let mut rng = seeds::rng(5);
    let mut compared = 0;
    for case in 0..500 {
        let n = rng.random_range(1..30);
        let beats: Vec<BeatAnnotation> = (0..n)
            .map(|i| {
                let amps = [(); 5].map(|_| rng.random_range(-2.0..2.0));
                let (p, q, s, t) = (rng.random_range(5..40i64) as isize, rng.random_range(1..10i64) as isize, rng.random_range(1..10i64) as isize, rng.random_range(5..60i64) as isize);
                let mut b = beat_at(120 + i * 200, amps, [-(q + p), -q, 0, s, s + t], 250.0);
                for slot in [&mut b.p, &mut b.q, &mut b.s, &mut b.t] {
                    if rng.random_bool(0.15) {
                        *slot = None;
                    }
                }
                b
            })
            .collect();
        for w in [Wave::P, Wave::Q, Wave::S, Wave::T] {
            let got = mean_amplitude_difference(&beats, w).ok();
            match (got, brute_amplitude(&beats, w)) {
                (Some(g), Some(o)) => {
                    compared += 1;
                    check.that((g - o).abs() <= 1e-12, || format!("case {case}: amp {w:?} {g} vs {o}"));
                }
                (None, None) => {}
                (g, o) => check.that(false, || format!("case {case}: amp {w:?} defined mismatch {g:?} vs {o:?}")),
            }
        }
        for (x, y) in IntervalSet::AllPairs.pairs() {
            let got = mean_interval(&beats, x, y).ok();
            match (got, brute_interval(&beats, x, y)) {
                (Some(g), Some(o)) => {
                    compared += 1;
                    check.that((g - o).abs() <= 1e-12, || format!("case {case}: int {x:?}{y:?} {g} vs {o}"));
                }
                (None, None) => {}
                (g, o) => check.that(false, || format!("case {case}: int {x:?}{y:?} defined mismatch {g:?} vs {o:?}")),
            }
        }
    }

    let fs = 250.0;
    let pop = generate_population(&SyntheticPopulationConfig::new(4, 55, 30.0, fs).with_snr_db(20.0)).unwrap();
    for rec in &pop.records {
        let c = clean(rec, &FilterSpec::default()).unwrap();
        let peaks = detect_r_peaks(&c.samples, fs).unwrap();
        let beats: Vec<BeatAnnotation> = delineate_beats(&c.samples, fs, &peaks, &DelineationConfig::default())
            .into_iter()
            .filter(|b| b.is_complete())
            .collect();
        let base = feature_values(&beats, IntervalSet::Adjacent).unwrap();
        for (scale, offset) in [(2.5, 0.0), (0.3, 0.0), (1.0, 4.0), (1.0, -1.7), (1.8, 0.6)] {
            let moved: Vec<f64> = c.samples.iter().map(|s| scale * s + offset).collect();
            let got = feature_values(&reread(&beats, &moved, fs), IntervalSet::Adjacent).unwrap();
            for j in 0..4 {
                let want = scale * base[j];
                check.that((got[j] - want).abs() <= 1e-12 * (1.0 + offset.abs() + want.abs()), || {
                    format!("{}: amp {j} under ({scale}, {offset}) gave {} want {want}", rec.participant_id, got[j])
                });
            }
            for j in 4..8 {
                check.that(got[j] == base[j], || format!("{}: interval {j} changed under ({scale}, {offset})", rec.participant_id));
            }
        }
    }
    report(
        5,
        "feature hand values, brute-force oracle, scale and offset equivariance",
        start.elapsed(),
        format!("{compared} oracle comparisons"),
        check,
    )
}

// ---------------------------------------------------------------- cohort

fn random_cohort(rng: &mut impl Rng) -> FeatureTable {
    let n = rng.random_range(5..40);
    // half the cohorts draw ages from a few bins so most classes have several members
    let bins = if rng.random_bool(0.5) { rng.random_range(1..=3) } else { AgeGroup::ALL.len() };
    let mut rows = Vec::new();
    for p in 0..n {
        let pid = format!("p{p:03}");
        let gender = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
        let age_group = AgeGroup::ALL[rng.random_range(0..bins)];
        let n_windows = rng.random_range(1..25);
        let mut idx: Vec<usize> = (0..40).collect();
        idx.shuffle(rng);
        for w in idx.into_iter().take(n_windows) {
            rows.push(labels_for(&pid, gender, age_group, w, vec![0.0; 8]));
        }
    }
    rows.shuffle(rng);
    FeatureTable {
        names: IntervalSet::Adjacent.feature_names(),
        rows,
    }
}

fn check_plan(table: &FeatureTable, plan: &SplitPlan, check: &mut Check, case: usize, counted: &mut usize) {
    let train: BTreeSet<_> = plan.train.iter().collect();
    let test: BTreeSet<_> = plan.test.iter().collect();
    check.that(train.len() == plan.train.len() && test.len() == plan.test.len(), || format!("cohort {case}: duplicate windows"));
    check.that(train.is_disjoint(&test), || format!("cohort {case} {:?}: window overlap", plan.task));
    let mut per: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in &table.rows {
        per.entry(&r.participant_id).or_default().push(r.window_index);
    }
    match plan.task {
        Task::ParticipantId => {
            for (pid, mut w) in per {
                w.sort_unstable();
                let tr: Vec<usize> = plan.train.iter().filter(|k| k.participant_id == pid).map(|k| k.window_index).collect();
                let te: Vec<usize> = plan.test.iter().filter(|k| k.participant_id == pid).map(|k| k.window_index).collect();
                if w.len() < MIN_WINDOWS_PER_PARTICIPANT {
                    check.that(tr.is_empty() && te.is_empty(), || format!("cohort {case}: {pid} should be excluded"));
                    continue;
                }
                let cut = (TRAIN_FRACTION * w.len() as f64).floor() as usize;
                let (mut tr, mut te) = (tr, te);
                tr.sort_unstable();
                te.sort_unstable();
                check.that(tr == w[..cut] && te == w[cut..], || format!("cohort {case}: {pid} is not a temporal prefix split"));
            }
            let train_ids = SplitPlan::participants(&plan.train);
            check.that(SplitPlan::participants(&plan.test).is_subset(&train_ids), || format!("cohort {case}: test identity unseen in training"));
        }
        _ => {
            let tr = SplitPlan::participants(&plan.train);
            let te = SplitPlan::participants(&plan.test);
            check.that(tr.is_disjoint(&te), || format!("cohort {case} {:?}: participant in both sides", plan.task));
            let want = ((0.2 * per.len() as f64).round() as usize).max(1);
            let mut class_size: BTreeMap<String, usize> = BTreeMap::new();
            let mut class_of: BTreeMap<&str, String> = BTreeMap::new();
            for r in &table.rows {
                if class_of.insert(&r.participant_id, plan.task.label(r)).is_none() {
                    *class_size.entry(plan.task.label(r)).or_default() += 1;
                }
            }
            if class_size.values().all(|&c| c >= 2) {
                *counted += 1;
                check.that(te.len() == want, || format!("cohort {case} {:?}: {} test participants, want {want}", plan.task, te.len()));
            } else {
                check.that(te.len() <= want, || format!("cohort {case} {:?}: {} test participants, want <= {want}", plan.task, te.len()));
                for pid in &te {
                    check.that(class_size[&class_of[pid]] >= 2, || format!("cohort {case}: single-member class of {pid} reached test"));
                }
            }
            check.that(plan.train.len() + plan.test.len() == table.rows.len(), || format!("cohort {case}: windows lost"));
        }
    }
}

fn criterion_6() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let mut rng = seeds::rng(6);
    let (mut plans, mut counted) = (0, 0);
    for case in 0..1000 {
        let table = random_cohort(&mut rng);
        for task in Task::ALL {
            match split(&table, task, case as u64) {
                Ok(plan) => {
                    plans += 1;
                    check_plan(&table, &plan, &mut check, case, &mut counted);
                }
                Err(e) => check.that(task == Task::ParticipantId, || format!("cohort {case} {task:?}: {e}")),
            }
        }
    }
    let bins = [
        (20, None),
        (21, Some(AgeGroup::From21To30)),
        (30, Some(AgeGroup::From21To30)),
        (31, Some(AgeGroup::From31To40)),
        (70, Some(AgeGroup::From61To70)),
        (71, Some(AgeGroup::From71To89)),
        (89, Some(AgeGroup::From71To89)),
        (90, None),
    ];
    for (age, want) in bins {
        let got = assign_age_group(age).ok();
        check.that(got == want, || format!("age {age}: {got:?}, want {want:?}"));
    }
    report(6, "split invariants on 1000 random cohorts", start.elapsed(), format!("{plans} plans checked, {counted} with every class of >= 2 participants held to the exact test count"), check)
}

// ---------------------------------------------------------------- end to end

fn single_informative_table() -> FeatureTable {
    let mut rng = seeds::rng(77);
    let names = IntervalSet::Adjacent.feature_names();
    let mut rows = Vec::new();
    for p in 0..20 {
        let gender = if p % 2 == 0 { Gender::Male } else { Gender::Female };
        for w in 0..12 {
            let values: Vec<f64> = (0..names.len())
                .map(|j| {
                    let noise = rng.random_range(-1.0..1.0);
                    if names[j] == "amp_SR" {
                        let sign = if gender == Gender::Male { 1.0 } else { -1.0 };
                        sign + 0.3 * noise
                    } else {
                        noise
                    }
                })
                .collect();
            rows.push(labels_for(&format!("s{p:02}"), gender, AgeGroup::From31To40, w, values));
        }
    }
    FeatureTable { names, rows }
}

fn criterion_7() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let dir = tempfile::tempdir().unwrap();
    let synth = SyntheticPopulationConfig::new(20, 7, 180.0, 250.0).with_snr_db(20.0);
    let mut cfg = RunConfig::new(InputSource::Synthetic(synth), 42);
    cfg.tasks = vec![Task::ParticipantId];
    cfg.models = vec!["forest".into()];
    cfg.explain = ExplainSettings {
        enabled: false,
        ..ExplainSettings::default()
    };
    let outcome = run_audit(&cfg, dir.path()).unwrap();
    let accuracy = outcome.reports[0].accuracy;
    check.that(accuracy >= 0.90, || format!("participant accuracy {accuracy:.3}"));

    let table = &outcome.table;
    let plan = split(table, Task::ParticipantId, 42).unwrap();
    let (train, test) = plan.resolve(table).unwrap();
    let data = Dataset::from_rows(&table.names, &train, Task::ParticipantId, &plan.label_map).unwrap();
    let truth: Vec<usize> = test
        .iter()
        .map(|r| plan.label_map.iter().position(|l| *l == r.participant_id).unwrap())
        .collect();
    let chance = 1.0 / plan.label_map.len() as f64;
    let mut controls = Vec::new();
    for s in 0..5u64 {
        let mut shuffled = data.clone();
        shuffled.y.shuffle(&mut seeds::rng(seeds::derive_indexed(42, "label-shuffle", s)));
        let model = ForestLearner
            .fit(&shuffled, &HyperParams::Forest(ForestConfig::default()), s)
            .unwrap();
        let proba: Vec<Vec<f64>> = test.iter().map(|r| model.predict_proba_row(&r.values)).collect();
        let r = evaluate_predictions(Task::ParticipantId, ModelKind::Forest, &plan.label_map, &truth, &proba).unwrap();
        controls.push(r.accuracy);
    }
    let control = controls.iter().sum::<f64>() / controls.len() as f64;
    check.that(control <= 2.0 * chance, || format!("shuffled-label control {control:.3} > {:.3}", 2.0 * chance));

    let informative = single_informative_table();
    let iplan = split(&informative, Task::Gender, 3).unwrap();
    let (itrain, _) = iplan.resolve(&informative).unwrap();
    let idata = Dataset::from_rows(&informative.names, &itrain, Task::Gender, &iplan.label_map).unwrap();
    let forest = ForestLearner
        .fit(&idata, &HyperParams::Forest(ForestConfig { n_trees: 30, ..ForestConfig::default() }), 3)
        .unwrap();
    let summary = shap_summary(
        &forest,
        &informative,
        &iplan,
        &SummaryConfig {
            background_size: 48,
            ..SummaryConfig::default()
        },
    )
    .unwrap();
    let top = summary.ranking[0].feature.clone();
    check.that(top == "amp_SR", || format!("top feature {top}"));

    let elapsed = start.elapsed();
    check.that(elapsed < Duration::from_secs(300), || format!("runtime {:.1}s >= 300s", elapsed.as_secs_f64()));
    report(
        7,
        "end-to-end synthetic audit",
        elapsed,
        format!(
            "forest participant accuracy {accuracy:.3}, shuffled control mean {control:.3} (runs {:?}, chance {chance:.3}), top SHAP feature {top}",
            controls.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>()
        ),
        check,
    )
}

// ---------------------------------------------------------------- metrics

fn brute_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn criterion_8() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let mut rng = seeds::rng(8);
    let mut worst = 0f64;
    for case in 0..500 {
        let n = rng.random_range(1..=200);
        let levels = rng.random_range(2..50);
        let p = rng.random_range(0.05..0.95);
        let positive: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let scores: Vec<f64> = positive
            .iter()
            .map(|&y| (rng.random_range(0..levels) as f64 + if y { 3.0 } else { 0.0 }) / levels as f64)
            .collect();
        match (roc_auc(&scores, &positive), brute_auc(&scores, &positive)) {
            (Some(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                check.that((a - b).abs() <= 1e-12, || format!("case {case}: {a} vs {b}"));
            }
            (None, None) => {}
            (a, b) => check.that(false, || format!("case {case}: {a:?} vs {b:?}")),
        }
    }

    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, p, n) in [(0, 0, 8), (0, 1, 2), (1, 0, 3), (1, 1, 7)] {
        truth.extend(std::iter::repeat_n(t, n));
        pred.extend(std::iter::repeat_n(p, n));
    }
    check.that(confusion_matrix(&truth, &pred, 2) == vec![vec![8, 2], vec![3, 7]], || "confusion matrix".into());
    let proba: Vec<Vec<f64>> = pred.iter().map(|&p| if p == 0 { vec![0.9, 0.1] } else { vec![0.2, 0.8] }).collect();
    let labels = vec!["F".to_string(), "M".to_string()];
    let r = evaluate_predictions(Task::Gender, ModelKind::Tree, &labels, &truth, &proba).unwrap();
    let want_f1 = (16.0 / 21.0 + 14.0 / 19.0) / 2.0;
    let hand = [
        ("accuracy", r.accuracy, 15.0 / 20.0),
        ("precision", r.precision_macro, (8.0 / 11.0 + 7.0 / 9.0) / 2.0),
        ("recall", r.recall_macro, (8.0 / 10.0 + 7.0 / 10.0) / 2.0),
        ("f1", r.f1_macro, want_f1),
        ("macro_f1", macro_f1(&truth, &pred, 2), want_f1),
    ];
    for (name, got, want) in hand {
        check.that((got - want).abs() <= 1e-12, || format!("{name}: {got} vs hand {want}"));
    }
    report(
        8,
        "AUC pair-counting oracle and confusion-matrix hand values",
        start.elapsed(),
        format!("500 AUC cases max diff {worst:.1e}, macro-F1 {:.6}", r.f1_macro),
        check,
    )
}

// ---------------------------------------------------------------- determinism

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> bool {
    let start = Instant::now();
    let mut check = Check::new();
    let dir = tempfile::tempdir().unwrap();
    let synth = SyntheticPopulationConfig::new(10, 99, 90.0, 250.0).with_snr_db(15.0);
    let mut cfg = RunConfig::new(InputSource::Synthetic(synth), 2024);
    cfg.explain.background_size = 32;
    cfg.explain.max_points = 60;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_audit(&cfg, &a).unwrap();
    run_audit(&cfg, &b).unwrap();
    let (fa, fb) = (files_under(&a), files_under(&b));
    check.that(fa == fb, || "artifact lists differ".into());
    for f in &fa {
        let same = std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok();
        check.that(same, || format!("{f} differs"));
    }
    report(
        9,
        "two full audits with one config and seed are byte-identical",
        start.elapsed(),
        format!("{} artifacts compared", fa.len()),
        check,
    )
}

fn main() {
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
