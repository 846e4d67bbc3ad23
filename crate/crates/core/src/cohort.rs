//! Re-identification tasks, age binning and train/test split plans.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecg_io::{MAX_AGE, MIN_AGE};
use crate::features::{FeatureTable, FeatureVector};
use crate::seeds;

/// Share of participants (gender, age group) or of each participant's
/// windows (participant ID) used for training.
pub const TRAIN_FRACTION: f64 = 0.8;
pub const MIN_PARTICIPANTS: usize = 5;
pub const MIN_WINDOWS_PER_PARTICIPANT: usize = 5;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("age {0} outside {MIN_AGE}-{MAX_AGE}")]
    AgeOutOfRange(u32),
    #[error("need at least {min} participants, found {found}")]
    TooFewParticipants { found: usize, min: usize },
    #[error("no participant has at least {MIN_WINDOWS_PER_PARTICIPANT} windows")]
    Empty,
    #[error("plan references window {participant_id}#{window_index} missing from the feature table")]
    UnknownWindow { participant_id: String, window_index: usize },
    #[error("plan file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Gender,
    AgeGroup,
    ParticipantId,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Gender, Task::AgeGroup, Task::ParticipantId];

    pub fn name(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::AgeGroup => "age_group",
            Task::ParticipantId => "participant_id",
        }
    }

    pub fn label(self, fv: &FeatureVector) -> String {
        match self {
            Task::Gender => fv.gender.code().to_string(),
            Task::AgeGroup => fv.age_group.label().to_string(),
            Task::ParticipantId => fv.participant_id.clone(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gender" => Ok(Task::Gender),
            "age_group" | "age" => Ok(Task::AgeGroup),
            "participant_id" | "participant" | "id" => Ok(Task::ParticipantId),
            other => Err(format!("unknown task {other:?} (gender, age_group, participant_id)")),
        }
    }
}

/// Six inclusive age bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgeGroup {
    From21To30,
    From31To40,
    From41To50,
    From51To60,
    From61To70,
    From71To89,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 6] = [
        AgeGroup::From21To30,
        AgeGroup::From31To40,
        AgeGroup::From41To50,
        AgeGroup::From51To60,
        AgeGroup::From61To70,
        AgeGroup::From71To89,
    ];

    pub fn bounds(self) -> (u32, u32) {
        match self {
            AgeGroup::From21To30 => (21, 30),
            AgeGroup::From31To40 => (31, 40),
            AgeGroup::From41To50 => (41, 50),
            AgeGroup::From51To60 => (51, 60),
            AgeGroup::From61To70 => (61, 70),
            AgeGroup::From71To89 => (71, 89),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::From21To30 => "21-30",
            AgeGroup::From31To40 => "31-40",
            AgeGroup::From41To50 => "41-50",
            AgeGroup::From51To60 => "51-60",
            AgeGroup::From61To70 => "61-70",
            AgeGroup::From71To89 => "71-89",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgeGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgeGroup::ALL
            .into_iter()
            .find(|g| g.label() == s.trim())
            .ok_or_else(|| format!("unknown age group {s:?}"))
    }
}

impl Serialize for AgeGroup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for AgeGroup {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn assign_age_group(age: u32) -> Result<AgeGroup, SplitError> {
    AgeGroup::ALL
        .into_iter()
        .find(|g| {
            let (lo, hi) = g.bounds();
            (lo..=hi).contains(&age)
        })
        .ok_or(SplitError::AgeOutOfRange(age))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowKey {
    pub participant_id: String,
    pub window_index: usize,
}

impl WindowKey {
    pub fn of(fv: &FeatureVector) -> Self {
        Self {
            participant_id: fv.participant_id.clone(),
            window_index: fv.window_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub task: Task,
    pub seed: u64,
    /// Class labels in model output order.
    pub label_map: Vec<String>,
    pub train: Vec<WindowKey>,
    pub test: Vec<WindowKey>,
    pub warnings: Vec<String>,
}

fn participant_labels(table: &FeatureTable, task: Task) -> BTreeMap<&str, String> {
    table
        .rows
        .iter()
        .map(|r| (r.participant_id.as_str(), task.label(r)))
        .collect()
}

/// Participant-level split for the demographic tasks: about 80 % of
/// participants train, the rest test, stratified by class.
///
/// The test side holds exactly `max(1, round(0.2 * participants))`
/// participants. Classes with at least two participants each receive one
/// test slot (largest classes first) while slots remain; leftover slots go
/// to the class furthest below its proportional share. Single-participant
/// classes stay in training.
pub fn split_by_participant(table: &FeatureTable, task: Task, seed: u64) -> Result<SplitPlan, SplitError> {
    assert!(task != Task::ParticipantId, "participant-ID plans use split_temporal");
    let labels = participant_labels(table, task);
    let total = labels.len();
    if total < MIN_PARTICIPANTS {
        return Err(SplitError::TooFewParticipants {
            found: total,
            min: MIN_PARTICIPANTS,
        });
    }

    let mut rng = seeds::rng(seed);
    let mut classes: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (pid, label) in &labels {
        classes.entry(label.as_str()).or_default().push(pid);
    }
    for members in classes.values_mut() {
        members.shuffle(&mut rng);
    }

    let mut warnings = Vec::new();
    for (label, members) in &classes {
        if members.len() < 2 {
            let msg = format!("{task}: class {label} has a single participant and is confined to training");
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    let n_test = ((1.0 - TRAIN_FRACTION) * total as f64).round().max(1.0) as usize;
    let mut quota: BTreeMap<&str, usize> = classes.keys().map(|&k| (k, 0)).collect();
    let mut budget = n_test;

    let mut by_size: Vec<(&str, usize)> = classes
        .iter()
        .filter(|(_, m)| m.len() >= 2)
        .map(|(&k, m)| (k, m.len()))
        .collect();
    by_size.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for &(label, _) in &by_size {
        if budget == 0 {
            let msg = format!("{task}: class {label} gets no test participant (test budget of {n_test} exhausted)");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        *quota.get_mut(label).unwrap() += 1;
        budget -= 1;
    }
    while budget > 0 {
        let pick = by_size
            .iter()
            .filter(|(label, size)| quota[label] + 1 < *size)
            .map(|&(label, size)| (label, size as f64 * n_test as f64 / total as f64 - quota[label] as f64))
            .fold(None::<(&str, f64)>, |best, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        let Some((label, _)) = pick else { break };
        *quota.get_mut(label).unwrap() += 1;
        budget -= 1;
    }

    let test_participants: HashSet<&str> = classes
        .iter()
        .flat_map(|(label, members)| members.iter().take(quota[label]).copied())
        .collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &table.rows {
        if test_participants.contains(r.participant_id.as_str()) {
            test.push(WindowKey::of(r));
        } else {
            train.push(WindowKey::of(r));
        }
    }
    train.sort();
    test.sort();
    Ok(SplitPlan {
        task,
        seed,
        label_map: classes.keys().map(|s| s.to_string()).collect(),
        train,
        test,
        warnings,
    })
}

/// Per-participant temporal split: the first `floor(0.8 n)` windows of each
/// participant train, the rest test. Participants with fewer than five
/// windows are left out.
pub fn split_temporal(table: &FeatureTable, seed: u64) -> Result<SplitPlan, SplitError> {
    let mut per: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in &table.rows {
        per.entry(r.participant_id.as_str()).or_default().push(r.window_index);
    }
    let mut warnings = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut label_map = Vec::new();
    for (pid, mut windows) in per {
        if windows.len() < MIN_WINDOWS_PER_PARTICIPANT {
            let msg = format!(
                "participant_id: {pid} has {} windows (< {MIN_WINDOWS_PER_PARTICIPANT}) and is excluded",
                windows.len()
            );
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        windows.sort_unstable();
        let cut = (TRAIN_FRACTION * windows.len() as f64).floor() as usize;
        let key = |w: usize| WindowKey {
            participant_id: pid.to_string(),
            window_index: w,
        };
        train.extend(windows[..cut].iter().map(|&w| key(w)));
        test.extend(windows[cut..].iter().map(|&w| key(w)));
        label_map.push(pid.to_string());
    }
    if label_map.is_empty() {
        return Err(SplitError::Empty);
    }
    Ok(SplitPlan {
        task: Task::ParticipantId,
        seed,
        label_map,
        train,
        test,
        warnings,
    })
}

/// Builds the plan appropriate for `task`.
pub fn split(table: &FeatureTable, task: Task, seed: u64) -> Result<SplitPlan, SplitError> {
    match task {
        Task::ParticipantId => split_temporal(table, seed),
        _ => split_by_participant(table, task, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

#[derive(Serialize, Deserialize)]
struct Assignment {
    participant_id: String,
    window_index: usize,
    side: Side,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    task: Task,
    seed: u64,
    label_map: Vec<String>,
    #[serde(default)]
    warnings: Vec<String>,
    assignments: Vec<Assignment>,
}

impl SplitPlan {
    /// Rows of `table` on each side, in plan order.
    pub fn resolve<'a>(&self, table: &'a FeatureTable) -> Result<(Vec<&'a FeatureVector>, Vec<&'a FeatureVector>), SplitError> {
        let index: BTreeMap<(&str, usize), &FeatureVector> = table
            .rows
            .iter()
            .map(|r| ((r.participant_id.as_str(), r.window_index), r))
            .collect();
        let lookup = |keys: &[WindowKey]| {
            keys.iter()
                .map(|k| {
                    index
                        .get(&(k.participant_id.as_str(), k.window_index))
                        .copied()
                        .ok_or_else(|| SplitError::UnknownWindow {
                            participant_id: k.participant_id.clone(),
                            window_index: k.window_index,
                        })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        Ok((lookup(&self.train)?, lookup(&self.test)?))
    }

    pub fn participants(keys: &[WindowKey]) -> BTreeSet<&str> {
        keys.iter().map(|k| k.participant_id.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        let assignments = self
            .train
            .iter()
            .map(|k| (k, Side::Train))
            .chain(self.test.iter().map(|k| (k, Side::Test)))
            .map(|(k, side)| Assignment {
                participant_id: k.participant_id.clone(),
                window_index: k.window_index,
                side,
            })
            .collect();
        let file = PlanFile {
            task: self.task,
            seed: self.seed,
            label_map: self.label_map.clone(),
            warnings: self.warnings.clone(),
            assignments,
        };
        serde_json::to_string_pretty(&file).expect("plan serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: PlanFile = serde_json::from_str(text)?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for a in file.assignments {
            let key = WindowKey {
                participant_id: a.participant_id,
                window_index: a.window_index,
            };
            match a.side {
                Side::Train => train.push(key),
                Side::Test => test.push(key),
            }
        }
        Ok(Self {
            task: file.task,
            seed: file.seed,
            label_map: file.label_map,
            train,
            test,
            warnings: file.warnings,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), SplitError> {
        std::fs::write(path, self.to_json()).map_err(|e| SplitError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, SplitError> {
        let err = |message: String| SplitError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(|e| err(e.to_string()))
    }
}
