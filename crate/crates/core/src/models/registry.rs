use std::collections::BTreeMap;

use super::{Dataset, ForestLearner, HyperParams, LogisticLearner, ModelError, ModelKind, TrainedModel, TreeLearner};

/// A model family that can be fitted by name.
pub trait Learner: Send + Sync {
    fn name(&self) -> &'static str;

    fn kind(&self) -> ModelKind;

    fn default_params(&self) -> HyperParams;

    /// Tuning grid used when none is supplied.
    fn default_grid(&self) -> Vec<HyperParams>;

    fn fit(&self, data: &Dataset, params: &HyperParams, seed: u64) -> Result<TrainedModel, ModelError>;
}

pub struct LearnerRegistry {
    learners: BTreeMap<&'static str, Box<dyn Learner>>,
}

impl LearnerRegistry {
    pub fn new() -> Self {
        Self {
            learners: BTreeMap::new(),
        }
    }

    /// Registry holding the three built-in families.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(Box::new(LogisticLearner));
        r.register(Box::new(TreeLearner));
        r.register(Box::new(ForestLearner));
        r
    }

    pub fn register(&mut self, learner: Box<dyn Learner>) {
        self.learners.insert(learner.name(), learner);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Learner, ModelError> {
        self.learners
            .get(name.trim())
            .map(|b| b.as_ref())
            .ok_or_else(|| ModelError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.learners.keys().copied()
    }

    /// Fits with whichever learner owns `params`.
    pub fn fit(&self, data: &Dataset, params: &HyperParams, seed: u64) -> Result<TrainedModel, ModelError> {
        self.get(params.kind().name())?.fit(data, params, seed)
    }
}

impl Default for LearnerRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}
