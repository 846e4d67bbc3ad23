//! Re-identification risk auditing for single-lead ECG datasets.
//!
//! The crate covers the whole audit chain: ingesting or synthesising ECG
//! records, cleaning them, locating PQRST fiducials, turning beats into
//! windowed statistical features, splitting cohorts for gender, age-group
//! and participant-ID re-identification, fitting transparent classifiers,
//! scoring them, and attributing their predictions to individual features
//! with exact Shapley values.

pub mod audit;
pub mod cohort;
pub mod delineate;
pub mod ecg_io;
pub mod evaluate;
pub mod explain;
pub mod features;
pub mod models;
pub mod preprocess;
pub mod seeds;

pub use cohort::{AgeGroup, SplitPlan, Task};
pub use delineate::{BeatAnnotation, DelineationConfig, Fiducial, Wave};
pub use ecg_io::{EcgRecord, Gender, SyntheticPopulationConfig};
pub use evaluate::EvalReport;
pub use explain::{ShapExplanation, ShapSummary};
pub use features::{FeatureTable, FeatureVector};
pub use models::{Learner, LearnerRegistry, ModelKind, TrainedModel};
pub use preprocess::FilterSpec;
