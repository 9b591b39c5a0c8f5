//! Hyp-Mix: author marginal distributional hypotheses about simulated
//! learners, compose simulation prompts from them, run sweeps against an
//! LLM or a synthetic policy and check that calibration survives edits to
//! the learner model.

pub mod backend;
pub mod config;
pub mod environment;
pub mod experiment;
pub mod hypothesis;
pub mod learner;
pub mod prompt;
pub mod stats;
pub mod util;

pub use backend::{
    generate, parse_action, Backend, BackendError, GenerationRequest, GenerationResponse, RemoteBackend, RemoteConfig,
    ResponseCache, SyntheticBackend, SyntheticPolicy,
};
pub use config::{BackendKind, Bundle, ConfigError, HypmixConfig};
pub use environment::{
    builtin_labelings, canonical_actions, productive_measurement_set, sample_states, Action, ActionCategory,
    ActionLabeling, EnvState, EnvironmentError, KeyPoint, PointPair,
};
pub use experiment::{
    aggregate, classify, AggregateTable, CalibrationReport, Classification, EditGraph, ExperimentError, ExperimentPlan,
    RunRecord, Runner,
};
pub use hypothesis::{
    builtin_catalog, ClassRegistry, CriterionKind, Direction, EvalOptions, HypothesisClass, HypothesisError, MdHyp,
    Relation, SpectrumEnd, TestResult,
};
pub use learner::{apply_edit, EditOperation, LearnerCharacteristic, LearnerError, LearnerModel};
pub use prompt::{Composer, PromptError, PromptTemplates, SimulationPrompt};
pub use stats::{chi2_gof, spearman_p, spearman_rho, StatsError};
