//! The learned scheduler.
//!
//! Each step the environment state is encoded as a padded matrix of job rows
//! (historical, current and future sets plus one global capacity row). A GRU
//! over recent step summaries feeds two small vectors, trained on next-step
//! prediction tasks, into every row. A permutation-equivariant attention
//! encoder turns the rows into per-job confidence-score distributions and a
//! state value; the scores are sorted and the strict prefix that fits the
//! free capacity is deployed.

mod agent;
mod aux;
mod config;
mod features;
mod model;

pub use agent::{Decision, OsdecAgent, ScoreMode};
pub use aux::{
    aux_forward, aux_targets, aux_train_step, summary_row, AuxLoss, AuxOutput, AuxSample, AuxState, AUX_TASKS,
    AUX_TASK_NAMES, SUMMARY_DIM,
};
pub use config::{FeatureScales, ModelConfig, JOB_FIELDS, MARKER_FIELDS};
pub use features::{col, featurize, JobFeatures, RowSet};
pub use model::{
    forward, log_prob, sample_loss, sample_scores, scores_to_action, OsdecModel, PolicyOutput, SampleLoss, CONFIG_FILE,
    PARAMS_FILE,
};

pub use aux::aux_on_tape;

use crate::neuro::NeuroError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OsdecError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("features: {0}")]
    Features(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Neuro(#[from] NeuroError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
