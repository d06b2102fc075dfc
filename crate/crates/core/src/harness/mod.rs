//! Experiment plumbing: specs, controller construction, seeded campaigns,
//! metric files and run comparison.

mod compare;
mod run;
mod spec;

pub use compare::{bootstrap_ci, compare, export_plots, paired_bootstrap_ci, Comparison, RankedRun, BOOTSTRAP_RESAMPLES};
pub use run::{
    default_out_dir, eval_dir, evaluate, read_episodes, run, train, Curves, EpisodeRow, LearningPoint, RunOptions,
    RunSummary, CHECKPOINT_DIR, EPISODES_FILE, EVAL_SEED_OFFSET, LEARNING_FILE, SPEC_FILE, SUMMARY_FILE, TTI_FILE,
};
pub use spec::{AnyController, ControllerKind, ExperimentSpec, Hyper, UrcSpec};

use thiserror::Error;

use crate::error::{AgentError, CheckpointError, ConfigError};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "NBIOT_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Divergence(_) => 3,
            HarnessError::Io(_) | HarnessError::Checkpoint(_) => 1,
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(c) => HarnessError::Config(c.to_string()),
            AgentError::Divergence(d) => HarnessError::Divergence(d),
        }
    }
}
