use thiserror::Error;

/// Invalid parameter or action.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} = {value} is not a legal value")]
    IllegalValue { field: &'static str, value: u32 },
    #[error("a configuration needs 1 to 3 groups, got {0}")]
    GroupCount(usize),
    #[error("no CE group with index {0}")]
    InvalidGroup(usize),
    #[error("RACH needs {rach} REs but the uplink only has {uplink}")]
    OverBudget { rach: u64, uplink: u64 },
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("RSRP threshold 1 must exceed threshold 2")]
    ThresholdOrder,
    #[error("action has {got} groups, scenario expects {expected}")]
    GroupMismatch { expected: usize, got: usize },
    #[error("invalid observation: {0}")]
    Observation(String),
    #[error("{0}")]
    Other(String),
}

/// Errors raised while training or running a controller.
#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training diverged: {0}")]
    Divergence(String),
}

/// Checkpoint read/write failures.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
}
