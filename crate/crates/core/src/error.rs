use icpe_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IcpeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error("class {class}: need {needed} instances, only {available} available")]
    InsufficientInstances {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("missing prototype for class {0}")]
    MissingPrototype(usize),

    #[error("non-finite loss at iteration {iteration} (episode seed {episode_seed:#018x})")]
    NonFiniteLoss { iteration: usize, episode_seed: u64 },

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

impl IcpeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        IcpeError::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, IcpeError>;
