//! Rejection-sampling fine-tuning: pool filters and masked supervised
//! training from the fixed base policy.

pub mod filters;
pub mod pool;
pub mod sft;

use thiserror::Error;

use crate::policy::PolicyError;

pub use filters::{apply_filters, filter_hrs, filter_mcs, filter_sqd, FilterAudit, FilterConfig};
pub use pool::DataPool;
pub use sft::{mean_sft_loss, sft_loss_and_gradient, sft_loss_and_gradient_with_targets, sft_train, SftConfig, SftOutcome};

#[derive(Debug, Error)]
pub enum RsftError {
    #[error("record for {0} has no agent tokens")]
    EmptyAgentSequence(String),
    #[error("no training data")]
    EmptyData,
    #[error("supervised training must start from the base snapshot")]
    NotBase,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pool append from iteration {got} after iteration {last}")]
    IterationRegression { last: u32, got: u32 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
