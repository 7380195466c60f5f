//! Self-attention imputer: differentiation tape, network, and training.

pub mod gradcheck;
pub mod model;
pub mod tape;
pub mod train;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use model::{AttentionConfig, AttentionNet};
pub use train::{masked_loss, train, EpochRecord, TrainConfig, TrainedAttentionImputer};
