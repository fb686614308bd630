//! From-scratch multi-task network: tensors, layers, loss, training,
//! gradient verification, inference and two-stage variants.

pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod predict;
mod scalar;
mod tensor;
pub mod train;
pub mod two_stage;

pub use gradcheck::{gradient_check, GroupError};
pub use loss::{loss, LossValue, LossWeights, Targets};
pub use model::{FloorspaceModel, Gates, Head, ModelConfig, Output, Param};
pub use predict::{predict, Prediction};
pub use scalar::Scalar;
pub use tensor::Tensor4;
pub use train::{train, train_with, Batch, EpochRecord, History, TrainConfig};
pub use two_stage::{compose_two_stage, TwoStage, TwoStageMode};
