//! Supervision from scripted demonstrations, the joint loss and the
//! optimisation loop.

pub mod dataset;
pub mod loss;
pub mod train;

pub use dataset::{build_dataset, demonstration, episode_samples, Dataset, DatasetSpec, FrameId, TrainSample};
pub use loss::{batch_loss, frame_pass, view_average, LossConfig, SampleOutput};
pub use train::{evaluate, frame_batches, iou_at_half, train, train_epoch, EpochLog, EvalMetrics, TrainConfig};
