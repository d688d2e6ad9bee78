//! Training stages, data, checkpoints and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DatasetSpec, TrainConfig};
pub use data::{dataset_images, load_images, synth_dataset};
pub use eval::{evaluate, Link, MetricRow, MetricTable, Transmission};
pub use train::{held_out_loss, train_stage, train_stage1, train_stage2, train_stage3, StageResult, StepRecord};
