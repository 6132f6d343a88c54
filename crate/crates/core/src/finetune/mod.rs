//! Supervised fine-tuning and segmentation metrics.

mod metrics;
mod train;

pub use metrics::{ConfusionMatrix, MetricReport};
pub use train::{evaluate, finetune, finetune_csv, prepare_model, FinetuneConfig, FinetuneLogRow, LabeledTile};
