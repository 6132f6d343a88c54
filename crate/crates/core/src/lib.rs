//! Self-supervised contrastive pretraining for semantic segmentation
//! networks: a global style contrastive objective on encoder features, a
//! local matching contrastive objective on decoder features, and the
//! fine-tuning and evaluation protocol used to measure what the pretraining
//! buys with few labels.

pub mod augment;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod finetune;
pub mod glcnet;
pub mod network;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
