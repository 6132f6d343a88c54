//! Encoder-decoder segmentation network, projection heads, and checkpoints.

mod checkpoint;
mod model;

pub use checkpoint::{parse_groups, CheckpointBundle, CheckpointMeta, GroupBlob, LoadReport, TensorBlob};
pub use model::{
    ArchConfig, DecoderPass, EncoderPass, SegmentPass, SegmentationNet, ALL_GROUPS, DECODER_1, DECODER_2, DECODER_3,
    ENCODER, PROJ_GLOBAL, PROJ_LOCAL, SEG_HEAD,
};
