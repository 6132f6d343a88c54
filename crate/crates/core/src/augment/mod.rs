//! Paired view generation with per-pixel provenance tracking.

mod index_label;
mod pipeline;
mod transforms;

pub use index_label::IndexLabel;
pub use pipeline::{default_first_view, default_second_view, AugmentationPipeline, ViewPair};
pub use transforms::{
    AugRng, AugView, ColorJitter, CropResize, Flip, FlipAxis, GaussianBlur, GaussianNoise, Grayscale, ParamValue,
    Rotate90, Transform, TransformKind, TransformRegistry, TransformSpec,
};
