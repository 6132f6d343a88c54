use super::index_label::IndexLabel;
use super::transforms::{AugRng, AugView, ParamValue, Transform, TransformKind, TransformRegistry, TransformSpec};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Ordered list of transforms applied to an image and its index label.
#[derive(Debug)]
pub struct AugmentationPipeline {
    ops: Vec<Box<dyn Transform>>,
}

impl AugmentationPipeline {
    pub fn identity() -> Self {
        Self { ops: Vec::new() }
    }

    pub fn from_ops(ops: Vec<Box<dyn Transform>>) -> Self {
        Self { ops }
    }

    pub fn from_specs(registry: &TransformRegistry, specs: &[TransformSpec]) -> Result<Self> {
        let mut ops = Vec::with_capacity(specs.len());
        let mut errors = Vec::new();
        for spec in specs {
            match registry.build(spec) {
                Ok(op) => ops.push(op),
                Err(Error::Config(msgs)) => errors.extend(msgs),
                Err(e) => errors.push(e.to_string()),
            }
        }
        if errors.is_empty() {
            Ok(Self { ops })
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn ops(&self) -> &[Box<dyn Transform>] {
        &self.ops
    }

    pub fn is_spatial_only(&self) -> bool {
        self.ops.iter().all(|op| op.kind() == TransformKind::Spatial)
    }

    /// Apply every op in order. Spatial ops move image and index together;
    /// photometric ops only touch the image.
    pub fn apply_view(&self, image: FeatureMap, index: IndexLabel, rng: &mut AugRng) -> Result<AugView> {
        let mut view = AugView::new(image, index)?;
        for op in &self.ops {
            view = op.apply(view, rng)?;
        }
        Ok(view)
    }
}

/// The spatial-only first view: random crop followed by resize.
pub fn default_first_view(size: usize) -> Vec<TransformSpec> {
    vec![crop_spec(size)]
}

/// The full second view: crop+resize, flips, rotation, color distortion,
/// blur, noise and grayscale.
pub fn default_second_view(size: usize) -> Vec<TransformSpec> {
    vec![
        crop_spec(size),
        TransformSpec::new("hflip").with("p", ParamValue::Scalar(0.5)),
        TransformSpec::new("vflip").with("p", ParamValue::Scalar(0.5)),
        TransformSpec::new("rotate90").with("p", ParamValue::Scalar(1.0)),
        TransformSpec::new("color_jitter")
            .with("p", ParamValue::Scalar(0.8))
            .with("brightness", ParamValue::Scalar(0.8))
            .with("contrast", ParamValue::Scalar(0.8))
            .with("saturation", ParamValue::Scalar(0.8))
            .with("hue", ParamValue::Scalar(0.2)),
        TransformSpec::new("gaussian_blur")
            .with("p", ParamValue::Scalar(0.5))
            .with("sigma", ParamValue::Range([0.1, 2.0])),
        TransformSpec::new("gaussian_noise")
            .with("p", ParamValue::Scalar(0.5))
            .with("sigma", ParamValue::Range([0.0, 0.05])),
        TransformSpec::new("grayscale").with("p", ParamValue::Scalar(0.2)),
    ]
}

fn crop_spec(size: usize) -> TransformSpec {
    TransformSpec::new("crop_resize")
        .with("scale", ParamValue::Range([0.2, 1.0]))
        .with("ratio", ParamValue::Range([0.75, 4.0 / 3.0]))
        .with("size", ParamValue::Scalar(size as f64))
}

/// Two augmented views of one source sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: AugView,
    pub view_b: AugView,
    pub source_id: usize,
}

impl ViewPair {
    /// Build the index label for `image` and draw both views.
    pub fn generate(
        image: &FeatureMap,
        source_id: usize,
        first: &AugmentationPipeline,
        second: &AugmentationPipeline,
        rng_a: &mut AugRng,
        rng_b: &mut AugRng,
    ) -> Result<Self> {
        let index = IndexLabel::build(image.height, image.width)?;
        let view_a = first.apply_view(image.clone(), index.clone(), rng_a)?;
        let view_b = second.apply_view(image.clone(), index, rng_b)?;
        if (view_a.image.height, view_a.image.width) != (view_b.image.height, view_b.image.width) {
            return Err(Error::Shape(format!(
                "views disagree in resolution: {}x{} vs {}x{}",
                view_a.image.height, view_a.image.width, view_b.image.height, view_b.image.width
            )));
        }
        Ok(Self {
            view_a,
            view_b,
            source_id,
        })
    }
}
