use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// A multi-band scene (channel-major samples) with an optional class mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterScene {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// 8 or 16.
    pub bit_depth: u8,
    pub pixels: Vec<u16>,
    pub channel_names: Vec<String>,
    pub mask: Option<Vec<u8>>,
    pub nodata_value: Option<f64>,
}

impl RasterScene {
    pub fn new(channels: usize, height: usize, width: usize, bit_depth: u8, pixels: Vec<u16>) -> Result<Self> {
        if !(channels == 3 || channels == 4) {
            return Err(Error::InvalidArgument(format!("scenes need 3 or 4 bands, got {channels}")));
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::InvalidArgument(format!("unsupported bit depth {bit_depth}")));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} samples for a {channels}x{height}x{width} scene",
                pixels.len()
            )));
        }
        let channel_names = default_band_names(channels);
        Ok(Self {
            channels,
            height,
            width,
            bit_depth,
            pixels,
            channel_names,
            mask: None,
            nodata_value: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<u8>) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::Shape(format!(
                "mask of {} pixels for a {}x{} scene",
                mask.len(),
                self.height,
                self.width
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn max_value(&self) -> f32 {
        if self.bit_depth == 8 {
            255.0
        } else {
            65535.0
        }
    }

    /// Samples scaled to `[0, 1]`.
    pub fn to_feature_map(&self) -> FeatureMap {
        let scale = 1.0 / self.max_value();
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.pixels.iter().map(|&v| v as f32 * scale).collect(),
        }
    }

    /// Check that every mask value is a class id below `num_classes`.
    pub fn validate_mask(&self, num_classes: usize) -> Result<()> {
        if let Some(mask) = &self.mask {
            if let Some(&bad) = mask.iter().find(|&&v| v as usize >= num_classes) {
                return Err(Error::ClassOutOfRange {
                    id: bad as usize,
                    num_classes,
                });
            }
        }
        Ok(())
    }
}

pub fn default_band_names(channels: usize) -> Vec<String> {
    let names: &[&str] = if channels == 4 {
        &["red", "green", "blue", "nir"]
    } else {
        &["red", "green", "blue"]
    };
    names.iter().map(|s| s.to_string()).collect()
}
