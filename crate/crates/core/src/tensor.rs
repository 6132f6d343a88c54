//! Dense per-sample feature maps stored channel-major (C x H x W).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.height + r) * self.width + col]
    }

    /// Per-channel spatial mean (global average pooling).
    pub fn channel_means(&self) -> Vec<f32> {
        let n = self.plane_len() as f64;
        (0..self.channels)
            .map(|c| (self.plane(c).iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
            .collect()
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Stack two maps along the channel axis.
    pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
        if a.height != b.height || a.width != b.width {
            return Err(Error::Shape(format!(
                "cannot concat {:?} with {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(FeatureMap {
            channels: a.channels + b.channels,
            height: a.height,
            width: a.width,
            data,
        })
    }

    /// Inverse of [`FeatureMap::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (FeatureMap, FeatureMap) {
        let cut = first * self.plane_len();
        (
            FeatureMap {
                channels: first,
                height: self.height,
                width: self.width,
                data: self.data[..cut].to_vec(),
            },
            FeatureMap {
                channels: self.channels - first,
                height: self.height,
                width: self.width,
                data: self.data[cut..].to_vec(),
            },
        )
    }
}
