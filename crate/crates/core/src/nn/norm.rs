use super::params::{Grads, ParamId, ParamStore};
use crate::tensor::FeatureMap;

const EPS: f32 = 1e-5;

/// Group normalization with a learned per-channel affine transform. Statistics
/// are computed per sample, so outputs never depend on batch composition.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: FeatureMap,
    inv_std: Vec<f32>,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: &str, channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "{channels} channels not divisible into {groups} groups");
        let gamma = store.add(format!("{name}.gamma"), group, vec![channels], vec![1.0; channels]);
        let beta = store.add(format!("{name}.beta"), group, vec![channels], vec![0.0; channels]);
        Self {
            channels,
            groups,
            gamma,
            beta,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &FeatureMap) -> (FeatureMap, NormCache) {
        let per_group = self.channels / self.groups;
        let span = per_group * x.plane_len();
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let chunk = &mut xhat.data[g * span..(g + 1) * span];
            let n = chunk.len() as f64;
            let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let istd = (1.0 / (var + EPS as f64).sqrt()) as f32;
            let mean = mean as f32;
            for v in chunk.iter_mut() {
                *v = (*v - mean) * istd;
            }
            inv_std.push(istd);
        }
        let gamma = store.get(self.gamma);
        let beta = store.get(self.beta);
        let mut y = xhat.clone();
        for c in 0..self.channels {
            let (gm, bt) = (gamma[c], beta[c]);
            for v in y.plane_mut(c) {
                *v = *v * gm + bt;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &ParamStore, cache: &NormCache, dy: &FeatureMap, grads: &mut Grads) -> FeatureMap {
        let gamma = store.get(self.gamma);
        let xhat = &cache.xhat;
        {
            let dg = grads.get_mut(self.gamma);
            for c in 0..self.channels {
                dg[c] += dy.plane(c).iter().zip(xhat.plane(c)).map(|(a, b)| a * b).sum::<f32>();
            }
        }
        {
            let db = grads.get_mut(self.beta);
            for c in 0..self.channels {
                db[c] += dy.plane(c).iter().sum::<f32>();
            }
        }
        let mut dxhat = dy.clone();
        for c in 0..self.channels {
            let gm = gamma[c];
            for v in dxhat.plane_mut(c) {
                *v *= gm;
            }
        }
        let per_group = self.channels / self.groups;
        let span = per_group * dy.plane_len();
        let mut dx = dxhat;
        for g in 0..self.groups {
            let range = g * span..(g + 1) * span;
            let n = span as f64;
            let xh = &xhat.data[range.clone()];
            let d = &mut dx.data[range];
            let mean_d = d.iter().map(|&v| v as f64).sum::<f64>() / n;
            let mean_dx = d.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / n;
            let istd = cache.inv_std[g];
            for (v, &h) in d.iter_mut().zip(xh) {
                *v = istd * (*v - mean_d as f32 - h * mean_dx as f32);
            }
        }
        dx
    }
}

/// In-place rectifier; the returned output doubles as the backward mask.
pub fn relu_inplace(x: &mut FeatureMap) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu_backward(output: &FeatureMap, dy: &mut FeatureMap) {
    for (g, &o) in dy.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
