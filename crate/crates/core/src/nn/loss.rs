use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Summed per-pixel softmax cross-entropy of `logits` (K x H x W) against
/// `labels`; returns the summed loss and writes `d(sum)/d(logits)` scaled by
/// `grad_scale`.
pub fn pixel_cross_entropy(logits: &FeatureMap, labels: &[u8], grad_scale: f32) -> Result<(f64, FeatureMap)> {
    let k = logits.channels;
    let n = logits.plane_len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {} pixels", labels.len(), n)));
    }
    let mut grad = FeatureMap::zeros(k, logits.height, logits.width);
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for (p, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= k {
            return Err(Error::ClassOutOfRange { id: label, num_classes: k });
        }
        let mut max = f32::NEG_INFINITY;
        for c in 0..k {
            max = max.max(logits.data[c * n + p]);
        }
        let mut denom = 0.0f64;
        for (c, pr) in probs.iter_mut().enumerate() {
            *pr = ((logits.data[c * n + p] - max) as f64).exp();
            denom += *pr;
        }
        total += denom.ln() - (logits.data[label * n + p] - max) as f64;
        for (c, pr) in probs.iter().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            grad.data[c * n + p] = ((pr / denom - target) as f32) * grad_scale;
        }
    }
    Ok((total, grad))
}

/// Per-pixel arg-max class.
pub fn argmax_classes(logits: &FeatureMap) -> Vec<u8> {
    let n = logits.plane_len();
    (0..n)
        .map(|p| {
            let mut best = 0;
            for c in 1..logits.channels {
                if logits.data[c * n + p] > logits.data[best * n + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
