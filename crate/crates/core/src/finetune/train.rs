use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::glcnet::role_rng;
use crate::network::{ArchConfig, CheckpointBundle, LoadReport, SegmentationNet, PROJ_GLOBAL, PROJ_LOCAL};
use crate::nn::loss::{argmax_classes, pixel_cross_entropy};
use crate::nn::optim::exponential_lr;
use crate::nn::{Adam, Grads};
use crate::tensor::FeatureMap;

/// An image with one class id per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTile {
    pub image: FeatureMap,
    pub labels: Vec<u8>,
}

impl LabeledTile {
    pub fn new(image: FeatureMap, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != image.plane_len() {
            return Err(Error::Shape(format!("{} labels for a {}x{} image", labels.len(), image.height, image.width)));
        }
        Ok(Self { image, labels })
    }

    /// One of the eight square symmetries, applied to image and labels alike.
    /// Bit 0 mirrors columns, bit 1 mirrors rows, bit 2 transposes.
    pub fn dihedral(&self, code: u8) -> Self {
        let (c, h, w) = self.image.shape();
        let transpose = code & 4 != 0 && h == w;
        let src = |r: usize, col: usize| -> usize {
            let (mut r, mut col) = if transpose { (col, r) } else { (r, col) };
            if code & 2 != 0 {
                r = h - 1 - r;
            }
            if code & 1 != 0 {
                col = w - 1 - col;
            }
            r * w + col
        };
        let mut image = FeatureMap::zeros(c, h, w);
        let mut labels = vec![0u8; h * w];
        for r in 0..h {
            for col in 0..w {
                let s = src(r, col);
                labels[r * w + col] = self.labels[s];
                for ch in 0..c {
                    image.data[ch * h * w + r * w + col] = self.image.data[ch * h * w + s];
                }
            }
        }
        Self { image, labels }
    }
}

/// Supervised fine-tuning schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    /// Comma separated parameter groups copied from the checkpoint.
    pub load_groups: String,
    pub label_fraction: f64,
    /// Random flips and transposes of each training tile.
    pub augment: bool,
    /// Classes left out of the metrics.
    pub ignore_classes: Vec<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            learning_rate: 0.001,
            lr_decay: 0.98,
            load_groups: "encoder".into(),
            label_fraction: 0.01,
            augment: true,
            ignore_classes: Vec::new(),
        }
    }
}

impl FinetuneConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("finetune.epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            errs.push("finetune.batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            errs.push(format!("finetune.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            errs.push(format!("finetune.lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            errs.push(format!("finetune.label_fraction must lie in (0, 1], got {}", self.label_fraction));
        }
        if let Err(e) = crate::network::parse_groups(&self.load_groups) {
            errs.push(format!("finetune.load_groups: {e}"));
        }
        errs
    }
}

/// Mean per-pixel loss of one fine-tuning epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn finetune_csv(rows: &[FinetuneLogRow]) -> String {
    let mut s = String::from("epoch,loss,lr\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.loss, r.lr);
    }
    s
}

/// A fresh network seeded with `seed`, with `groups` copied from `bundle`.
pub fn prepare_model(
    arch: &ArchConfig,
    bundle: Option<&CheckpointBundle>,
    groups: &[String],
    seed: u64,
) -> Result<(SegmentationNet, LoadReport)> {
    let global_dim = bundle
        .and_then(|b| b.group(PROJ_GLOBAL))
        .and_then(|g| g.tensors.first())
        .and_then(|t| t.shape.get(1).copied())
        .unwrap_or(2 * arch.encoder_dim());
    let mut model = SegmentationNet::new(arch, global_dim, seed)?;
    let report = match bundle {
        Some(b) => model.load_groups(b, groups)?,
        None if groups.is_empty() => LoadReport::default(),
        None => return Err(Error::InvalidArgument("groups requested but no checkpoint given".into())),
    };
    Ok((model, report))
}

/// Per-pixel cross-entropy training of the whole segmentation path. The
/// projection heads are not part of this graph and stay as they are.
pub fn finetune(model: &mut SegmentationNet, data: &[LabeledTile], cfg: &FinetuneConfig, seed: u64) -> Result<Vec<FinetuneLogRow>> {
    let errs = cfg.problems();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset("no labeled tiles for fine-tuning".into()));
    }
    let k = model.arch.num_classes;
    for (i, t) in data.iter().enumerate() {
        if let Some(&bad) = t.labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::ClassOutOfRange {
                id: bad as usize,
                num_classes: k,
            });
        }
        if t.labels.len() != t.image.plane_len() {
            return Err(Error::Shape(format!("tile {i}: label and image sizes differ")));
        }
    }
    let mut optimizer = Adam::new(&model.store);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = exponential_lr(cfg.learning_rate, cfg.lr_decay, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut role_rng(seed, "finetune.shuffle", epoch, 0));
        let (mut loss_sum, mut pixels) = (0.0, 0usize);
        for ids in order.chunks(cfg.batch_size) {
            let batch_pixels: usize = ids.iter().map(|&i| data[i].labels.len()).sum();
            let scale = 1.0 / batch_pixels as f32;
            let model_ref = &*model;
            let parts: Vec<(f64, Grads)> = ids
                .par_iter()
                .map(|&i| {
                    let tile = if cfg.augment {
                        let code = role_rng(seed, "finetune.augment", epoch, i).gen_range(0..8u8);
                        data[i].dihedral(code)
                    } else {
                        data[i].clone()
                    };
                    let (logits, pass) = model_ref.forward_segment(&tile.image)?;
                    let (loss, d) = pixel_cross_entropy(&logits, &tile.labels, scale)?;
                    let mut g = Grads::zeros_like(&model_ref.store);
                    model_ref.backward_segment(&pass, &d, &mut g);
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            let mut grads = Grads::zeros_like(&model.store);
            for (loss, g) in &parts {
                loss_sum += loss;
                grads.accumulate(g);
            }
            pixels += batch_pixels;
            if !loss_sum.is_finite() {
                return Err(Error::Divergence { epoch, step: log.len() });
            }
            optimizer.step(&mut model.store, &grads, lr as f32, |g| g != PROJ_GLOBAL && g != PROJ_LOCAL);
        }
        let row = FinetuneLogRow {
            epoch,
            loss: loss_sum / pixels as f64,
            lr,
        };
        log::info!("finetune epoch {epoch}: loss {:.5} lr {:.6}", row.loss, lr);
        log.push(row);
    }
    Ok(log)
}

/// Confusion matrix of the model's arg-max predictions over `data`. Tiles are
/// scored independently and the integer counts summed, so the result does not
/// depend on how the work is split.
pub fn evaluate(model: &SegmentationNet, data: &[LabeledTile]) -> Result<ConfusionMatrix> {
    let k = model.arch.num_classes;
    let parts: Vec<ConfusionMatrix> = data
        .par_iter()
        .map(|t| {
            let pred = argmax_classes(&model.segment(&t.image)?);
            let mut cm = ConfusionMatrix::new(k);
            cm.accumulate(&t.labels, &pred)?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut total = ConfusionMatrix::new(k);
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            encoder_channels: vec![8, 8, 8, 8],
            decoder_channels: vec![8, 8, 8],
            num_classes: 2,
            proj_dim: 8,
            ..ArchConfig::default()
        }
    }

    fn stripes(n: usize) -> Vec<LabeledTile> {
        (0..n)
            .map(|k| {
                let labels: Vec<u8> = (0..256).map(|p| u8::from((p % 16 + 4 * k) % 16 < 8)).collect();
                let mut img = FeatureMap::zeros(3, 16, 16);
                for (p, &l) in labels.iter().enumerate() {
                    for c in 0..3 {
                        img.data[c * 256 + p] = if l == 1 { 0.8 } else { 0.2 };
                    }
                }
                LabeledTile::new(img, labels).unwrap()
            })
            .collect()
    }

    #[test]
    fn dihedral_codes_are_a_group_action() {
        let t = &stripes(1)[0];
        assert_eq!(t.dihedral(0), *t);
        for code in 0..4 {
            assert_eq!(t.dihedral(code).dihedral(code), *t);
        }
        assert_ne!(t.dihedral(4), *t);
    }

    #[test]
    fn finetune_learns_a_trivial_mapping_and_is_deterministic() {
        let data = stripes(4);
        let cfg = FinetuneConfig {
            epochs: 30,
            batch_size: 2,
            learning_rate: 0.01,
            ..FinetuneConfig::default()
        };
        let run = || {
            let (mut m, _) = prepare_model(&tiny_arch(), None, &[], 3).unwrap();
            let log = finetune(&mut m, &data, &cfg, 3).unwrap();
            (m, log)
        };
        let (m, log) = run();
        assert!(log.last().unwrap().loss < log[0].loss);
        let cm = evaluate(&m, &data).unwrap();
        assert_eq!(cm.total(), 4 * 256);
        let oa = cm.trace() as f64 / cm.total() as f64;
        assert!(oa > 0.85, "{oa} {log:?}");
        let (m2, log2) = run();
        assert_eq!(log, log2);
        assert_eq!(m.store.params()[0].data, m2.store.params()[0].data);
    }

    #[test]
    fn rejects_bad_labels() {
        let mut data = stripes(1);
        data[0].labels[0] = 5;
        let (mut m, _) = prepare_model(&tiny_arch(), None, &[], 0).unwrap();
        let err = finetune(&mut m, &data, &FinetuneConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::ClassOutOfRange { id: 5, .. }));
    }
}
