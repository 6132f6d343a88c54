use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::descriptor::GlobalDescriptor;
use super::losses::{global_style_loss, local_matching_loss, HeadRef};
use super::method::{Ablation, GLCNetConfig, MethodRegistry, PretextMethod};
use super::regions::{extract_local_features, local_features_backward, select_local_regions, LocalRegionSpec, Rect};
use crate::augment::{AugmentationPipeline, ViewPair};
use crate::error::{Error, Result};
use crate::network::{ArchConfig, CheckpointBundle, CheckpointMeta, DecoderPass, EncoderPass, SegmentationNet, SEG_HEAD};
use crate::nn::optim::cosine_lr;
use crate::nn::params::init_rng;
use crate::nn::{Adam, Grads};
use crate::tensor::FeatureMap;

/// Losses of one step, or means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub step: usize,
    pub l_g: f64,
    pub l_l: f64,
    pub l_total: f64,
    pub lr: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "epoch,step,L_G,L_L,L_total,lr";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.epoch, self.step, self.l_g, self.l_l, self.l_total, self.lr)
    }
}

pub fn loss_csv(rows: &[LossReport]) -> String {
    let mut s = String::from(LossReport::CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Deterministic RNG for one role (augmentation, regions, shuffling) and item.
pub fn role_rng(seed: u64, role: &str, epoch: usize, item: usize) -> rand_chacha::ChaCha8Rng {
    init_rng(seed, &format!("{role}/{epoch}/{item}"))
}

struct ViewState {
    enc: EncoderPass,
    dec: Option<DecoderPass>,
}

struct SampleState {
    a: ViewState,
    b: ViewState,
    regions: Vec<LocalRegionSpec>,
    feats_a: Vec<Vec<f64>>,
    feats_b: Vec<Vec<f64>>,
}

/// What one step computed, before the optimizer update.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub l_g: f64,
    pub l_l: f64,
    pub l_total: f64,
    /// False when the local module is on but fewer than two pairs were found.
    pub local_applied: bool,
    pub regions: Vec<Vec<LocalRegionSpec>>,
    pub grads: Grads,
}

/// Model, optimizer and objective for pretraining.
#[derive(Debug)]
pub struct Pretrainer {
    pub model: SegmentationNet,
    pub cfg: GLCNetConfig,
    pub seed: u64,
    method: Box<dyn PretextMethod>,
    descriptor: Box<dyn GlobalDescriptor>,
    first: AugmentationPipeline,
    second: AugmentationPipeline,
    optimizer: Adam,
}

impl Pretrainer {
    pub fn new(
        arch: &ArchConfig,
        cfg: GLCNetConfig,
        registry: &MethodRegistry,
        first: AugmentationPipeline,
        second: AugmentationPipeline,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate(registry)?;
        let method = cfg.method(registry)?;
        let descriptor = method.descriptor(cfg.style_mode);
        let model = SegmentationNet::new(arch, descriptor.dim(arch.encoder_dim()), seed)?;
        let optimizer = Adam::new(&model.store);
        Ok(Self {
            model,
            cfg,
            seed,
            method,
            descriptor,
            first,
            second,
            optimizer,
        })
    }

    pub fn ablation(&self) -> Ablation {
        self.method.ablation()
    }

    pub fn method_name(&self) -> &'static str {
        self.method.name()
    }

    pub fn descriptor(&self) -> &dyn GlobalDescriptor {
        self.descriptor.as_ref()
    }

    fn forward_sample(&self, image: &FeatureMap, epoch: usize, id: usize) -> Result<SampleState> {
        let mut rng_a = role_rng(self.seed, "augment.first", epoch, id);
        let mut rng_b = role_rng(self.seed, "augment.second", epoch, id);
        let pair = ViewPair::generate(image, id, &self.first, &self.second, &mut rng_a, &mut rng_b)?;
        let local = self.ablation().uses_local();
        let run = |x: &FeatureMap| -> Result<ViewState> {
            let enc = self.model.forward_encoder(x)?;
            let dec = if local { Some(self.model.forward_decoder(&enc)?) } else { None };
            Ok(ViewState { enc, dec })
        };
        let a = run(&pair.view_a.image)?;
        let b = run(&pair.view_b.image)?;
        let (mut regions, mut feats_a, mut feats_b) = (Vec::new(), Vec::new(), Vec::new());
        if let (Some(da), Some(db)) = (&a.dec, &b.dec) {
            let mut rng = role_rng(self.seed, "regions", epoch, id);
            regions = select_local_regions(&pair.view_a.index, &pair.view_b.index, &self.cfg.region_params(), &mut rng)?;
            let ra: Vec<Rect> = regions.iter().map(|r| r.rect_a).collect();
            let rb: Vec<Rect> = regions.iter().map(|r| r.rect_b).collect();
            feats_a = extract_local_features(&da.output, &ra)?;
            feats_b = extract_local_features(&db.output, &rb)?;
        }
        Ok(SampleState {
            a,
            b,
            regions,
            feats_a,
            feats_b,
        })
    }

    /// Forward and backward for one mini-batch; `ids` identify the samples
    /// for the per-sample RNG streams.
    pub fn compute_step(&self, images: &[&FeatureMap], ids: &[usize], epoch: usize) -> Result<StepOutput> {
        if images.len() < 2 {
            return Err(Error::TooFewPairs {
                needed: 2,
                got: images.len(),
            });
        }
        let states: Vec<SampleState> = images
            .par_iter()
            .zip(ids.par_iter())
            .map(|(img, &id)| self.forward_sample(img, epoch, id))
            .collect::<Result<_>>()?;
        let n = states.len();
        let ablation = self.ablation();
        let (w_g, w_l) = ablation.weights(self.cfg.lambda);
        let contrastive = self.cfg.contrastive();
        let store = &self.model.store;
        let mut grads = Grads::zeros_like(store);

        let mut l_g = 0.0;
        let mut d_global: Vec<FeatureMap> = Vec::new();
        if ablation.uses_global() {
            let maps: Vec<FeatureMap> = states
                .iter()
                .map(|s| s.a.enc.output.clone())
                .chain(states.iter().map(|s| s.b.enc.output.clone()))
                .collect();
            let mut head_grads = Grads::zeros_like(store);
            let head = HeadRef {
                head: &self.model.proj_global,
                store,
            };
            let out = global_style_loss(&maps, self.descriptor.as_ref(), Some(head), &contrastive, Some(&mut head_grads))?;
            head_grads.scale(w_g as f32);
            grads.accumulate(&head_grads);
            l_g = out.loss;
            d_global = out.d_maps;
            for d in &mut d_global {
                for v in &mut d.data {
                    *v *= w_g as f32;
                }
            }
        }

        let mut l_l = 0.0;
        let mut local_applied = false;
        let mut d_local: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = vec![(Vec::new(), Vec::new()); n];
        if ablation.uses_local() {
            let first: Vec<Vec<f64>> = states.iter().flat_map(|s| s.feats_a.iter().cloned()).collect();
            let second: Vec<Vec<f64>> = states.iter().flat_map(|s| s.feats_b.iter().cloned()).collect();
            let mut head_grads = Grads::zeros_like(store);
            let head = HeadRef {
                head: &self.model.proj_local,
                store,
            };
            match local_matching_loss(&first, &second, Some(head), &contrastive, Some(&mut head_grads))? {
                Some(out) => {
                    local_applied = true;
                    l_l = out.loss;
                    head_grads.scale(w_l as f32);
                    grads.accumulate(&head_grads);
                    let scale = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x * w_l).collect() };
                    let mut fa = out.d_first.into_iter().map(scale);
                    let mut fb = out.d_second.into_iter().map(scale);
                    for (s, d) in states.iter().zip(d_local.iter_mut()) {
                        d.0 = fa.by_ref().take(s.regions.len()).collect();
                        d.1 = fb.by_ref().take(s.regions.len()).collect();
                    }
                }
                None => log::warn!("epoch {epoch}: fewer than two matched region pairs; local loss skipped"),
            }
        }

        let per_sample: Vec<Grads> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = Grads::zeros_like(store);
                let s = &states[i];
                let views = [
                    (&s.a, d_global.get(i), &d_local[i].0, (|r: &LocalRegionSpec| r.rect_a) as fn(&LocalRegionSpec) -> Rect),
                    (&s.b, d_global.get(n + i), &d_local[i].1, |r: &LocalRegionSpec| r.rect_b),
                ];
                for (view, dg, dl, rect_of) in views {
                    let mut d_enc = dg.cloned().unwrap_or_else(|| {
                        let (c, h, w) = view.enc.output.shape();
                        FeatureMap::zeros(c, h, w)
                    });
                    let mut d_skip = None;
                    if let (Some(dec), false) = (&view.dec, dl.is_empty()) {
                        let (c, h, w) = dec.output.shape();
                        let mut d_dec = FeatureMap::zeros(c, h, w);
                        let rects: Vec<Rect> = s.regions.iter().map(rect_of).collect();
                        local_features_backward(&mut d_dec, &rects, dl);
                        let (de, ds) = self.model.backward_decoder(dec, &d_dec, &mut g);
                        d_enc.add_assign(&de);
                        d_skip = Some(ds);
                    }
                    self.model.backward_encoder(&view.enc, &d_enc, d_skip.as_ref(), &mut g);
                }
                g
            })
            .collect();
        for g in &per_sample {
            grads.accumulate(g);
        }

        Ok(StepOutput {
            l_g,
            l_l,
            l_total: w_g * l_g + w_l * l_l,
            local_applied,
            regions: states.into_iter().map(|s| s.regions).collect(),
            grads,
        })
    }

    /// One optimizer update. The segmentation head is outside the pretext
    /// graph and stays untouched.
    pub fn apply(&mut self, grads: &Grads, lr: f64) {
        self.optimizer
            .step(&mut self.model.store, grads, lr as f32, |group| group != SEG_HEAD);
    }
}

/// Result of a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub epochs: Vec<LossReport>,
    pub steps: Vec<LossReport>,
    /// Parameters at the epoch with the lowest mean loss.
    pub best: CheckpointBundle,
}

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    pub config_hash: String,
    pub meta_entries: std::collections::BTreeMap<String, String>,
    /// Rewritten (atomically) whenever an epoch improves on the best loss.
    pub checkpoint_path: Option<PathBuf>,
    /// Stop after this many steps in total (for smoke runs).
    pub max_steps: Option<usize>,
}

fn batches(n: usize, batch: usize) -> usize {
    if n < batch {
        usize::from(n >= 2)
    } else {
        n / batch
    }
}

/// Run the pretraining loop over `tiles` for `cfg.epochs` epochs.
pub fn run_pretraining(trainer: &mut Pretrainer, tiles: &[FeatureMap], opts: &PretrainOptions) -> Result<PretrainOutcome> {
    let batch = trainer.cfg.batch_size.min(tiles.len());
    let per_epoch = batches(tiles.len(), trainer.cfg.batch_size);
    if per_epoch == 0 {
        return Err(Error::EmptyDataset(format!("{} tiles cannot form a batch of two", tiles.len())));
    }
    let epochs = trainer.cfg.epochs;
    let mut total_steps = epochs * per_epoch;
    if let Some(m) = opts.max_steps {
        total_steps = total_steps.min(m);
    }
    let base_lr = trainer.cfg.learning_rate;
    let mut step_log = Vec::with_capacity(total_steps);
    let mut epoch_log = Vec::with_capacity(epochs);
    let mut best: Option<CheckpointBundle> = None;
    let mut global_step = 0;
    'outer: for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..tiles.len()).collect();
        order.shuffle(&mut role_rng(trainer.seed, "shuffle", epoch, 0));
        let mut sums = (0.0, 0.0, 0.0);
        let mut steps_run = 0;
        for b in 0..per_epoch {
            if global_step == total_steps {
                break;
            }
            let ids = &order[b * batch..(b + 1) * batch];
            let images: Vec<&FeatureMap> = ids.iter().map(|&i| &tiles[i]).collect();
            let lr = cosine_lr(base_lr, global_step, total_steps);
            let out = trainer.compute_step(&images, ids, epoch)?;
            if !out.l_total.is_finite() {
                return Err(Error::Divergence { epoch, step: global_step });
            }
            trainer.apply(&out.grads, lr);
            let report = LossReport {
                epoch,
                step: global_step,
                l_g: out.l_g,
                l_l: out.l_l,
                l_total: out.l_total,
                lr,
            };
            log::debug!("{}", report.csv_row());
            step_log.push(report);
            sums = (sums.0 + out.l_g, sums.1 + out.l_l, sums.2 + out.l_total);
            steps_run += 1;
            global_step += 1;
        }
        if steps_run == 0 {
            break 'outer;
        }
        let k = steps_run as f64;
        let report = LossReport {
            epoch,
            step: global_step,
            l_g: sums.0 / k,
            l_l: sums.1 / k,
            l_total: sums.2 / k,
            lr: cosine_lr(base_lr, global_step, total_steps),
        };
        log::info!(
            "epoch {epoch}: L_G {:.5} L_L {:.5} L {:.5}",
            report.l_g,
            report.l_l,
            report.l_total
        );
        epoch_log.push(report);
        if best.as_ref().map_or(true, |b| report.l_total < b.meta.loss) {
            let mut meta = CheckpointMeta {
                epoch: epoch as u64,
                loss: report.l_total,
                seed: trainer.seed,
                config_hash: opts.config_hash.clone(),
                entries: opts.meta_entries.clone(),
            };
            meta.entries.insert("method".into(), trainer.method_name().into());
            let bundle = CheckpointBundle::from_model(&trainer.model, meta);
            if let Some(path) = &opts.checkpoint_path {
                bundle.save(path)?;
            }
            best = Some(bundle);
        }
    }
    Ok(PretrainOutcome {
        epochs: epoch_log,
        steps: step_log,
        best: best.expect("at least one epoch ran"),
    })
}

/// Write `loss.csv` (per epoch) and `loss_steps.csv` (per step) into `dir`.
pub fn write_loss_logs(dir: &Path, outcome: &PretrainOutcome) -> Result<()> {
    for (name, rows) in [("loss.csv", &outcome.epochs), ("loss_steps.csv", &outcome.steps)] {
        let path = dir.join(name);
        std::fs::write(&path, loss_csv(rows)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
