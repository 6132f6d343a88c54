use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::ConvCache;
use crate::nn::norm::{relu_backward, relu_inplace, NormCache};
use crate::nn::{Bilinear, Conv2d, Grads, GroupNorm, ParamStore, ProjectionHead};
use crate::tensor::FeatureMap;

pub const ENCODER: &str = "encoder";
pub const DECODER_1: &str = "decoder.1";
pub const DECODER_2: &str = "decoder.2";
pub const DECODER_3: &str = "decoder.3";
pub const SEG_HEAD: &str = "seg_head";
pub const PROJ_GLOBAL: &str = "proj_global";
pub const PROJ_LOCAL: &str = "proj_local";

/// Every parameter group, in checkpoint order.
pub const ALL_GROUPS: [&str; 7] = [ENCODER, DECODER_1, DECODER_2, DECODER_3, SEG_HEAD, PROJ_GLOBAL, PROJ_LOCAL];

/// Shape of the encoder-decoder network.
///
/// The encoder is four conv blocks (3x3 conv, group norm, ReLU) whose strides
/// multiply to the output stride. The decoder follows the DeepLabV3+ layout:
/// stage 1 reduces the encoder output with a 1x1 conv, stage 2 fuses it with
/// the low-level features of encoder block `skip_block`, stage 3 refines, and
/// the result is bilinearly upsampled to the input resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub skip_block: usize,
    pub decoder_channels: Vec<usize>,
    pub norm_groups: usize,
    pub num_classes: usize,
    pub proj_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            encoder_channels: vec![16, 32, 64, 64],
            encoder_strides: vec![2, 2, 2, 1],
            skip_block: 1,
            decoder_channels: vec![32, 16, 16],
            norm_groups: 4,
            num_classes: 4,
            proj_dim: 128,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.in_channels == 3 || self.in_channels == 4) {
            errs.push(format!("model.in_channels must be 3 or 4, got {}", self.in_channels));
        }
        if self.encoder_channels.len() != 4 || self.encoder_strides.len() != 4 {
            errs.push("model.encoder_channels and model.encoder_strides need exactly 4 entries".into());
        }
        if self.encoder_strides.iter().any(|&s| s != 1 && s != 2) {
            errs.push("model.encoder_strides entries must be 1 or 2".into());
        }
        if self.decoder_channels.len() != 3 {
            errs.push("model.decoder_channels needs exactly 3 entries".into());
        }
        if self.skip_block >= self.encoder_channels.len().saturating_sub(1) {
            errs.push("model.skip_block must name one of the first three encoder blocks".into());
        }
        if self.norm_groups == 0
            || self
                .encoder_channels
                .iter()
                .chain(&self.decoder_channels)
                .any(|&c| c == 0 || c % self.norm_groups != 0)
        {
            errs.push(format!("every channel count must be a positive multiple of model.norm_groups ({})", self.norm_groups));
        }
        if self.num_classes < 2 {
            errs.push("model.num_classes must be >= 2".into());
        }
        if self.proj_dim == 0 {
            errs.push("model.proj_dim must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn output_stride(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    pub fn encoder_dim(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&0)
    }

    pub fn decoder_dim(&self) -> usize {
        *self.decoder_channels.last().unwrap_or(&0)
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    norm: GroupNorm,
}

#[derive(Debug, Clone)]
struct BlockCache {
    conv: ConvCache,
    norm: NormCache,
    output: FeatureMap,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(store: &mut ParamStore, name: &str, group: &str, cin: usize, cout: usize, k: usize, stride: usize, groups: usize, seed: u64) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), group, cin, cout, k, stride, seed),
            norm: GroupNorm::new(store, &format!("{name}.norm"), group, cout, groups),
        }
    }

    fn forward(&self, store: &ParamStore, x: &FeatureMap) -> Result<(FeatureMap, BlockCache)> {
        let (y, conv) = self.conv.forward(store, x)?;
        let (mut y, norm) = self.norm.forward(store, &y);
        relu_inplace(&mut y);
        Ok((
            y.clone(),
            BlockCache {
                conv,
                norm,
                output: y,
            },
        ))
    }

    fn backward(&self, store: &ParamStore, cache: &BlockCache, dy: &FeatureMap, grads: &mut Grads) -> FeatureMap {
        let mut d = dy.clone();
        relu_backward(&cache.output, &mut d);
        let d = self.norm.backward(store, &cache.norm, &d, grads);
        self.conv.backward(store, &cache.conv, &d, grads)
    }
}

/// Forward state of the encoder for one sample.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    pub output: FeatureMap,
    input_hw: (usize, usize),
    skip: FeatureMap,
    caches: Vec<BlockCache>,
}

/// Forward state of the decoder for one sample.
#[derive(Debug, Clone)]
pub struct DecoderPass {
    pub output: FeatureMap,
    up1: Bilinear,
    c1: BlockCache,
    c2: BlockCache,
    c3: BlockCache,
    up_final: Bilinear,
    d1_channels: usize,
}

#[derive(Debug, Clone)]
pub struct SegmentationNet {
    pub arch: ArchConfig,
    pub store: ParamStore,
    encoder: Vec<ConvBlock>,
    dec1: ConvBlock,
    dec2: ConvBlock,
    dec3: ConvBlock,
    seg_head: Conv2d,
    pub proj_global: ProjectionHead,
    pub proj_local: ProjectionHead,
}

impl SegmentationNet {
    /// Fresh network. `global_dim` is the width of the global descriptor fed to
    /// the global projection head (2*C_e for style vectors, C_e for pooling).
    pub fn new(arch: &ArchConfig, global_dim: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let g = arch.norm_groups;
        let mut encoder = Vec::with_capacity(4);
        let mut cin = arch.in_channels;
        for (i, (&cout, &stride)) in arch.encoder_channels.iter().zip(&arch.encoder_strides).enumerate() {
            encoder.push(ConvBlock::new(&mut store, &format!("encoder.block{}", i + 1), ENCODER, cin, cout, 3, stride, g, seed));
            cin = cout;
        }
        let [d1, d2, d3] = [arch.decoder_channels[0], arch.decoder_channels[1], arch.decoder_channels[2]];
        let skip_ch = arch.encoder_channels[arch.skip_block];
        let dec1 = ConvBlock::new(&mut store, "decoder.1", DECODER_1, arch.encoder_dim(), d1, 1, 1, g, seed);
        let dec2 = ConvBlock::new(&mut store, "decoder.2", DECODER_2, d1 + skip_ch, d2, 3, 1, g, seed);
        let dec3 = ConvBlock::new(&mut store, "decoder.3", DECODER_3, d2, d3, 3, 1, g, seed);
        let seg_head = Conv2d::new(&mut store, "seg_head", SEG_HEAD, d3, arch.num_classes, 1, 1, seed);
        let proj_global = ProjectionHead::new(&mut store, "proj_global", PROJ_GLOBAL, global_dim, global_dim, arch.proj_dim, seed);
        let proj_local = ProjectionHead::new(&mut store, "proj_local", PROJ_LOCAL, d3, d3, arch.proj_dim, seed);
        Ok(Self {
            arch: arch.clone(),
            store,
            encoder,
            dec1,
            dec2,
            dec3,
            seg_head,
            proj_global,
            proj_local,
        })
    }

    pub fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if x.channels != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, image has {}",
                self.arch.in_channels, x.channels
            )));
        }
        let s = self.arch.output_stride();
        if x.height % s != 0 || x.width % s != 0 || x.height == 0 || x.width == 0 {
            return Err(Error::Shape(format!(
                "input {}x{} is not divisible by the output stride {s}",
                x.height, x.width
            )));
        }
        Ok(())
    }

    pub fn forward_encoder(&self, x: &FeatureMap) -> Result<EncoderPass> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        let mut skip = None;
        for (i, block) in self.encoder.iter().enumerate() {
            let (y, cache) = block.forward(&self.store, &h)?;
            if i == self.arch.skip_block {
                skip = Some(y.clone());
            }
            caches.push(cache);
            h = y;
        }
        Ok(EncoderPass {
            output: h,
            input_hw: (x.height, x.width),
            skip: skip.expect("validated skip block"),
            caches,
        })
    }

    /// Backpropagate into the encoder parameters. `d_skip` is the gradient
    /// arriving at the low-level skip features from the decoder, if any.
    pub fn backward_encoder(&self, pass: &EncoderPass, d_out: &FeatureMap, d_skip: Option<&FeatureMap>, grads: &mut Grads) {
        let mut d = d_out.clone();
        for i in (0..self.encoder.len()).rev() {
            if i == self.arch.skip_block {
                if let Some(ds) = d_skip {
                    d.add_assign(ds);
                }
            }
            let dx = self.encoder[i].backward(&self.store, &pass.caches[i], &d, grads);
            d = dx;
        }
    }

    pub fn forward_decoder(&self, enc: &EncoderPass) -> Result<DecoderPass> {
        if enc.output.channels != self.arch.encoder_dim() {
            return Err(Error::Shape(format!(
                "decoder expects {} encoder channels, got {}",
                self.arch.encoder_dim(),
                enc.output.channels
            )));
        }
        let (y1, c1) = self.dec1.forward(&self.store, &enc.output)?;
        let up1 = Bilinear::new((y1.height, y1.width), (enc.skip.height, enc.skip.width));
        let fused = FeatureMap::concat_channels(&up1.forward(&y1), &enc.skip)?;
        let (y2, c2) = self.dec2.forward(&self.store, &fused)?;
        let (y3, c3) = self.dec3.forward(&self.store, &y2)?;
        let up_final = Bilinear::new((y3.height, y3.width), enc.input_hw);
        let output = up_final.forward(&y3);
        Ok(DecoderPass {
            output,
            up1,
            c1,
            c2,
            c3,
            up_final,
            d1_channels: y1.channels,
        })
    }

    /// Returns the gradients reaching the encoder output and the skip features.
    pub fn backward_decoder(&self, pass: &DecoderPass, d_out: &FeatureMap, grads: &mut Grads) -> (FeatureMap, FeatureMap) {
        let d3 = pass.up_final.backward(d_out);
        let d2 = self.dec3.backward(&self.store, &pass.c3, &d3, grads);
        let dfused = self.dec2.backward(&self.store, &pass.c2, &d2, grads);
        let (dup, dskip) = dfused.split_channels(pass.d1_channels);
        let dy1 = pass.up1.backward(&dup);
        let denc = self.dec1.backward(&self.store, &pass.c1, &dy1, grads);
        (denc, dskip)
    }

    /// Per-pixel class logits at input resolution, with the state needed for backward.
    pub fn forward_segment(&self, x: &FeatureMap) -> Result<(FeatureMap, SegmentPass)> {
        let enc = self.forward_encoder(x)?;
        let dec = self.forward_decoder(&enc)?;
        let (logits, head) = self.seg_head.forward(&self.store, &dec.output)?;
        Ok((logits, SegmentPass { enc, dec, head }))
    }

    pub fn backward_segment(&self, pass: &SegmentPass, d_logits: &FeatureMap, grads: &mut Grads) {
        let d_dec = self.seg_head.backward(&self.store, &pass.head, d_logits, grads);
        let (d_enc, d_skip) = self.backward_decoder(&pass.dec, &d_dec, grads);
        self.backward_encoder(&pass.enc, &d_enc, Some(&d_skip), grads);
    }

    pub fn segment(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_segment(x)?.0)
    }

    /// Encoder features for a batch; samples are processed independently.
    pub fn encode_batch(&self, batch: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        batch
            .par_iter()
            .map(|x| self.forward_encoder(x).map(|p| p.output))
            .collect()
    }

    /// Decoder features (input resolution) for a batch.
    pub fn decode_batch(&self, batch: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        batch
            .par_iter()
            .map(|x| {
                let enc = self.forward_encoder(x)?;
                Ok(self.forward_decoder(&enc)?.output)
            })
            .collect()
    }

    pub fn group_names(&self) -> Vec<String> {
        self.store.group_names()
    }
}

#[derive(Debug, Clone)]
pub struct SegmentPass {
    enc: EncoderPass,
    dec: DecoderPass,
    head: ConvCache,
}
