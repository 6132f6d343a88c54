use super::descriptor::GlobalDescriptor;
use crate::contrastive::{nt_xent_loss_and_grad, ContrastiveConfig, EmbeddingBatch};
use crate::error::{Error, Result};
use crate::nn::{Grads, ParamStore, ProjectionHead};
use crate::tensor::FeatureMap;

/// A projection head together with the store holding its weights.
#[derive(Debug, Clone, Copy)]
pub struct HeadRef<'a> {
    pub head: &'a ProjectionHead,
    pub store: &'a ParamStore,
}

/// Rows `first` then rows `second` through the head (or unchanged without
/// one), NT-Xent over the result, and the gradient back at the head input.
/// Head parameter gradients accumulate into `grads`.
fn contrast_rows(
    first: &[f64],
    second: &[f64],
    dim: usize,
    head: Option<HeadRef>,
    cfg: &ContrastiveConfig,
    grads: Option<&mut Grads>,
) -> Result<(f64, Vec<f64>)> {
    let rows = (first.len() + second.len()) / dim;
    match head {
        None => {
            let batch = EmbeddingBatch::from_views(first, second, dim)?;
            nt_xent_loss_and_grad(&batch, cfg)
        }
        Some(h) => {
            let input: Vec<f32> = first.iter().chain(second).map(|&v| v as f32).collect();
            let (z, cache) = h.head.forward(h.store, &input, rows)?;
            let out = h.head.output_dim();
            let z: Vec<f64> = z.into_iter().map(f64::from).collect();
            let half = rows / 2 * out;
            let batch = EmbeddingBatch::from_views(&z[..half], &z[half..], out)?;
            let (loss, dz) = nt_xent_loss_and_grad(&batch, cfg)?;
            let dz: Vec<f32> = dz.into_iter().map(|v| v as f32).collect();
            let mut scratch;
            let grads = match grads {
                Some(g) => g,
                None => {
                    scratch = Grads::zeros_like(h.store);
                    &mut scratch
                }
            };
            let dx = h.head.backward(h.store, &cache, &dz, grads);
            Ok((loss, dx.into_iter().map(f64::from).collect()))
        }
    }
}

/// Global loss and its gradient with respect to each encoder map.
#[derive(Debug, Clone)]
pub struct GlobalLoss {
    pub loss: f64,
    pub d_maps: Vec<FeatureMap>,
}

/// NT-Xent over projected global descriptors of `2N` encoder maps, first
/// views in `maps[..N]` and second views in `maps[N..]`.
pub fn global_style_loss(
    maps: &[FeatureMap],
    descriptor: &dyn GlobalDescriptor,
    head: Option<HeadRef>,
    cfg: &ContrastiveConfig,
    grads: Option<&mut Grads>,
) -> Result<GlobalLoss> {
    if maps.len() % 2 != 0 || maps.len() < 4 {
        return Err(Error::TooFewPairs {
            needed: 2,
            got: maps.len() / 2,
        });
    }
    let channels = maps[0].channels;
    let dim = descriptor.dim(channels);
    let mut desc = Vec::with_capacity(maps.len() * dim);
    for m in maps {
        if m.channels != channels {
            return Err(Error::Shape(format!("encoder maps with {} and {channels} channels", m.channels)));
        }
        desc.extend(descriptor.describe(m)?);
    }
    let half = maps.len() / 2 * dim;
    let (loss, d_desc) = contrast_rows(&desc[..half], &desc[half..], dim, head, cfg, grads)?;
    let d_maps = maps
        .iter()
        .enumerate()
        .map(|(i, m)| descriptor.backward(m, &d_desc[i * dim..(i + 1) * dim]))
        .collect();
    Ok(GlobalLoss { loss, d_maps })
}

/// Local loss and its gradient with respect to each local feature.
#[derive(Debug, Clone)]
pub struct LocalLoss {
    pub loss: f64,
    pub d_first: Vec<Vec<f64>>,
    pub d_second: Vec<Vec<f64>>,
}

/// NT-Xent over `2 * N_L` projected local features: region `j` of the first
/// view pairs with region `j` of the second, and every other region in the
/// batch, same-image ones included, is a negative. Returns `None` when fewer
/// than two pairs exist.
pub fn local_matching_loss(
    first: &[Vec<f64>],
    second: &[Vec<f64>],
    head: Option<HeadRef>,
    cfg: &ContrastiveConfig,
    grads: Option<&mut Grads>,
) -> Result<Option<LocalLoss>> {
    if first.len() != second.len() {
        return Err(Error::Shape(format!("{} first-view and {} second-view regions", first.len(), second.len())));
    }
    if first.len() < 2 {
        return Ok(None);
    }
    let dim = first[0].len();
    let flat = |v: &[Vec<f64>]| -> Vec<f64> { v.iter().flatten().copied().collect() };
    let (loss, d) = contrast_rows(&flat(first), &flat(second), dim, head, cfg, grads)?;
    let mut rows = d.chunks(dim).map(|c| c.to_vec());
    let d_first = rows.by_ref().take(first.len()).collect();
    let d_second = rows.collect();
    Ok(Some(LocalLoss { loss, d_first, d_second }))
}

/// `lambda * l_g + (1 - lambda) * l_l`.
pub fn total_loss(l_g: f64, l_l: f64, lambda: f64) -> f64 {
    lambda * l_g + (1.0 - lambda) * l_l
}
