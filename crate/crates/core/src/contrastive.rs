//! Temperature-scaled contrastive loss over cosine similarities (NT-Xent
//! family), shared by the global and local objectives.
//!
//! For an anchor `i` with positive partner `p(i)`:
//!
//! ```text
//! l_i = -log( exp(sim(i, p(i)) / t) / sum_{k in D(i)} exp(sim(i, k) / t) )
//! ```
//!
//! where `D(i)` holds every embedding other than `i` and `p(i)`; with
//! `include_positive_in_denominator` the positive is added to `D(i)`, giving
//! the usual SimCLR form. The batch loss is the mean of `l_i` over all anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub include_positive_in_denominator: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            include_positive_in_denominator: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `M` embeddings of width `dim`, each with exactly one positive partner.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: Vec<f64>,
    dim: usize,
    pair_index: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(vectors: Vec<f64>, dim: usize, pair_index: Vec<usize>) -> Result<Self> {
        if dim == 0 || vectors.len() != dim * pair_index.len() {
            return Err(Error::Shape(format!(
                "{} values do not form {} embeddings of width {dim}",
                vectors.len(),
                pair_index.len()
            )));
        }
        for (i, &j) in pair_index.iter().enumerate() {
            if j >= pair_index.len() || j == i || pair_index[j] != i {
                return Err(Error::InvalidArgument(format!(
                    "pair_index is not a fixed-point-free involution at {i}"
                )));
            }
        }
        Ok(Self {
            vectors,
            dim,
            pair_index,
        })
    }

    /// Two views of `n` samples: rows `0..n` from the first view, `n..2n` from
    /// the second, with row `i` paired to row `i + n`.
    pub fn from_views(first: &[f64], second: &[f64], dim: usize) -> Result<Self> {
        if first.len() != second.len() || dim == 0 || first.len() % dim != 0 {
            return Err(Error::Shape("view embedding blocks differ in shape".into()));
        }
        let n = first.len() / dim;
        let mut vectors = Vec::with_capacity(2 * first.len());
        vectors.extend_from_slice(first);
        vectors.extend_from_slice(second);
        let pair_index = (0..2 * n).map(|i| if i < n { i + n } else { i - n }).collect();
        Self::new(vectors, dim, pair_index)
    }

    pub fn len(&self) -> usize {
        self.pair_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_index.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn pair_index(&self) -> &[usize] {
        &self.pair_index
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vector lengths {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(Error::ZeroNorm(0));
    }
    if nv == 0.0 {
        return Err(Error::ZeroNorm(1));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn nt_xent_loss(batch: &EmbeddingBatch, cfg: &ContrastiveConfig) -> Result<f64> {
    Ok(nt_xent_loss_and_grad(batch, cfg)?.0)
}

/// Loss and its gradient with respect to every embedding (row-major, same
/// layout as the batch).
pub fn nt_xent_loss_and_grad(batch: &EmbeddingBatch, cfg: &ContrastiveConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let m = batch.len();
    if m < 4 {
        return Err(Error::TooFewPairs { needed: 2, got: m / 2 });
    }
    let d = batch.dim;
    let tau = cfg.temperature;

    let mut norms = Vec::with_capacity(m);
    let mut unit = vec![0.0f64; m * d];
    for i in 0..m {
        let row = batch.row(i);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroNorm(i));
        }
        norms.push(n);
        for (u, x) in unit[i * d..(i + 1) * d].iter_mut().zip(row) {
            *u = x / n;
        }
    }

    let mut sim = vec![0.0f64; m * m];
    for i in 0..m {
        for k in i..m {
            let s: f64 = unit[i * d..(i + 1) * d]
                .iter()
                .zip(&unit[k * d..(k + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            sim[i * m + k] = s;
            sim[k * m + i] = s;
        }
    }

    // dL/dsim[i][k] as used by anchor i.
    let mut dsim = vec![0.0f64; m * m];
    let mut total = 0.0;
    let scale = 1.0 / m as f64;
    let mut weights = vec![0.0f64; m];
    for i in 0..m {
        let p = batch.pair_index[i];
        let in_denominator = |k: usize| k != i && (k != p || cfg.include_positive_in_denominator);
        let row = &sim[i * m..(i + 1) * m];
        let max = (0..m)
            .filter(|&k| in_denominator(k))
            .map(|k| row[k] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for k in 0..m {
            weights[k] = if in_denominator(k) {
                (row[k] / tau - max).exp()
            } else {
                0.0
            };
            denom += weights[k];
        }
        total += -(row[p] / tau) + max + denom.ln();
        let dr = &mut dsim[i * m..(i + 1) * m];
        for k in 0..m {
            dr[k] += scale * weights[k] / denom / tau;
        }
        dr[p] -= scale / tau;
    }
    let loss = total * scale;

    // Back through the dot products, then through the normalization.
    let mut grad = vec![0.0f64; m * d];
    for i in 0..m {
        let mut gu = vec![0.0f64; d];
        for k in 0..m {
            let w = dsim[i * m + k] + dsim[k * m + i];
            if w == 0.0 {
                continue;
            }
            for (g, u) in gu.iter_mut().zip(&unit[k * d..(k + 1) * d]) {
                *g += w * u;
            }
        }
        let ui = &unit[i * d..(i + 1) * d];
        let proj: f64 = gu.iter().zip(ui).map(|(g, u)| g * u).sum();
        for ((out, g), u) in grad[i * d..(i + 1) * d].iter_mut().zip(&gu).zip(ui) {
            *out = (g - u * proj) / norms[i];
        }
    }
    Ok((loss, grad))
}
