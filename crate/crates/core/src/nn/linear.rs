use rand_distr::{Distribution, Normal};

use super::linalg::gemm;
use super::params::{init_rng, Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Affine map applied row-wise to a batch stored as `rows x in_dim`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let wname = format!("{name}.weight");
        let mut rng = init_rng(seed, &wname);
        let normal = Normal::new(0.0f32, (1.0 / in_dim as f32).sqrt()).expect("finite std");
        let w: Vec<f32> = (0..out_dim * in_dim).map(|_| normal.sample(&mut rng)).collect();
        let weight = store.add(wname, group, vec![out_dim, in_dim], w);
        let bias = store.add(format!("{name}.bias"), group, vec![out_dim], vec![0.0; out_dim]);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f32], rows: usize) -> Result<Vec<f32>> {
        if x.len() != rows * self.in_dim {
            return Err(Error::Shape(format!(
                "linear layer expects width {}, got {} values for {rows} rows",
                self.in_dim,
                x.len()
            )));
        }
        let bias = store.get(self.bias);
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm(rows, self.in_dim, self.out_dim, x, false, store.get(self.weight), true, 1.0, &mut out);
        Ok(out)
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. `x`.
    pub fn backward(&self, store: &ParamStore, x: &[f32], dy: &[f32], rows: usize, grads: &mut Grads) -> Vec<f32> {
        {
            let db = grads.get_mut(self.bias);
            for r in 0..rows {
                for (g, d) in db.iter_mut().zip(&dy[r * self.out_dim..(r + 1) * self.out_dim]) {
                    *g += *d;
                }
            }
        }
        gemm(self.out_dim, rows, self.in_dim, dy, true, x, false, 1.0, grads.get_mut(self.weight));
        let mut dx = vec![0.0f32; rows * self.in_dim];
        gemm(rows, self.out_dim, self.in_dim, dy, false, store.get(self.weight), false, 0.0, &mut dx);
        dx
    }
}

/// Two affine layers with a rectifier between them.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub hidden: Linear,
    pub output: Linear,
}

/// Activations kept from [`ProjectionHead::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Vec<f32>,
    activated: Vec<f32>,
    rows: usize,
}

impl ProjectionHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), group, input_dim, hidden_dim, seed),
            output: Linear::new(store, &format!("{name}.fc2"), group, hidden_dim, output_dim, seed),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output.out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &[f32], rows: usize) -> Result<(Vec<f32>, HeadCache)> {
        let mut h = self.hidden.forward(store, x, rows)?;
        for v in &mut h {
            *v = v.max(0.0);
        }
        let out = self.output.forward(store, &h, rows)?;
        Ok((
            out,
            HeadCache {
                input: x.to_vec(),
                activated: h,
                rows,
            },
        ))
    }

    pub fn backward(&self, store: &ParamStore, cache: &HeadCache, dy: &[f32], grads: &mut Grads) -> Vec<f32> {
        let mut dh = self.output.backward(store, &cache.activated, dy, cache.rows, grads);
        for (g, &a) in dh.iter_mut().zip(&cache.activated) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        self.hidden.backward(store, &cache.input, &dh, cache.rows, grads)
    }
}
