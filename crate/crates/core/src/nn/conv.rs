use rand_distr::{Distribution, Normal};

use super::linalg::gemm;
use super::params::{init_rng, Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Square-kernel 2-D convolution with bias, lowered to a matrix product via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f32>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        seed: u64,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let wname = format!("{name}.weight");
        let mut rng = init_rng(seed, &wname);
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
        let w: Vec<f32> = (0..out_channels * fan_in).map(|_| normal.sample(&mut rng)).collect();
        let weight = store.add(wname, group, vec![out_channels, in_channels, kernel, kernel], w);
        let bias = store.add(format!("{name}.bias"), group, vec![out_channels], vec![0.0; out_channels]);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight,
            bias,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col(&self, x: &FeatureMap, oh: usize, ow: usize) -> Vec<f32> {
        let (c, h, w) = x.shape();
        let k = self.kernel;
        let p = oh * ow;
        let mut cols = vec![0.0f32; c * k * k * p];
        for ci in 0..c {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], in_shape: (usize, usize, usize), oh: usize, ow: usize) -> FeatureMap {
        let (c, h, w) = in_shape;
        let k = self.kernel;
        let p = oh * ow;
        let mut dx = FeatureMap::zeros(c, h, w);
        for ci in 0..c {
            let plane = dx.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, store: &ParamStore, x: &FeatureMap) -> Result<(FeatureMap, ConvCache)> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let (oh, ow) = self.output_hw(x.height, x.width);
        let p = oh * ow;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let cols = if self.is_pointwise() {
            x.data.clone()
        } else {
            self.im2col(x, oh, ow)
        };
        let bias = store.get(self.bias);
        let mut out = Vec::with_capacity(self.out_channels * p);
        for &b in bias {
            out.extend(std::iter::repeat(b).take(p));
        }
        gemm(self.out_channels, kdim, p, store.get(self.weight), false, &cols, false, 1.0, &mut out);
        let y = FeatureMap::from_vec(self.out_channels, oh, ow, out)?;
        Ok((
            y,
            ConvCache {
                cols,
                in_shape: x.shape(),
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, store: &ParamStore, cache: &ConvCache, dy: &FeatureMap, grads: &mut Grads) -> FeatureMap {
        let (oh, ow) = cache.out_hw;
        let p = oh * ow;
        let kdim = self.in_channels * self.kernel * self.kernel;
        {
            let db = grads.get_mut(self.bias);
            for (o, g) in db.iter_mut().enumerate() {
                *g += dy.plane(o).iter().sum::<f32>();
            }
        }
        gemm(self.out_channels, p, kdim, &dy.data, false, &cache.cols, true, 1.0, grads.get_mut(self.weight));
        let mut dcols = vec![0.0f32; kdim * p];
        gemm(kdim, self.out_channels, p, store.get(self.weight), true, &dy.data, false, 0.0, &mut dcols);
        if self.is_pointwise() {
            let (c, h, w) = cache.in_shape;
            FeatureMap { channels: c, height: h, width: w, data: dcols }
        } else {
            self.col2im(&dcols, cache.in_shape, oh, ow)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(conv: &Conv2d, store: &ParamStore, x: &FeatureMap) -> FeatureMap {
        let (oh, ow) = conv.output_hw(x.height, x.width);
        let w = store.get(conv.weight);
        let b = store.get(conv.bias);
        let k = conv.kernel;
        let mut y = FeatureMap::zeros(conv.out_channels, oh, ow);
        for o in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[o];
                    for c in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.height && (ix as usize) < x.width {
                                    s += w[((o * conv.in_channels + c) * k + ky) * k + kx]
                                        * x.at(c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.data[(o * oh + oy) * ow + ox] = s;
                }
            }
        }
        y
    }

    fn sample_input(c: usize, h: usize, w: usize) -> FeatureMap {
        let data = (0..c * h * w).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        FeatureMap::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn forward_matches_direct_convolution() {
        for &(k, s) in &[(3, 1), (3, 2), (1, 1)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", "g", 3, 4, k, s, 9);
            store.get_mut(conv.bias).copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
            let x = sample_input(3, 7, 6);
            let (y, _) = conv.forward(&store, &x).unwrap();
            let want = direct_conv(&conv, &store, &x);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", "g", 2, 3, 3, 2, 1);
        let x = sample_input(2, 6, 5);
        let (y, cache) = conv.forward(&store, &x).unwrap();
        // loss = sum(y * r) for a fixed r
        let r: Vec<f32> = (0..y.data.len()).map(|i| ((i % 7) as f32 - 3.0) * 0.1).collect();
        let dy = FeatureMap::from_vec(y.channels, y.height, y.width, r.clone()).unwrap();
        let mut grads = Grads::zeros_like(&store);
        let dx = conv.backward(&store, &cache, &dy, &mut grads);
        let loss = |store: &ParamStore, x: &FeatureMap| -> f64 {
            let (y, _) = conv.forward(store, x).unwrap();
            y.data.iter().zip(&r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let eps = 1e-2f32;
        for i in [0usize, 5, 17, 33] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data[i] as f64).abs() < 1e-3, "dx[{i}]: {fd} vs {}", dx.data[i]);
        }
        for i in [0usize, 10, 40] {
            let mut sp = store.clone();
            sp.get_mut(conv.weight)[i] += eps;
            let mut sm = store.clone();
            sm.get_mut(conv.weight)[i] -= eps;
            let fd = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * eps as f64);
            let g = grads.get(conv.weight)[i] as f64;
            assert!((fd - g).abs() < 1e-3, "dw[{i}]: {fd} vs {g}");
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", "g", 3, 4, 3, 1, 0);
        assert!(conv.forward(&store, &FeatureMap::zeros(4, 8, 8)).is_err());
    }
}
