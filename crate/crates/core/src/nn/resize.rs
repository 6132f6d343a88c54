//! Separable bilinear resampling (half-pixel centers, edge clamped) with its
//! exact adjoint for backpropagation.

use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w_hi: Vec<f32>,
}

impl AxisTaps {
    /// Taps sampling the source interval `[offset, offset + extent)` of an axis
    /// of length `src_len` at `dst_len` evenly spaced points.
    fn new(src_len: usize, offset: f64, extent: f64, dst_len: usize) -> Self {
        let scale = extent / dst_len as f64;
        let mut lo = Vec::with_capacity(dst_len);
        let mut hi = Vec::with_capacity(dst_len);
        let mut w_hi = Vec::with_capacity(dst_len);
        let max = (src_len - 1) as f64;
        for i in 0..dst_len {
            let pos = (offset + (i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let l = pos.floor() as usize;
            let h = (l + 1).min(src_len - 1);
            lo.push(l);
            hi.push(h);
            w_hi.push((pos - l as f64) as f32);
        }
        Self { lo, hi, w_hi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bilinear {
    src_hw: (usize, usize),
    dst_hw: (usize, usize),
    rows: AxisTaps,
    cols: AxisTaps,
}

impl Bilinear {
    /// Whole-image resize.
    pub fn new(src_hw: (usize, usize), dst_hw: (usize, usize)) -> Self {
        Self::window(src_hw, (0.0, 0.0, src_hw.0 as f64, src_hw.1 as f64), dst_hw)
    }

    /// Resample the window `(top, left, height, width)` of the source onto `dst_hw`.
    pub fn window(src_hw: (usize, usize), window: (f64, f64, f64, f64), dst_hw: (usize, usize)) -> Self {
        let (top, left, h, w) = window;
        Self {
            src_hw,
            dst_hw,
            rows: AxisTaps::new(src_hw.0, top, h, dst_hw.0),
            cols: AxisTaps::new(src_hw.1, left, w, dst_hw.1),
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        assert_eq!((x.height, x.width), self.src_hw);
        let (sh, sw) = self.src_hw;
        let (dh, dw) = self.dst_hw;
        let mut out = FeatureMap::zeros(x.channels, dh, dw);
        let mut tmp = vec![0.0f32; sh * dw];
        for c in 0..x.channels {
            let src = x.plane(c);
            for r in 0..sh {
                let row = &src[r * sw..(r + 1) * sw];
                let t = &mut tmp[r * dw..(r + 1) * dw];
                for j in 0..dw {
                    let a = self.cols.w_hi[j];
                    t[j] = row[self.cols.lo[j]] * (1.0 - a) + row[self.cols.hi[j]] * a;
                }
            }
            let dst = out.plane_mut(c);
            for i in 0..dh {
                let a = self.rows.w_hi[i];
                let lo = &tmp[self.rows.lo[i] * dw..(self.rows.lo[i] + 1) * dw];
                let hi = &tmp[self.rows.hi[i] * dw..(self.rows.hi[i] + 1) * dw];
                for j in 0..dw {
                    dst[i * dw + j] = lo[j] * (1.0 - a) + hi[j] * a;
                }
            }
        }
        out
    }

    pub fn backward(&self, dy: &FeatureMap) -> FeatureMap {
        let (sh, sw) = self.src_hw;
        let (dh, dw) = self.dst_hw;
        let mut dx = FeatureMap::zeros(dy.channels, sh, sw);
        let mut tmp = vec![0.0f32; sh * dw];
        for c in 0..dy.channels {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            let g = dy.plane(c);
            for i in 0..dh {
                let a = self.rows.w_hi[i];
                let (lo, hi) = (self.rows.lo[i], self.rows.hi[i]);
                for j in 0..dw {
                    let v = g[i * dw + j];
                    tmp[lo * dw + j] += v * (1.0 - a);
                    tmp[hi * dw + j] += v * a;
                }
            }
            let dst = dx.plane_mut(c);
            for r in 0..sh {
                for j in 0..dw {
                    let v = tmp[r * dw + j];
                    let a = self.cols.w_hi[j];
                    dst[r * sw + self.cols.lo[j]] += v * (1.0 - a);
                    dst[r * sw + self.cols.hi[j]] += v * a;
                }
            }
        }
        dx
    }
}
