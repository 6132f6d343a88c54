use crate::error::{Error, Result};

/// Per-pixel original-image coordinates, carried alongside an augmented view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexLabel {
    height: usize,
    width: usize,
    rows: Vec<i32>,
    cols: Vec<i32>,
    valid: Vec<bool>,
}

impl IndexLabel {
    /// The identity label of an untransformed `height x width` image.
    pub fn build(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "index label needs a non-empty frame, got {height}x{width}"
            )));
        }
        let n = height * width;
        let mut rows = Vec::with_capacity(n);
        let mut cols = Vec::with_capacity(n);
        for r in 0..height {
            for c in 0..width {
                rows.push(r as i32);
                cols.push(c as i32);
            }
        }
        Ok(Self {
            height,
            width,
            rows,
            cols,
            valid: vec![true; n],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Original `(row, col)` of view pixel `(r, c)`, or `None` where undefined.
    #[inline]
    pub fn coord(&self, r: usize, c: usize) -> Option<(i32, i32)> {
        let i = r * self.width + c;
        self.valid[i].then(|| (self.rows[i], self.cols[i]))
    }

    pub fn row_channel(&self) -> &[i32] {
        &self.rows
    }

    pub fn col_channel(&self) -> &[i32] {
        &self.cols
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// New label of size `out_h x out_w` whose pixel `(r, c)` is copied from
    /// `source(r, c)` of this label.
    pub fn gather(&self, out_h: usize, out_w: usize, source: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let n = out_h * out_w;
        let mut rows = Vec::with_capacity(n);
        let mut cols = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for r in 0..out_h {
            for c in 0..out_w {
                let (sr, sc) = source(r, c);
                let i = sr * self.width + sc;
                rows.push(self.rows[i]);
                cols.push(self.cols[i]);
                valid.push(self.valid[i]);
            }
        }
        Self {
            height: out_h,
            width: out_w,
            rows,
            cols,
            valid,
        }
    }

    /// View pixel whose stored original coordinate is nearest (Euclidean) to
    /// `target`; ties resolve to the first pixel in row-major order.
    pub fn nearest_to(&self, target: (i32, i32)) -> Option<((usize, usize), f64)> {
        let mut best: Option<(usize, i64)> = None;
        for i in 0..self.rows.len() {
            if !self.valid[i] {
                continue;
            }
            let dr = (self.rows[i] - target.0) as i64;
            let dc = (self.cols[i] - target.1) as i64;
            let d2 = dr * dr + dc * dc;
            if best.map_or(true, |(_, b)| d2 < b) {
                best = Some((i, d2));
                if d2 == 0 {
                    break;
                }
            }
        }
        best.map(|(i, d2)| ((i / self.width, i % self.width), (d2 as f64).sqrt()))
    }
}
