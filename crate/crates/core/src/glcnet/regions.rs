use rand::Rng;

use crate::augment::IndexLabel;
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Square window in view pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl Rect {
    pub fn centered(center: (usize, usize), size: usize) -> Option<Self> {
        let half = size / 2;
        Some(Self {
            top: center.0.checked_sub(half)?,
            left: center.1.checked_sub(half)?,
            size,
        })
    }

    pub fn center(&self) -> (usize, usize) {
        (self.top + self.size / 2, self.left + self.size / 2)
    }

    pub fn contains(&self, p: (usize, usize)) -> bool {
        p.0 >= self.top && p.0 < self.top + self.size && p.1 >= self.left && p.1 < self.left + self.size
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.top + self.size <= height && self.left + self.size <= width
    }
}

/// A matched pair of regions, one per view.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRegionSpec {
    /// Original-image coordinate at the view-a center.
    pub center: (i32, i32),
    pub center_a: (usize, usize),
    /// View-b pixel whose stored coordinate is nearest to `center`.
    pub center_b: (usize, usize),
    /// Distance between `center` and the coordinate stored at `center_b`.
    pub match_distance: f64,
    pub rect_a: Rect,
    pub rect_b: Rect,
    /// How far `rect_b` was shifted inward to fit the view (rows, cols).
    pub drift: (isize, isize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionParams {
    /// Region side `s_p` in view pixels.
    pub size: usize,
    /// Regions requested per sample `n_p`.
    pub count: usize,
    /// Matches at or beyond this distance (original pixels) are discarded.
    pub match_tolerance: f64,
    /// Candidate draws allowed per requested region.
    pub retries_per_region: usize,
}

impl RegionParams {
    pub fn new(size: usize, count: usize) -> Self {
        Self {
            size,
            count,
            match_tolerance: 1.0,
            retries_per_region: 10,
        }
    }
}

fn clamp_into(start: isize, size: usize, len: usize) -> isize {
    start.clamp(0, len as isize - size as isize)
}

/// Pick up to `params.count` region pairs with corresponding centers.
///
/// View-a centers are drawn uniformly among positions whose window fits and
/// that lie outside every earlier view-a window. The view-b center is the
/// nearest-index pixel; its window is shifted inward if needed. Fewer regions
/// than requested come back when the retry budget runs out.
pub fn select_local_regions(
    index_a: &IndexLabel,
    index_b: &IndexLabel,
    params: &RegionParams,
    rng: &mut impl Rng,
) -> Result<Vec<LocalRegionSpec>> {
    let s = params.size;
    let (ha, wa) = (index_a.height(), index_a.width());
    let (hb, wb) = (index_b.height(), index_b.width());
    if s == 0 || s > ha.min(wa) || s > hb.min(wb) {
        return Err(Error::InvalidArgument(format!(
            "region size {s} does not fit views {ha}x{wa} and {hb}x{wb}"
        )));
    }
    let half = s / 2;
    let max_shift = (s / 2) as isize;
    let mut out: Vec<LocalRegionSpec> = Vec::with_capacity(params.count);
    for _ in 0..params.count * params.retries_per_region {
        if out.len() == params.count {
            break;
        }
        let center_a = (rng.gen_range(half..=ha - s + half), rng.gen_range(half..=wa - s + half));
        if out.iter().any(|r| r.rect_a.contains(center_a)) {
            continue;
        }
        let Some(center) = index_a.coord(center_a.0, center_a.1) else {
            continue;
        };
        let Some((center_b, dist)) = index_b.nearest_to(center) else {
            continue;
        };
        if dist >= params.match_tolerance {
            continue;
        }
        let want = (center_b.0 as isize - half as isize, center_b.1 as isize - half as isize);
        let top = clamp_into(want.0, s, hb);
        let left = clamp_into(want.1, s, wb);
        let drift = (top - want.0, left - want.1);
        if drift.0.abs() > max_shift || drift.1.abs() > max_shift {
            continue;
        }
        out.push(LocalRegionSpec {
            center,
            center_a,
            center_b,
            match_distance: dist,
            rect_a: Rect::centered(center_a, s).expect("sampled inside"),
            rect_b: Rect {
                top: top as usize,
                left: left as usize,
                size: s,
            },
            drift,
        });
    }
    Ok(out)
}

/// Per-channel mean of `map` over each rect.
pub fn extract_local_features(map: &FeatureMap, rects: &[Rect]) -> Result<Vec<Vec<f64>>> {
    rects
        .iter()
        .map(|r| {
            if r.size == 0 || !r.fits(map.height, map.width) {
                return Err(Error::Shape(format!(
                    "rect {r:?} outside {}x{} map",
                    map.height, map.width
                )));
            }
            Ok((0..map.channels)
                .map(|ch| {
                    let plane = map.plane(ch);
                    let mut sum = 0.0f64;
                    for row in r.top..r.top + r.size {
                        sum += plane[row * map.width + r.left..row * map.width + r.left + r.size]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                    sum / (r.size * r.size) as f64
                })
                .collect())
        })
        .collect()
}

/// Adjoint of [`extract_local_features`]: spread each feature gradient evenly
/// over its rect, accumulating into `d_map`.
pub fn local_features_backward(d_map: &mut FeatureMap, rects: &[Rect], d_features: &[Vec<f64>]) {
    let width = d_map.width;
    for (r, df) in rects.iter().zip(d_features) {
        let inv = 1.0 / (r.size * r.size) as f64;
        for (ch, &g) in df.iter().enumerate() {
            let g = (g * inv) as f32;
            let plane = d_map.plane_mut(ch);
            for row in r.top..r.top + r.size {
                for v in &mut plane[row * width + r.left..row * width + r.left + r.size] {
                    *v += g;
                }
            }
        }
    }
}
