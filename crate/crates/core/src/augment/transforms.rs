//! Named augmentation transforms and the registry that builds them from
//! configuration entries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::index_label::IndexLabel;
use crate::error::{Error, Result};
use crate::nn::Bilinear;
use crate::tensor::FeatureMap;

pub type AugRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Spatial,
    Photometric,
}

/// An image together with the provenance of each of its pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AugView {
    pub image: FeatureMap,
    pub index: IndexLabel,
}

impl AugView {
    pub fn new(image: FeatureMap, index: IndexLabel) -> Result<Self> {
        if image.height != index.height() || image.width != index.width() {
            return Err(Error::Shape(format!(
                "image {}x{} and index label {}x{} are not aligned",
                image.height,
                image.width,
                index.height(),
                index.width()
            )));
        }
        Ok(Self { image, index })
    }

    /// Move pixels of image and index label together: output `(r, c)` takes
    /// the source pixel `source(r, c)`.
    fn gather(&self, out_h: usize, out_w: usize, source: impl Fn(usize, usize) -> (usize, usize) + Copy) -> Self {
        let src = &self.image;
        let mut image = FeatureMap::zeros(src.channels, out_h, out_w);
        for ch in 0..src.channels {
            let plane = src.plane(ch);
            let dst = image.plane_mut(ch);
            for r in 0..out_h {
                for c in 0..out_w {
                    let (sr, sc) = source(r, c);
                    dst[r * out_w + c] = plane[sr * src.width + sc];
                }
            }
        }
        Self {
            image,
            index: self.index.gather(out_h, out_w, source),
        }
    }
}

pub trait Transform: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn kind(&self) -> TransformKind;
    fn apply(&self, view: AugView, rng: &mut AugRng) -> Result<AugView>;
}

/// A numeric parameter: a fixed value or a `[low, high]` sampling range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Range([f64; 2]),
}

/// One configured transform: its registry name plus numeric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub name: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, ParamValue>,
}

impl TransformSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

struct Params<'a> {
    spec: &'a TransformSpec,
    seen: BTreeSet<&'static str>,
}

impl<'a> Params<'a> {
    fn new(spec: &'a TransformSpec) -> Self {
        Self {
            spec,
            seen: BTreeSet::new(),
        }
    }

    fn scalar(&mut self, key: &'static str, default: f64) -> Result<f64> {
        self.seen.insert(key);
        match self.spec.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Scalar(v)) => Ok(*v),
            Some(ParamValue::Range(_)) => Err(Error::Config(vec![format!(
                "{}.{key}: expected a number, got a range",
                self.spec.name
            )])),
        }
    }

    fn range(&mut self, key: &'static str, default: [f64; 2]) -> Result<[f64; 2]> {
        self.seen.insert(key);
        let r = match self.spec.params.get(key) {
            None => default,
            Some(ParamValue::Range(r)) => *r,
            Some(ParamValue::Scalar(v)) => [*v, *v],
        };
        if r[0] > r[1] {
            return Err(Error::Config(vec![format!(
                "{}.{key}: range [{}, {}] is reversed",
                self.spec.name, r[0], r[1]
            )]));
        }
        Ok(r)
    }

    fn probability(&mut self, default: f64) -> Result<f64> {
        let p = self.scalar("p", default)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(vec![format!("{}.p must lie in [0, 1], got {p}", self.spec.name)]));
        }
        Ok(p)
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<String> = self
            .spec
            .params
            .keys()
            .filter(|k| !self.seen.contains(k.as_str()))
            .map(|k| format!("{}: unknown parameter `{k}`", self.spec.name))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(unknown))
        }
    }
}

fn sample(rng: &mut AugRng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

type Factory = fn(&TransformSpec) -> Result<Box<dyn Transform>>;

/// Maps transform names to constructors.
#[derive(Clone)]
pub struct TransformRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Debug for TransformRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for TransformRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TransformRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("crop_resize", |s| Ok(Box::new(CropResize::from_spec(s)?)));
        reg.register("hflip", |s| Ok(Box::new(Flip::from_spec(s, FlipAxis::Horizontal)?)));
        reg.register("vflip", |s| Ok(Box::new(Flip::from_spec(s, FlipAxis::Vertical)?)));
        reg.register("rotate90", |s| Ok(Box::new(Rotate90::from_spec(s)?)));
        reg.register("color_jitter", |s| Ok(Box::new(ColorJitter::from_spec(s)?)));
        reg.register("gaussian_blur", |s| Ok(Box::new(GaussianBlur::from_spec(s)?)));
        reg.register("gaussian_noise", |s| Ok(Box::new(GaussianNoise::from_spec(s)?)));
        reg.register("grayscale", |s| Ok(Box::new(Grayscale::from_spec(s)?)));
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, spec: &TransformSpec) -> Result<Box<dyn Transform>> {
        let factory = self.factories.get(spec.name.as_str()).ok_or_else(|| Error::UnknownName {
            kind: "transform",
            name: spec.name.clone(),
        })?;
        factory(spec)
    }
}

/// Random crop (area fraction and aspect ratio sampled) resized to a square
/// output. Bilinear for the image, nearest-neighbor for the index label.
#[derive(Debug, Clone, PartialEq)]
pub struct CropResize {
    pub scale: [f64; 2],
    pub ratio: [f64; 2],
    pub size: usize,
    pub max_attempts: usize,
}

impl CropResize {
    fn from_spec(spec: &TransformSpec) -> Result<Self> {
        let mut p = Params::new(spec);
        let scale = p.range("scale", [0.2, 1.0])?;
        let ratio = p.range("ratio", [0.75, 4.0 / 3.0])?;
        let size = p.scalar("size", 224.0)?;
        let attempts = p.scalar("max_attempts", 10.0)?;
        p.finish()?;
        if !(scale[0] > 0.0 && scale[1] <= 1.0) || !(ratio[0] > 0.0) || size < 1.0 || attempts < 1.0 {
            return Err(Error::Config(vec![format!(
                "crop_resize: need 0 < scale <= 1, ratio > 0, size >= 1 (got scale {scale:?}, ratio {ratio:?}, size {size})"
            )]));
        }
        Ok(Self {
            scale,
            ratio,
            size: size as usize,
            max_attempts: attempts as usize,
        })
    }

    pub fn new(scale: [f64; 2], ratio: [f64; 2], size: usize) -> Self {
        Self {
            scale,
            ratio,
            size,
            max_attempts: 10,
        }
    }

    /// Crop the window `(top, left, height, width)` and resize to `size x size`.
    pub fn apply_window(&self, view: &AugView, top: usize, left: usize, h: usize, w: usize) -> Result<AugView> {
        let (ih, iw) = (view.image.height, view.image.width);
        if h == 0 || w == 0 || top + h > ih || left + w > iw {
            return Err(Error::InvalidArgument(format!(
                "crop window ({top},{left},{h}x{w}) outside {ih}x{iw}"
            )));
        }
        let s = self.size;
        let image = Bilinear::window((ih, iw), (top as f64, left as f64, h as f64, w as f64), (s, s)).forward(&view.image);
        let row_src: Vec<usize> = (0..s).map(|i| top + (((i as f64 + 0.5) * h as f64 / s as f64) as usize).min(h - 1)).collect();
        let col_src: Vec<usize> = (0..s).map(|j| left + (((j as f64 + 0.5) * w as f64 / s as f64) as usize).min(w - 1)).collect();
        let index = view.index.gather(s, s, |r, c| (row_src[r], col_src[c]));
        Ok(AugView { image, index })
    }

    /// Sample a crop window; `None` when every attempt was degenerate.
    pub fn sample_window(&self, ih: usize, iw: usize, rng: &mut AugRng) -> Option<(usize, usize, usize, usize)> {
        let area = (ih * iw) as f64;
        let log_ratio = [self.ratio[0].ln(), self.ratio[1].ln()];
        for _ in 0..self.max_attempts {
            let target = area * sample(rng, self.scale);
            let aspect = sample(rng, log_ratio).exp();
            let w = (target * aspect).sqrt().round() as usize;
            let h = (target / aspect).sqrt().round() as usize;
            if w >= 1 && h >= 1 && w <= iw && h <= ih {
                let top = rng.gen_range(0..=ih - h);
                let left = rng.gen_range(0..=iw - w);
                return Some((top, left, h, w));
            }
        }
        None
    }
}

impl Transform for CropResize {
    fn name(&self) -> &'static str {
        "crop_resize"
    }

    fn kind(&self) -> TransformKind {
        TransformKind::Spatial
    }

    fn apply(&self, view: AugView, rng: &mut AugRng) -> Result<AugView> {
        let (top, left, h, w) = self
            .sample_window(view.image.height, view.image.width, rng)
            .ok_or(Error::DegenerateCrop(self.max_attempts))?;
        self.apply_window(&view, top, left, h, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flip {
    pub axis: FlipAxis,
    pub p: f64,
}

impl Flip {
    fn from_spec(spec: &TransformSpec, axis: FlipAxis) -> Result<Self> {
        let mut params = Params::new(spec);
        let p = params.probability(0.5)?;
        params.finish()?;
        Ok(Self { axis, p })
    }

    pub fn flip(view: &AugView, axis: FlipAxis) -> AugView {
        let (h, w) = (view.image.height, view.image.width);
        match axis {
            FlipAxis::Horizontal => view.gather(h, w, |r, c| (r, w - 1 - c)),
            FlipAxis::Vertical => view.gather(h, w, |r, c| (h - 1 - r, c)),
        }
    }
}

impl Transform for Flip {
    fn name(&self) -> &'static str {
        match self.axis {
            FlipAxis::Horizontal => "hflip",
            FlipAxis::Vertical => "vflip",
        }
    }

    fn kind(&self) -> TransformKind {
        TransformKind::Spatial
    }

    fn apply(&self, view: AugView, rng: &mut AugRng) -> Result<AugView> {
        if rng.gen_bool(self.p) {
            Ok(Self::flip(&view, self.axis))
        } else {
            Ok(view)
        }
    }
}

/// Rotation by a uniformly drawn multiple of 90 degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotate90 {
    pub p: f64,
}

impl Rotate90 {
    fn from_spec(spec: &TransformSpec) -> Result<Self> {
        let mut params = Params::new(spec);
        let p = params.probability(1.0)?;
        params.finish()?;
        Ok(Self { p })
    }

    /// Rotate clockwise by `quarter_turns * 90` degrees.
    pub fn rotate(view: &AugView, quarter_turns: usize) -> AugView {
        let (h, w) = (view.image.height, view.image.width);
        match quarter_turns % 4 {
            0 => view.clone(),
            1 => view.gather(w, h, |r, c| (h - 1 - c, r)),
            2 => view.gather(h, w, |r, c| (h - 1 - r, w - 1 - c)),
            _ => view.gather(w, h, |r, c| (c, w - 1 - r)),
        }
    }
}

impl Transform for Rotate90 {
    fn name(&self) -> &'static str {
        "rotate90"
    }

    fn kind(&self) -> TransformKind {
        TransformKind::Spatial
    }

    fn apply(&self, view: AugView, rng: &mut AugRng) -> Result<AugView> {
        if !rng.gen_bool(self.p) {
            return Ok(view);
        }
        let k = rng.gen_range(0..4usize);
        Ok(Self::rotate(&view, k))
    }
}

fn rgb_channels(image: &FeatureMap) -> usize {
    image.channels.min(3)
}

fn clamp_unit(image: &mut FeatureMap) {
    for v in &mut image.data {
        *v = v.clamp(0.0, 1.0);
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Random brightness, contrast, saturation and hue perturbation. Bands past
/// the first three only receive brightness and contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorJitter {
    pub p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl ColorJitter {
    fn from_spec(spec: &TransformSpec) -> Result<Self> {
        let mut params = Params::new(spec);
        let p = params.probability(0.8)?;
        let brightness = params.scalar("brightness", 0.8)?;
        let contrast = params.scalar("contrast", 0.8)?;
        let saturation = params.scalar("saturation", 0.8)?;
        let hue = params.scalar("hue", 0.2)?;
        params.finish()?;
        if brightness < 0.0 || contrast < 0.0 || saturation < 0.0 || !(0.0..=0.5).contains(&hue) {
            return Err(Error::Config(vec![
                "color_jitter: strengths must be >= 0 and hue in [0, 0.5]".into()
            ]));
        }
        Ok(Self {
            p,
            brightness,
            contrast,
            saturation,
            hue,
        })
    }

    fn factor(rng: &mut AugRng, strength: f64) -> f32 {
        sample(rng, [(1.0 - strength).max(0.0), 1.0 + strength]) as f32
    }
}

impl Transform for ColorJitter {
    fn name(&self) -> &'static str {
        "color_jitter"
    }

    fn kind(&self) -> TransformKind {
        TransformKind::Photometric
    }

    fn apply(&self, mut view: AugView, rng: &mut AugRng) -> Result<AugView> {
        if !rng.gen_bool(self.p) {
            return Ok(view);
        }
        let b = Self::factor(rng, self.brightness);
        let c = Self::factor(rng, self.contrast);
        let s = Self::factor(rng, self.saturation);
        let h = sample(rng, [-self.hue, self.hue]) as f32;
        let img = &mut view.image;
        for v in &mut img.data {
            *v *= b;
        }
        clamp_unit(img);
        for ch in 0..img.channels {
            let plane = img.plane_mut(ch);
            let mean = plane.iter().sum::<f32>() / plane.len() as f32;
            for v in plane.iter_mut() {
                *v = (*v - mean) * c + mean;
            }
        }
        clamp_unit(img);
        if rgb_channels(img) == 3 {
            let n = img.plane_len();
            for i in 0..n {
                let (r, g, bl) = (img.data[i], img.data[n + i], img.data[2 * n + i]);
                let gray = (r + g + bl) / 3.0;
                let (r, g, bl) = (
                    (gray + (r - gray) * s).clamp(0.0, 1.0),
                    (gray + (g - gray) * s).clamp(0.0, 1.0),
                    (gray + (bl - gray) * s).clamp(0.0, 1.0),
                );
                let (hh, ss, vv) = rgb_to_hsv(r, g, bl);
                let (r, g, bl) = hsv_to_rgb(hh + h, ss, vv);
                img.data[i] = r;
                img.data[n + i] = g;
                img.data[2 * n + i] = bl;
            }
        }
        Ok(view)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlur {
    pub p: f64,
    pub sigma: [f64; 2],
}

impl GaussianBlur {
    fn from_spec(spec: &TransformSpec) -> Result<Self> {
        let mut params = Params::new(spec);
        let p = params.probability(0.5)?;
        let sigma = params.range("sigma", [0.1, 2.0])?;
        params.finish()?;
        if sigma[0] <= 0.0 {
            return Err(Error::Config(vec!["gaussian_blur: sigma must be positive".into()]));
        }
        Ok(Self { p, sigma })
    }

    pub fn blur(image: &mut FeatureMap, sigma: f64) {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
            .collect();
        let total: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        let (h, w) = (image.height as isize, image.width as isize);
        let mut tmp = vec![0.0f32; image.plane_len()];
        for ch in 0..image.channels {
            let plane = image.plane_mut(ch);
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let cc = (c + k as isize - radius).clamp(0, w - 1);
                        acc += kv * plane[(r * w + cc) as usize];
                    }
                    tmp[(r * w + c) as usize] = acc;
                }
            }
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let rr = (r + k as isize - radius).clamp(0, h - 1);
                        acc += kv * tmp[(rr * w + c) as usize];
                    }
                    plane[(r * w + c) as usize] = acc;
                }
            }
        }
    }
}

impl Transform for GaussianBlur {
    fn name(&self) -> &'static str {
        "gaussian_blur"
    }

    fn kind(&self) -> TransformKind {
        TransformKind::Photometric
    }

    fn apply(&self, mut view: AugView, rng: &mut AugRng) -> Result<AugView> {
        if rng.gen_bool(self.p) {
            let sigma = sample(rng, self.sigma);
            Self::blur(&mut view.image, sigma);
        }
        Ok(view)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNoise {
    pub p: f64,
    pub sigma: [f64; 2],
}

impl GaussianNoise {
    fn from_spec(spec: &TransformSpec) -> Result<Self> {
        let mut params = Params::new(spec);
        let p = params.probability(0.5)?;
        let sigma = params.range("sigma", [0.0, 0.05])?;
        params.finish()?;
        if sigma[0] < 0.0 {
            return Err(Error::Config(vec!["gaussian_noise: sigma must be >= 0".into()]));
        }
        Ok(Self { p, sigma })
    }
}

impl Transform for GaussianNoise {
    fn name(&self) -> &'static str {
        "gaussian_noise"
    }

    fn kind(&self) -> TransformKind {
        TransformKind::Photometric
    }

    fn apply(&self, mut view: AugView, rng: &mut AugRng) -> Result<AugView> {
        if !rng.gen_bool(self.p) {
            return Ok(view);
        }
        let sigma = sample(rng, self.sigma) as f32;
        if sigma > 0.0 {
            let normal = Normal::new(0.0f32, sigma).expect("positive sigma");
            for v in &mut view.image.data {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
        }
        Ok(view)
    }
}

/// Replace the RGB bands by their average; further bands are left as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct Grayscale {
    pub p: f64,
}

impl Grayscale {
    fn from_spec(spec: &TransformSpec) -> Result<Self> {
        let mut params = Params::new(spec);
        let p = params.probability(0.2)?;
        params.finish()?;
        Ok(Self { p })
    }
}

impl Transform for Grayscale {
    fn name(&self) -> &'static str {
        "grayscale"
    }

    fn kind(&self) -> TransformKind {
        TransformKind::Photometric
    }

    fn apply(&self, mut view: AugView, rng: &mut AugRng) -> Result<AugView> {
        if !rng.gen_bool(self.p) {
            return Ok(view);
        }
        let bands = rgb_channels(&view.image);
        let n = view.image.plane_len();
        for i in 0..n {
            let gray = (0..bands).map(|c| view.image.data[c * n + i]).sum::<f32>() / bands as f32;
            for c in 0..bands {
                view.image.data[c * n + i] = gray;
            }
        }
        Ok(view)
    }
}
