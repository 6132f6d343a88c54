use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Second half of the style vector: variance or standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleMode {
    #[default]
    Variance,
    Std,
}

/// Channel-wise means followed by channel-wise spreads, length `2 * C`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector {
    pub values: Vec<f64>,
}

impl StyleVector {
    pub fn channels(&self) -> usize {
        self.values.len() / 2
    }

    pub fn means(&self) -> &[f64] {
        &self.values[..self.channels()]
    }

    pub fn spreads(&self) -> &[f64] {
        &self.values[self.channels()..]
    }
}

fn mean_and_var(plane: &[f32]) -> (f64, f64) {
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn check_extent(map: &FeatureMap) -> Result<()> {
    if map.plane_len() == 0 {
        return Err(Error::Shape("feature map has an empty spatial extent".into()));
    }
    Ok(())
}

/// Per-channel mean and population variance (divisor `h * w`), or standard
/// deviation in [`StyleMode::Std`].
pub fn extract_style(map: &FeatureMap, mode: StyleMode) -> Result<StyleVector> {
    check_extent(map)?;
    let c = map.channels;
    let mut values = vec![0.0; 2 * c];
    for ch in 0..c {
        let (mean, var) = mean_and_var(map.plane(ch));
        values[ch] = mean;
        values[c + ch] = match mode {
            StyleMode::Variance => var,
            StyleMode::Std => var.sqrt(),
        };
    }
    Ok(StyleVector { values })
}

/// A fixed-length global summary of an encoder feature map, with its adjoint.
pub trait GlobalDescriptor: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Output length for a map with `channels` channels.
    fn dim(&self, channels: usize) -> usize;

    fn describe(&self, map: &FeatureMap) -> Result<Vec<f64>>;

    /// Gradient with respect to `map` given the gradient of the descriptor.
    fn backward(&self, map: &FeatureMap, d_desc: &[f64]) -> FeatureMap;
}

#[derive(Debug, Clone, Copy)]
pub struct StyleDescriptor {
    pub mode: StyleMode,
}

impl GlobalDescriptor for StyleDescriptor {
    fn name(&self) -> &'static str {
        match self.mode {
            StyleMode::Variance => "style",
            StyleMode::Std => "style_std",
        }
    }

    fn dim(&self, channels: usize) -> usize {
        2 * channels
    }

    fn describe(&self, map: &FeatureMap) -> Result<Vec<f64>> {
        Ok(extract_style(map, self.mode)?.values)
    }

    fn backward(&self, map: &FeatureMap, d_desc: &[f64]) -> FeatureMap {
        let c = map.channels;
        let n = map.plane_len() as f64;
        let mut dx = FeatureMap::zeros(c, map.height, map.width);
        for ch in 0..c {
            let plane = map.plane(ch);
            let (mean, var) = mean_and_var(plane);
            let d_mean = d_desc[ch] / n;
            // d var / d x_i = 2 (x_i - mean) / n; std adds a 1 / (2 std) factor.
            let spread_scale = match self.mode {
                StyleMode::Variance => 2.0 * d_desc[c + ch] / n,
                StyleMode::Std if var > 0.0 => d_desc[c + ch] / (n * var.sqrt()),
                StyleMode::Std => 0.0,
            };
            for (o, &v) in dx.plane_mut(ch).iter_mut().zip(plane) {
                *o = (d_mean + spread_scale * (v as f64 - mean)) as f32;
            }
        }
        dx
    }
}

/// Global average pooling.
#[derive(Debug, Clone, Copy)]
pub struct AvgPoolDescriptor;

impl GlobalDescriptor for AvgPoolDescriptor {
    fn name(&self) -> &'static str {
        "avgpool"
    }

    fn dim(&self, channels: usize) -> usize {
        channels
    }

    fn describe(&self, map: &FeatureMap) -> Result<Vec<f64>> {
        check_extent(map)?;
        Ok((0..map.channels).map(|ch| mean_and_var(map.plane(ch)).0).collect())
    }

    fn backward(&self, map: &FeatureMap, d_desc: &[f64]) -> FeatureMap {
        let n = map.plane_len() as f64;
        let mut dx = FeatureMap::zeros(map.channels, map.height, map.width);
        for ch in 0..map.channels {
            dx.plane_mut(ch).fill((d_desc[ch] / n) as f32);
        }
        dx
    }
}

type DescriptorFactory = fn() -> Box<dyn GlobalDescriptor>;

/// Global descriptors selectable by name.
#[derive(Debug, Clone)]
pub struct DescriptorRegistry {
    factories: BTreeMap<&'static str, DescriptorFactory>,
}

impl DescriptorRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("style", || Box::new(StyleDescriptor { mode: StyleMode::Variance }));
        r.register("style_std", || Box::new(StyleDescriptor { mode: StyleMode::Std }));
        r.register("avgpool", || Box::new(AvgPoolDescriptor));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: DescriptorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn GlobalDescriptor>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "global descriptor",
            name: name.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(channels: usize, h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> FeatureMap {
        let data = (0..channels * h * w).map(|i| f(i / (h * w), i % (h * w))).collect();
        FeatureMap::from_vec(channels, h, w, data).unwrap()
    }

    #[test]
    fn constant_channels_have_zero_variance() {
        let m = map(3, 4, 5, |c, _| 5.0 + c as f32);
        let s = extract_style(&m, StyleMode::Variance).unwrap();
        assert_eq!(s.values.len(), 6);
        assert_eq!(s.means(), &[5.0, 6.0, 7.0]);
        assert_eq!(s.spreads(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_valued_channel() {
        let m = map(1, 2, 2, |_, i| if i % 2 == 0 { 0.0 } else { 2.0 });
        let s = extract_style(&m, StyleMode::Variance).unwrap();
        assert_eq!(s.values, vec![1.0, 1.0]);
        let s = extract_style(&m, StyleMode::Std).unwrap();
        assert_eq!(s.values, vec![1.0, 1.0]);
    }

    #[test]
    fn single_pixel_map() {
        let m = map(2, 1, 1, |c, _| 3.5 * (c as f32 + 1.0));
        assert_eq!(extract_style(&m, StyleMode::Variance).unwrap().values, vec![3.5, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_map_is_an_error() {
        assert!(extract_style(&FeatureMap::zeros(2, 0, 3), StyleMode::Variance).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = map(2, 3, 3, |c, i| ((c * 9 + i) * 7 % 11) as f32 * 0.3);
        let weights: Vec<f64> = (0..4).map(|i| 0.5 - 0.3 * i as f64).collect();
        for desc in [
            Box::new(StyleDescriptor { mode: StyleMode::Variance }) as Box<dyn GlobalDescriptor>,
            Box::new(StyleDescriptor { mode: StyleMode::Std }),
            Box::new(AvgPoolDescriptor),
        ] {
            let f = |m: &FeatureMap| -> f64 { desc.describe(m).unwrap().iter().zip(&weights).map(|(a, b)| a * b).sum() };
            let dx = desc.backward(&m, &weights[..desc.dim(2)]);
            for i in [0usize, 4, 10, 17] {
                let mut p = m.clone();
                p.data[i] += 1e-3;
                let mut q = m.clone();
                q.data[i] -= 1e-3;
                let fd = (f(&p) - f(&q)) / 2e-3;
                assert!((fd - dx.data[i] as f64).abs() < 1e-3, "{}[{i}]: {fd} vs {}", desc.name(), dx.data[i]);
            }
        }
    }

    #[test]
    fn registry_lookup() {
        let r = DescriptorRegistry::builtin();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["avgpool", "style", "style_std"]);
        assert_eq!(r.build("style").unwrap().dim(64), 128);
        assert!(matches!(r.build("gram"), Err(Error::UnknownName { .. })));
    }
}
