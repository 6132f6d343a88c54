use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::descriptor::{AvgPoolDescriptor, GlobalDescriptor, StyleDescriptor, StyleMode};
use super::regions::RegionParams;
use crate::contrastive::ContrastiveConfig;
use crate::error::{Error, Result};

/// Which parts of the objective are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Global average pooling instead of style vectors.
    pub nostyle: bool,
    /// No global module.
    pub noglobe: bool,
    /// No local module.
    pub nolocal: bool,
}

impl Ablation {
    pub fn uses_global(&self) -> bool {
        !self.noglobe
    }

    pub fn uses_local(&self) -> bool {
        !self.nolocal
    }

    /// Loss weights `(w_g, w_l)`. A disabled module's weight moves to the
    /// other module in full.
    pub fn weights(&self, lambda: f64) -> (f64, f64) {
        match (self.noglobe, self.nolocal) {
            (true, _) => (0.0, 1.0),
            (_, true) => (1.0, 0.0),
            _ => (lambda, 1.0 - lambda),
        }
    }
}

/// A pretext objective variant selectable by name.
pub trait PretextMethod: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn ablation(&self) -> Ablation;

    fn descriptor(&self, mode: StyleMode) -> Box<dyn GlobalDescriptor> {
        if self.ablation().nostyle {
            Box::new(AvgPoolDescriptor)
        } else {
            Box::new(StyleDescriptor { mode })
        }
    }
}

/// A method defined entirely by its ablation switches.
#[derive(Debug, Clone, Copy)]
pub struct FlagMethod {
    pub name: &'static str,
    pub ablation: Ablation,
}

impl PretextMethod for FlagMethod {
    fn name(&self) -> &'static str {
        self.name
    }

    fn ablation(&self) -> Ablation {
        self.ablation
    }
}

type MethodFactory = fn() -> Box<dyn PretextMethod>;

#[derive(Debug, Clone)]
pub struct MethodRegistry {
    factories: BTreeMap<&'static str, MethodFactory>,
}

macro_rules! flag_method {
    ($name:literal, $nostyle:literal, $noglobe:literal, $nolocal:literal) => {
        || {
            Box::new(FlagMethod {
                name: $name,
                ablation: Ablation {
                    nostyle: $nostyle,
                    noglobe: $noglobe,
                    nolocal: $nolocal,
                },
            }) as Box<dyn PretextMethod>
        }
    };
}

/// Names of the ablation matrix, full method first.
pub const ABLATION_METHODS: [&str; 5] = ["glcnet", "nostyle", "noglobe", "nolocal", "nostyle_and_nolocal"];

impl MethodRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("glcnet", flag_method!("glcnet", false, false, false));
        r.register("nostyle", flag_method!("nostyle", true, false, false));
        r.register("noglobe", flag_method!("noglobe", false, true, false));
        r.register("nolocal", flag_method!("nolocal", false, false, true));
        r.register("nostyle_and_nolocal", flag_method!("nostyle_and_nolocal", true, false, true));
        // Instance discrimination on pooled features only.
        r.register("simclr", flag_method!("simclr", true, false, true));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: MethodFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn PretextMethod>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "pretraining method",
            name: name.to_string(),
        })
    }
}

/// Pretraining hyperparameters. Defaults are the full-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GLCNetConfig {
    pub method: String,
    pub lambda: f64,
    pub temperature: f64,
    pub include_positive_in_denominator: bool,
    pub style_mode: StyleMode,
    /// Local region side `s_p` in view pixels.
    pub region_size: usize,
    /// Regions per sample `n_p`.
    pub regions_per_sample: usize,
    /// Nearest-index matches at or beyond this distance are discarded.
    pub match_tolerance: f64,
    pub retries_per_region: usize,
    pub view_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for GLCNetConfig {
    fn default() -> Self {
        Self {
            method: "glcnet".into(),
            lambda: 0.5,
            temperature: 0.5,
            include_positive_in_denominator: false,
            style_mode: StyleMode::Variance,
            region_size: 48,
            regions_per_sample: 4,
            match_tolerance: 1.0,
            retries_per_region: 10,
            view_size: 224,
            batch_size: 64,
            epochs: 400,
            learning_rate: 0.01,
        }
    }
}

impl GLCNetConfig {
    /// Small views, regions and batches for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            region_size: 16,
            regions_per_sample: 2,
            view_size: 64,
            batch_size: 8,
            epochs: 30,
            learning_rate: 0.001,
            ..Self::default()
        }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: self.temperature,
            include_positive_in_denominator: self.include_positive_in_denominator,
        }
    }

    pub fn region_params(&self) -> RegionParams {
        RegionParams {
            size: self.region_size,
            count: self.regions_per_sample,
            match_tolerance: self.match_tolerance,
            retries_per_region: self.retries_per_region,
        }
    }

    pub fn method(&self, registry: &MethodRegistry) -> Result<Box<dyn PretextMethod>> {
        registry.build(&self.method)
    }

    /// Every violated constraint, as config-key messages.
    pub fn problems(&self, registry: &MethodRegistry) -> Vec<String> {
        let mut errs = Vec::new();
        match registry.build(&self.method) {
            Ok(m) => {
                let a = m.ablation();
                if a.noglobe && a.nolocal {
                    errs.push(format!("pretrain.method `{}` disables both the global and the local module", self.method));
                }
            }
            Err(_) => errs.push(format!(
                "pretrain.method `{}` is not one of: {}",
                self.method,
                registry.names().collect::<Vec<_>>().join(", ")
            )),
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            errs.push(format!("pretrain.lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            errs.push(format!("pretrain.temperature must be positive, got {}", self.temperature));
        }
        if self.regions_per_sample == 0 {
            errs.push("pretrain.regions_per_sample must be >= 1".into());
        }
        if self.region_size == 0 || self.region_size > self.view_size {
            errs.push(format!(
                "pretrain.region_size must lie in [1, view_size = {}], got {}",
                self.view_size, self.region_size
            ));
        }
        let cap = self.region_size as f64 / 4.0;
        if !(self.match_tolerance > 0.0) || self.match_tolerance > cap.max(1.0) {
            errs.push(format!(
                "pretrain.match_tolerance must lie in (0, max(1, region_size / 4) = {}], got {}",
                cap.max(1.0),
                self.match_tolerance
            ));
        }
        if self.retries_per_region == 0 {
            errs.push("pretrain.retries_per_region must be >= 1".into());
        }
        if self.batch_size < 2 {
            errs.push(format!("pretrain.batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            errs.push("pretrain.epochs must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            errs.push(format!("pretrain.learning_rate must be positive, got {}", self.learning_rate));
        }
        errs
    }

    pub fn validate(&self, registry: &MethodRegistry) -> Result<()> {
        let errs = self.problems(registry);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
