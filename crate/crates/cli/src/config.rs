use std::path::{Path, PathBuf};

use glcnet::augment::{default_first_view, default_second_view, AugmentationPipeline, TransformRegistry, TransformSpec};
use glcnet::data::{SplitSpec, SyntheticSceneSpec};
use glcnet::finetune::FinetuneConfig;
use glcnet::glcnet::{GLCNetConfig, MethodRegistry};
use glcnet::network::ArchConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default data root.
pub const DATA_ROOT_ENV: &str = "GLCNET_DATA_ROOT";

/// View pipelines. Empty lists mean the built-in pipelines at the
/// pretraining view size.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub first: Vec<TransformSpec>,
    pub second: Vec<TransformSpec>,
}

/// Tiling and split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub crop_size: usize,
    /// 0 means equal to `crop_size`.
    pub stride: usize,
    pub splits: SplitSpec,
    /// Scenes written by `synth`.
    pub synth_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            crop_size: 256,
            stride: 0,
            splits: SplitSpec::default(),
            synth_scenes: 36,
        }
    }
}

impl DataConfig {
    pub fn effective_stride(&self) -> usize {
        if self.stride == 0 {
            self.crop_size
        } else {
            self.stride
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub pretrain: u64,
    pub finetune: u64,
    /// Test holdout and label subset selection.
    pub split: u64,
}

/// Relative paths are resolved against `data_root`, which falls back to
/// `$GLCNET_DATA_ROOT` and then the working directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub data_root: Option<PathBuf>,
}

impl PathConfig {
    pub fn root(&self) -> PathBuf {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root().join(p)
        }
    }
}

/// Every setting of a run. Defaults are the full-scale values; see
/// [`RunConfig::desk`] for the CPU-scale variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ArchConfig,
    pub data: DataConfig,
    pub synth: SyntheticSceneSpec,
    pub augment: AugmentConfig,
    pub pretrain: GLCNetConfig,
    pub finetune: FinetuneConfig,
    pub seeds: SeedConfig,
    pub paths: PathConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ArchConfig::default(),
            data: DataConfig::default(),
            synth: SyntheticSceneSpec {
                scene_size: 512,
                ..SyntheticSceneSpec::default()
            },
            augment: AugmentConfig::default(),
            pretrain: GLCNetConfig::default(),
            finetune: FinetuneConfig::default(),
            seeds: SeedConfig::default(),
            paths: PathConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            data: DataConfig {
                crop_size: 64,
                ..DataConfig::default()
            },
            pretrain: GLCNetConfig::desk(),
            finetune: FinetuneConfig {
                epochs: 30,
                ..FinetuneConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(errs) => CliError::Config(errs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    /// Fill the view pipelines with the built-in ones where left empty.
    pub fn resolved(mut self) -> Self {
        let size = self.pretrain.view_size;
        if self.augment.first.is_empty() {
            self.augment.first = default_first_view(size);
        }
        if self.augment.second.is_empty() {
            self.augment.second = default_second_view(size);
        }
        self
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization of the resolved config.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.clone().resolved().to_text().as_bytes()))
    }

    /// The hash with the pretraining method name blanked out.
    pub fn hash_without_method(&self) -> String {
        let mut c = self.clone();
        c.pretrain.method = String::new();
        c.config_hash()
    }

    pub fn pipelines(&self) -> CliResult<(AugmentationPipeline, AugmentationPipeline)> {
        let c = self.clone().resolved();
        let reg = TransformRegistry::builtin();
        Ok((
            AugmentationPipeline::from_specs(&reg, &c.augment.first)?,
            AugmentationPipeline::from_specs(&reg, &c.augment.second)?,
        ))
    }

    /// Every problem in the config, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(glcnet::Error::Config(e)) = self.model.validate() {
            errs.extend(e);
        }
        errs.extend(self.pretrain.problems(&MethodRegistry::builtin()));
        errs.extend(self.finetune.problems());
        if self.data.crop_size == 0 {
            errs.push("data.crop_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.data.splits.test_fraction) {
            errs.push(format!("data.splits.test_fraction must lie in [0, 1), got {}", self.data.splits.test_fraction));
        }
        if let Err(glcnet::Error::Config(e)) = self.synth.validate() {
            errs.extend(e);
        }
        if self.synth.num_classes != self.model.num_classes {
            errs.push(format!(
                "synth.num_classes ({}) differs from model.num_classes ({})",
                self.synth.num_classes, self.model.num_classes
            ));
        }
        if self.synth.channels != self.model.in_channels {
            errs.push(format!(
                "synth.channels ({}) differs from model.in_channels ({})",
                self.synth.channels, self.model.in_channels
            ));
        }
        if let Some(bad) = self.finetune.ignore_classes.iter().find(|&&c| c >= self.model.num_classes) {
            errs.push(format!("finetune.ignore_classes entry {bad} is not a class id"));
        }
        let reg = TransformRegistry::builtin();
        let c = self.clone().resolved();
        for (name, specs) in [("augment.first", &c.augment.first), ("augment.second", &c.augment.second)] {
            if let Err(e) = AugmentationPipeline::from_specs(&reg, specs) {
                errs.push(format!("{name}: {e}"));
            }
        }
        errs
    }

    pub fn validate(&self) -> CliResult<()> {
        let errs = self.problems();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs))
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
