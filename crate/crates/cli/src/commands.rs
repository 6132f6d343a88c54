use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use glcnet::data::{
    build_manifest, finetune_subset, generate_synthetic_dataset, list_images, read_scene, tile_raster, write_scene, DatasetManifest,
    ManifestSet,
};
use glcnet::finetune::{evaluate, finetune, finetune_csv, prepare_model, ConfusionMatrix, FinetuneLogRow, LabeledTile, MetricReport};
use glcnet::glcnet::{run_pretraining, write_loss_logs, MethodRegistry, PretrainOptions, PretrainOutcome, Pretrainer};
use glcnet::network::{parse_groups, CheckpointBundle, CheckpointMeta, LoadReport, SegmentationNet, ALL_GROUPS};
use glcnet::tensor::FeatureMap;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::lock::DirLock;

pub const CONFIG_SNAPSHOT: &str = "config.cfg";
pub const RUN_INFO: &str = "run.txt";
pub const CHECKPOINT: &str = "checkpoint.glck";
pub const MODEL: &str = "model.glck";
pub const FINETUNE_LOG: &str = "finetune_log.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

/// Row labels of the ablation table and the method each one runs.
pub const ABLATION_ROWS: [(&str, &str); 5] = [
    ("ours", "glcnet"),
    ("ours_nostyle", "nostyle"),
    ("ours_noglobe", "noglobe"),
    ("ours_nolocal", "nolocal"),
    ("ours_nostyle_and_nolocal", "nostyle_and_nolocal"),
];

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Key/value record written as `run.txt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunInfo(pub BTreeMap<String, String>);

impl RunInfo {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut m = BTreeMap::new();
        m.insert("command".to_string(), command.to_string());
        m.insert("config_hash".to_string(), cfg.config_hash());
        Self(m)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}\t{v}");
            s
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self(
            text.lines()
                .filter_map(|l| l.split_once('\t'))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        ))
    }
}

/// Claim `dir` and record the resolved config there.
fn start_run(dir: &Path, cfg: &RunConfig) -> CliResult<DirLock> {
    cfg.validate()?;
    let lock = DirLock::acquire(dir)?;
    write(&dir.join(CONFIG_SNAPSHOT), &cfg.clone().resolved().to_text())?;
    Ok(lock)
}

fn finish_run(dir: &Path, info: &RunInfo) -> CliResult<()> {
    write(&dir.join(RUN_INFO), &info.to_text())
}

fn load_manifests(cfg: &RunConfig, tiles: &Path) -> CliResult<ManifestSet> {
    let root = cfg.paths.resolve(tiles);
    ManifestSet::load(&root).map_err(|e| match e {
        glcnet::Error::Io { path, .. } => CliError::Usage(format!(
            "no manifests at {} (missing {}); run `glcnet tile` first",
            root.display(),
            path.display()
        )),
        other => other.into(),
    })
}

fn check_bands(cfg: &RunConfig, map: &FeatureMap, path: &Path) -> CliResult<()> {
    if map.channels != cfg.model.in_channels {
        return Err(CliError::Usage(format!(
            "{} has {} bands but model.in_channels is {}",
            path.display(),
            map.channels,
            cfg.model.in_channels
        )));
    }
    Ok(())
}

pub fn load_images(cfg: &RunConfig, m: &DatasetManifest) -> CliResult<Vec<FeatureMap>> {
    (0..m.len())
        .map(|i| {
            let path = m.tile_path(i);
            let map = read_scene(&path)?.to_feature_map();
            check_bands(cfg, &map, &path)?;
            Ok(map)
        })
        .collect()
}

pub fn load_labeled(cfg: &RunConfig, m: &DatasetManifest) -> CliResult<Vec<LabeledTile>> {
    (0..m.len())
        .map(|i| {
            let path = m.tile_path(i);
            let scene = read_scene(&path)?;
            let mask = scene
                .mask
                .clone()
                .ok_or_else(|| CliError::Usage(format!("{} has no mask but the {} split needs labels", path.display(), m.split)))?;
            let map = scene.to_feature_map();
            check_bands(cfg, &map, &path)?;
            Ok(LabeledTile::new(map, mask)?)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scenes: Vec<PathBuf>,
    pub proportions: Vec<f64>,
}

/// Write `data.synth_scenes` synthetic scenes with masks into `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> CliResult<SynthOutput> {
    let _lock = start_run(out, cfg)?;
    let (scenes, summary) = generate_synthetic_dataset(&cfg.synth, cfg.data.synth_scenes)?;
    let mut paths = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        paths.push(write_scene(out, &format!("scene_{i:04}"), s)?.0);
    }
    write(&out.join("summary.txt"), &summary.to_text())?;
    let mut info = RunInfo::new("synth", cfg);
    info.set("scenes", scenes.len());
    info.set("seed", cfg.synth.seed);
    finish_run(out, &info)?;
    Ok(SynthOutput {
        scenes: paths,
        proportions: summary.proportions(),
    })
}

fn tile_dir_into(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<usize> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let (crop, stride) = (cfg.data.crop_size, cfg.data.effective_stride());
    let mut count = 0;
    for path in list_images(input)? {
        let scene = read_scene(&path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for t in tile_raster(&scene, crop, stride)? {
            write_scene(out, &format!("{stem}_r{:03}_c{:03}", t.row, t.col), &t.scene)?;
            count += 1;
        }
    }
    Ok(count)
}

/// Cut every scene under `input` into tiles under `out` and write the split
/// manifests. `train/` and `test/` subdirectories are mirrored.
pub fn cmd_tile(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<ManifestSet> {
    let input = cfg.paths.resolve(input);
    let _lock = start_run(out, cfg)?;
    let (train, test) = (input.join("train"), input.join("test"));
    let count = if train.is_dir() && test.is_dir() {
        tile_dir_into(cfg, &train, &out.join("train"))? + tile_dir_into(cfg, &test, &out.join("test"))?
    } else {
        tile_dir_into(cfg, &input, out)?
    };
    if count == 0 {
        return Err(CliError::Usage(format!("no scenes found in {}", input.display())));
    }
    let set = build_manifest(out, &cfg.data.splits, cfg.finetune.label_fraction, cfg.seeds.split)?;
    set.write()?;
    let mut info = RunInfo::new("tile", cfg);
    info.set("tiles", count);
    info.set("crop_size", cfg.data.crop_size);
    info.set("stride", cfg.data.effective_stride());
    for (name, m) in [("pretrain", &set.pretrain), ("finetune", &set.finetune), ("test", &set.test)] {
        info.set(&format!("{name}_tiles"), m.len());
    }
    finish_run(out, &info)?;
    Ok(set)
}

/// Pretrain on the pretrain split of `tiles`; writes the best checkpoint and
/// the loss logs into `out`.
pub fn cmd_pretrain(cfg: &RunConfig, tiles: &Path, out: &Path) -> CliResult<PretrainOutcome> {
    let _lock = start_run(out, cfg)?;
    let set = load_manifests(cfg, tiles)?;
    let images = load_images(cfg, &set.pretrain)?;
    let (first, second) = cfg.pipelines()?;
    let mut trainer = Pretrainer::new(&cfg.model, cfg.pretrain.clone(), &MethodRegistry::builtin(), first, second, cfg.seeds.pretrain)?;
    let mut entries = BTreeMap::new();
    entries.insert("pretrain_config".to_string(), toml::to_string(&cfg.pretrain).expect("serializes"));
    entries.insert("model_config".to_string(), toml::to_string(&cfg.model).expect("serializes"));
    let opts = PretrainOptions {
        config_hash: cfg.config_hash(),
        meta_entries: entries,
        checkpoint_path: Some(out.join(CHECKPOINT)),
        max_steps: None,
    };
    let outcome = run_pretraining(&mut trainer, &images, &opts)?;
    write_loss_logs(out, &outcome)?;
    let mut info = RunInfo::new("pretrain", cfg);
    info.set("method", trainer.method_name());
    info.set("seed", cfg.seeds.pretrain);
    info.set("pretrain_tiles", images.len());
    info.set("steps", outcome.steps.len());
    info.set("best_epoch", outcome.best.meta.epoch);
    info.set("best_loss", outcome.best.meta.loss);
    finish_run(out, &info)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub model: SegmentationNet,
    pub log: Vec<FinetuneLogRow>,
    pub load: LoadReport,
    pub subset_size: usize,
}

/// Fine-tune on the labeled subset chosen by `finetune.label_fraction`,
/// initializing `finetune.load_groups` from `checkpoint`.
pub fn cmd_finetune(cfg: &RunConfig, tiles: &Path, checkpoint: Option<&Path>, out: &Path) -> CliResult<FinetuneOutput> {
    let _lock = start_run(out, cfg)?;
    let groups = parse_groups(&cfg.finetune.load_groups)?;
    let bundle = match checkpoint {
        Some(p) => Some(CheckpointBundle::load(p)?),
        None if groups.is_empty() => None,
        None => {
            return Err(CliError::Usage(format!(
                "--load-groups {} needs --checkpoint (use --load-groups none for a random start)",
                cfg.finetune.load_groups
            )))
        }
    };
    let set = load_manifests(cfg, tiles)?;
    let subset = finetune_subset(&set.pretrain, cfg.finetune.label_fraction, cfg.seeds.split)?;
    let data = load_labeled(cfg, &subset)?;
    let (mut model, load) = prepare_model(&cfg.model, bundle.as_ref(), &groups, cfg.seeds.finetune)?;
    let log = finetune(&mut model, &data, &cfg.finetune, cfg.seeds.finetune)?;
    write(&out.join(FINETUNE_LOG), &finetune_csv(&log))?;
    let meta = CheckpointMeta {
        epoch: cfg.finetune.epochs as u64,
        loss: log.last().map_or(f64::NAN, |r| r.loss),
        seed: cfg.seeds.finetune,
        config_hash: cfg.config_hash(),
        entries: BTreeMap::from([("stage".to_string(), "finetune".to_string())]),
    };
    CheckpointBundle::from_model(&model, meta).save(&out.join(MODEL))?;
    write(&out.join("finetune_subset.txt"), &subset.to_text())?;
    let mut info = RunInfo::new("finetune", cfg);
    info.set("seed", cfg.seeds.finetune);
    info.set("label_fraction", cfg.finetune.label_fraction);
    info.set("pretrain_tiles", set.pretrain.len());
    info.set("label_subset_size", subset.len());
    info.set("load_groups", if groups.is_empty() { "none".to_string() } else { groups.join(",") });
    info.set("kept_fresh", load.kept_fresh.join(","));
    if let Some(p) = checkpoint {
        info.set("checkpoint", p.display());
    }
    finish_run(out, &info)?;
    Ok(FinetuneOutput {
        model,
        log,
        load,
        subset_size: subset.len(),
    })
}

fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let k = cm.num_classes();
    let mut s = String::from("actual");
    for c in 0..k {
        let _ = write!(s, ",pred_{c}");
    }
    s.push('\n');
    for r in 0..k {
        let _ = write!(s, "{r}");
        for c in 0..k {
            let _ = write!(s, ",{}", cm.get(r, c));
        }
        s.push('\n');
    }
    s
}

/// Score a fine-tuned model on the test split; writes the metric CSV, a text
/// summary and the confusion matrix into `out`.
pub fn cmd_evaluate(cfg: &RunConfig, tiles: &Path, model_path: &Path, out: &Path) -> CliResult<MetricReport> {
    let _lock = start_run(out, cfg)?;
    let bundle = CheckpointBundle::load(model_path)?;
    let groups: Vec<String> = ALL_GROUPS.iter().filter(|g| bundle.group(g).is_some()).map(|g| g.to_string()).collect();
    let (model, _) = prepare_model(&cfg.model, Some(&bundle), &groups, cfg.seeds.finetune)?;
    let set = load_manifests(cfg, tiles)?;
    if set.test.is_empty() {
        return Err(CliError::Usage(format!("test split under {} is empty", tiles.display())));
    }
    let data = load_labeled(cfg, &set.test)?;
    let cm = evaluate(&model, &data)?;
    let report = MetricReport::from_confusion(&cm, &cfg.finetune.ignore_classes);
    write(&out.join(METRICS_CSV), &report.to_csv())?;
    write(&out.join(CONFUSION_CSV), &confusion_csv(&cm))?;
    write(
        &out.join(METRICS_TXT),
        &format!("config_hash {}\nmodel {}\n{}", cfg.config_hash(), model_path.display(), report.summary()),
    )?;
    let mut info = RunInfo::new("evaluate", cfg);
    info.set("model", model_path.display());
    info.set("test_tiles", data.len());
    info.set("kappa", report.kappa);
    info.set("oa", report.oa);
    finish_run(out, &info)?;
    Ok(report)
}

/// Pretrain, fine-tune and evaluate one configuration into `dir`.
pub fn pipeline(cfg: &RunConfig, tiles: &Path, dir: &Path) -> CliResult<MetricReport> {
    let pre = dir.join("pretrain");
    let ft = dir.join("finetune");
    cmd_pretrain(cfg, tiles, &pre)?;
    cmd_finetune(cfg, tiles, Some(&pre.join(CHECKPOINT)), &ft)?;
    cmd_evaluate(cfg, tiles, &ft.join(MODEL), &ft)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub configuration: String,
    pub method: String,
    pub report: MetricReport,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let k = rows.first().map_or(0, |r| r.report.f1.len());
    let mut s = String::from("configuration,method,oa,kappa,macro_f1");
    for c in 0..k {
        let _ = write!(s, ",f1_{c}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{},{}", r.configuration, r.method, r.report.oa, r.report.kappa, r.report.macro_f1);
        for f in &r.report.f1 {
            let _ = write!(s, ",{f}");
        }
        s.push('\n');
    }
    s
}

/// Run the five ablation configurations and tabulate their test metrics.
pub fn cmd_ablate(cfg: &RunConfig, tiles: &Path, out: &Path) -> CliResult<Vec<AblationRow>> {
    let _lock = start_run(out, cfg)?;
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for (label, method) in ABLATION_ROWS {
        log::info!("ablation: {label}");
        let mut c = cfg.clone();
        c.pretrain.method = method.to_string();
        let report = pipeline(&c, tiles, &out.join(label))?;
        rows.push(AblationRow {
            configuration: label.to_string(),
            method: method.to_string(),
            report,
        });
    }
    write(&out.join(ABLATION_CSV), &ablation_csv(&rows))?;
    let mut info = RunInfo::new("ablate", cfg);
    info.set("configurations", rows.len());
    finish_run(out, &info)?;
    Ok(rows)
}
