use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{list_images, mask_sibling};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Pretrain,
    Finetune,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Pretrain, Split::Finetune, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Finetune => "finetune",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::UnknownName {
            kind: "split",
            name: s.to_string(),
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One tile and its optional mask, as paths relative to the manifest root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub tile: String,
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub crop_size: usize,
    pub label_fraction: f64,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Directory the entry paths are relative to. Not serialized.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tile_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].tile)
    }

    pub fn mask_path(&self, i: usize) -> Option<PathBuf> {
        self.entries[i].mask.as_ref().map(|m| self.root.join(m))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# split={} crop_size={} label_fraction={} seed={}\n",
            self.split, self.crop_size, self.label_fraction, self.seed
        );
        for e in &self.entries {
            s.push_str(&e.tile);
            s.push('\t');
            s.push_str(e.mask.as_deref().unwrap_or("-"));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("manifest: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| bad("missing header".into()))?;
        let (mut split, mut crop, mut frac, mut seed) = (None, None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("bad header field `{field}`")))?;
            match k {
                "split" => split = Some(Split::parse(v)?),
                "crop_size" => crop = v.parse().ok(),
                "label_fraction" => frac = v.parse().ok(),
                "seed" => seed = v.parse().ok(),
                _ => return Err(bad(format!("unknown header field `{k}`"))),
            }
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tile, mask) = line.split_once('\t').ok_or_else(|| bad(format!("line {} lacks a tab", n + 2)))?;
            entries.push(ManifestEntry {
                tile: tile.to_string(),
                mask: (mask != "-").then(|| mask.to_string()),
            });
        }
        Ok(Self {
            split: split.ok_or_else(|| bad("header lacks split".into()))?,
            crop_size: crop.ok_or_else(|| bad("header lacks crop_size".into()))?,
            label_fraction: frac.ok_or_else(|| bad("header lacks label_fraction".into()))?,
            seed: seed.ok_or_else(|| bad("header lacks seed".into()))?,
            entries,
            root: root.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// How the test split is carved out when the tile directory has no `test/`
/// subdirectory: a seeded random holdout of labeled tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    /// Fixed holdout size; overrides `test_fraction` when set.
    pub test_count: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            test_count: None,
        }
    }
}

/// Number of fine-tune tiles drawn from `n` pretrain tiles.
///
/// Rounds down with a floor of one tile: 13824 and 18248 tiles at 1% give
/// 138 and 182.
pub fn label_subset_size(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    (((n as f64) * fraction + 1e-9).floor() as usize).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestSet {
    pub pretrain: DatasetManifest,
    pub finetune: DatasetManifest,
    pub test: DatasetManifest,
}

fn relative(root: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(root).unwrap_or(p);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn scan(root: &Path, dir: &Path) -> Result<Vec<ManifestEntry>> {
    Ok(list_images(dir)?
        .into_iter()
        .map(|p| ManifestEntry {
            tile: relative(root, &p),
            mask: mask_sibling(&p).map(|m| relative(root, &m)),
        })
        .collect())
}

fn crop_of(root: &Path, entries: &[ManifestEntry]) -> Result<usize> {
    let first = entries.first().ok_or_else(|| Error::EmptyDataset(root.display().to_string()))?;
    let path = root.join(&first.tile);
    let (w, h) = image::image_dimensions(&path).map_err(|e| Error::Image {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if w != h {
        return Err(Error::Shape(format!("tile {} is {w}x{h}, expected square", path.display())));
    }
    Ok(w as usize)
}

/// The labeled fine-tune subset of a pretrain manifest: a seeded shuffle of
/// its labeled entries, truncated to [`label_subset_size`] and put back in
/// manifest order.
pub fn finetune_subset(pretrain: &DatasetManifest, label_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("label fraction {label_fraction} outside (0, 1]")));
    }
    let entries = &pretrain.entries;
    let want = label_subset_size(entries.len(), label_fraction);
    let mut labeled: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].mask.is_some()).collect();
    if labeled.len() < want {
        return Err(Error::EmptyDataset(format!(
            "{want} labeled tiles requested for fine-tuning but only {} carry masks",
            labeled.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Separate stream from the test holdout draw.
    rng.set_stream(1);
    labeled.shuffle(&mut rng);
    let mut chosen = labeled[..want].to_vec();
    chosen.sort_unstable();
    Ok(DatasetManifest {
        split: Split::Finetune,
        label_fraction,
        seed,
        entries: chosen.into_iter().map(|i| entries[i].clone()).collect(),
        ..pretrain.clone()
    })
}

/// Build the pretrain / finetune / test manifests for a tile directory.
///
/// With `train/` and `test/` subdirectories those define the split; otherwise
/// a seeded holdout of labeled tiles becomes the test set. The fine-tune
/// subset is a seeded shuffle of the labeled pretrain tiles, so it never
/// overlaps the test split.
pub fn build_manifest(tile_dir: &Path, splits: &SplitSpec, label_fraction: f64, seed: u64) -> Result<ManifestSet> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("label fraction {label_fraction} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_dir, test_dir) = (tile_dir.join("train"), tile_dir.join("test"));
    let (pretrain, test) = if train_dir.is_dir() && test_dir.is_dir() {
        (scan(tile_dir, &train_dir)?, scan(tile_dir, &test_dir)?)
    } else {
        let all = scan(tile_dir, tile_dir)?;
        if all.is_empty() {
            return Err(Error::EmptyDataset(format!("no tiles in {}", tile_dir.display())));
        }
        let mut labeled: Vec<usize> = (0..all.len()).filter(|&i| all[i].mask.is_some()).collect();
        labeled.shuffle(&mut rng);
        let n_test = splits
            .test_count
            .unwrap_or_else(|| (labeled.len() as f64 * splits.test_fraction).round() as usize)
            .min(labeled.len());
        let mut is_test = vec![false; all.len()];
        for &i in &labeled[..n_test] {
            is_test[i] = true;
        }
        let (test, pretrain): (Vec<_>, Vec<_>) = all.into_iter().zip(is_test).partition(|(_, t)| *t);
        (
            pretrain.into_iter().map(|(e, _)| e).collect::<Vec<_>>(),
            test.into_iter().map(|(e, _)| e).collect::<Vec<_>>(),
        )
    };
    if pretrain.is_empty() {
        return Err(Error::EmptyDataset(format!("no pretraining tiles in {}", tile_dir.display())));
    }
    let crop_size = crop_of(tile_dir, &pretrain)?;

    let make = |split, entries| DatasetManifest {
        split,
        crop_size,
        label_fraction,
        seed,
        entries,
        root: tile_dir.to_path_buf(),
    };
    let pretrain = make(Split::Pretrain, pretrain);
    let finetune = finetune_subset(&pretrain, label_fraction, seed)?;
    Ok(ManifestSet {
        pretrain,
        finetune,
        test: make(Split::Test, test),
    })
}

impl ManifestSet {
    pub fn get(&self, split: Split) -> &DatasetManifest {
        match split {
            Split::Pretrain => &self.pretrain,
            Split::Finetune => &self.finetune,
            Split::Test => &self.test,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for split in Split::ALL {
            let m = self.get(split);
            let labeled = m.entries.iter().filter(|e| e.mask.is_some()).count();
            s.push_str(&format!("{split}\t{}\tlabeled={labeled}\n", m.len()));
        }
        s.push_str(&format!(
            "crop_size\t{}\nlabel_fraction\t{}\nseed\t{}\n",
            self.pretrain.crop_size, self.pretrain.label_fraction, self.pretrain.seed
        ));
        s
    }

    /// Write `<split>.txt` for each split plus `splits.txt` into the root
    /// directory the entries are relative to.
    pub fn write(&self) -> Result<()> {
        let root = &self.pretrain.root;
        for split in Split::ALL {
            let path = root.join(format!("{split}.txt"));
            std::fs::write(&path, self.get(split).to_text()).map_err(|e| Error::io(&path, e))?;
        }
        let path = root.join("splits.txt");
        std::fs::write(&path, self.summary()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let load = |s: Split| DatasetManifest::load(&root.join(format!("{s}.txt")));
        Ok(Self {
            pretrain: load(Split::Pretrain)?,
            finetune: load(Split::Finetune)?,
            test: load(Split::Test)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::write_scene;
    use crate::data::raster::RasterScene;

    fn fixture(n: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..n {
            let s = RasterScene::new(3, 8, 8, 8, vec![i as u16 % 255; 192])
                .unwrap()
                .with_mask(vec![0; 64])
                .unwrap();
            write_scene(dir.path(), &format!("t{i:04}"), &s).unwrap();
        }
        dir
    }

    #[test]
    fn subset_sizes_match_reported_counts() {
        assert_eq!(label_subset_size(13824, 0.01), 138);
        assert_eq!(label_subset_size(18248, 0.01), 182);
        assert_eq!(label_subset_size(250, 1.0), 250);
        assert_eq!(label_subset_size(20, 0.01), 1);
    }

    #[test]
    fn deterministic_disjoint_and_reloadable() {
        let dir = fixture(120);
        let spec = SplitSpec {
            test_fraction: 0.0,
            test_count: Some(20),
        };
        let a = build_manifest(dir.path(), &spec, 0.05, 3).unwrap();
        let b = build_manifest(dir.path(), &spec, 0.05, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.pretrain.len(), a.test.len(), a.finetune.len()), (100, 20, 5));
        assert_eq!(a.pretrain.crop_size, 8);
        for e in &a.finetune.entries {
            assert!(e.mask.is_some());
            assert!(!a.test.entries.contains(e));
        }
        a.write().unwrap();
        let text = std::fs::read_to_string(dir.path().join("finetune.txt")).unwrap();
        let back = ManifestSet::load(dir.path()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.finetune.to_text(), text);
        let c = build_manifest(dir.path(), &spec, 0.05, 4).unwrap();
        assert_ne!(c.finetune.entries, a.finetune.entries);
    }

    #[test]
    fn uses_train_and_test_subdirectories() {
        let dir = tempfile::tempdir().unwrap();
        for (sub, n) in [("train", 6), ("test", 2)] {
            std::fs::create_dir(dir.path().join(sub)).unwrap();
            for i in 0..n {
                let s = RasterScene::new(3, 4, 4, 8, vec![0; 48]).unwrap().with_mask(vec![1; 16]).unwrap();
                write_scene(&dir.path().join(sub), &format!("x{i}"), &s).unwrap();
            }
        }
        let m = build_manifest(dir.path(), &SplitSpec::default(), 1.0, 0).unwrap();
        assert_eq!((m.pretrain.len(), m.test.len(), m.finetune.len()), (6, 2, 6));
        assert!(m.test.entries[0].tile.starts_with("test/"));
    }

    #[test]
    fn rejects_bad_fraction_and_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_manifest(dir.path(), &SplitSpec::default(), 0.5, 0),
            Err(Error::EmptyDataset(_))
        ));
        for f in [0.0, 1.5, -0.1] {
            assert!(matches!(
                build_manifest(dir.path(), &SplitSpec::default(), f, 0),
                Err(Error::InvalidArgument(_))
            ));
        }
    }
}
