//! Scene ingestion, tiling, split manifests and synthetic scenes.

pub mod io;
pub mod manifest;
pub mod raster;
pub mod synthetic;
pub mod tiling;

pub use io::{list_images, mask_sibling, read_mask, read_scene, write_scene};
pub use manifest::{finetune_subset, build_manifest, label_subset_size, DatasetManifest, ManifestEntry, ManifestSet, Split, SplitSpec};
pub use raster::{default_band_names, RasterScene};
pub use synthetic::{default_textures, generate_scene, generate_synthetic_dataset, ClassTexture, SyntheticSceneSpec, SyntheticSummary};
pub use tiling::{grid_len, stitch_tiles, tile_raster, Tile};
