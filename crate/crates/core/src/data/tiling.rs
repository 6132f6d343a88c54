use super::raster::RasterScene;
use crate::error::{Error, Result};

/// One `crop x crop` window of a scene; `row`/`col` are grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub top: usize,
    pub left: usize,
    pub scene: RasterScene,
}

/// Number of tiles along an axis of length `len`.
pub fn grid_len(len: usize, crop: usize, stride: usize) -> usize {
    if len < crop {
        0
    } else {
        (len - crop) / stride + 1
    }
}

/// Cut a scene into fixed-size tiles in row-major grid order. Remainder pixels
/// past the last full tile are dropped.
pub fn tile_raster(scene: &RasterScene, crop: usize, stride: usize) -> Result<Vec<Tile>> {
    if stride == 0 || crop == 0 {
        return Err(Error::InvalidArgument("crop size and stride must be >= 1".into()));
    }
    if scene.height < crop || scene.width < crop {
        return Err(Error::SceneTooSmall {
            height: scene.height,
            width: scene.width,
            crop,
        });
    }
    let rows = grid_len(scene.height, crop, stride);
    let cols = grid_len(scene.width, crop, stride);
    let mut tiles = Vec::with_capacity(rows * cols);
    for gr in 0..rows {
        for gc in 0..cols {
            let (top, left) = (gr * stride, gc * stride);
            let mut pixels = Vec::with_capacity(scene.channels * crop * crop);
            for ch in 0..scene.channels {
                let plane = &scene.pixels[ch * scene.height * scene.width..(ch + 1) * scene.height * scene.width];
                for r in top..top + crop {
                    pixels.extend_from_slice(&plane[r * scene.width + left..r * scene.width + left + crop]);
                }
            }
            let mut tile = RasterScene::new(scene.channels, crop, crop, scene.bit_depth, pixels)?;
            tile.channel_names = scene.channel_names.clone();
            tile.nodata_value = scene.nodata_value;
            if let Some(mask) = &scene.mask {
                let mut m = Vec::with_capacity(crop * crop);
                for r in top..top + crop {
                    m.extend_from_slice(&mask[r * scene.width + left..r * scene.width + left + crop]);
                }
                tile = tile.with_mask(m)?;
            }
            tiles.push(Tile {
                row: gr,
                col: gc,
                top,
                left,
                scene: tile,
            });
        }
    }
    Ok(tiles)
}

/// Reassemble non-overlapping tiles into the grid-covered part of the scene.
pub fn stitch_tiles(tiles: &[Tile]) -> Result<RasterScene> {
    let first = tiles.first().ok_or_else(|| Error::InvalidArgument("no tiles to stitch".into()))?;
    let crop = first.scene.height;
    let rows = tiles.iter().map(|t| t.row).max().unwrap_or(0) + 1;
    let cols = tiles.iter().map(|t| t.col).max().unwrap_or(0) + 1;
    let (h, w, c) = (rows * crop, cols * crop, first.scene.channels);
    let mut pixels = vec![0u16; c * h * w];
    let mut mask = first.scene.mask.as_ref().map(|_| vec![0u8; h * w]);
    for t in tiles {
        for ch in 0..c {
            for r in 0..crop {
                let src = &t.scene.pixels[(ch * crop + r) * crop..(ch * crop + r + 1) * crop];
                let dst = (ch * h + t.row * crop + r) * w + t.col * crop;
                pixels[dst..dst + crop].copy_from_slice(src);
            }
        }
        if let (Some(m), Some(tm)) = (mask.as_mut(), t.scene.mask.as_ref()) {
            for r in 0..crop {
                let dst = (t.row * crop + r) * w + t.col * crop;
                m[dst..dst + crop].copy_from_slice(&tm[r * crop..(r + 1) * crop]);
            }
        }
    }
    let scene = RasterScene::new(c, h, w, first.scene.bit_depth, pixels)?;
    match mask {
        Some(m) => scene.with_mask(m),
        None => Ok(scene),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(h: usize, w: usize) -> RasterScene {
        let pixels = (0..3 * h * w).map(|i| (i % 65521) as u16).collect();
        RasterScene::new(3, h, w, 16, pixels)
            .unwrap()
            .with_mask((0..h * w).map(|i| (i % 5) as u8).collect())
            .unwrap()
    }

    fn enumerate_windows(h: usize, w: usize, crop: usize, stride: usize) -> usize {
        let mut n = 0;
        let mut top = 0;
        while top + crop <= h {
            let mut left = 0;
            while left + crop <= w {
                n += 1;
                left += stride;
            }
            top += stride;
        }
        n
    }

    #[test]
    fn grid_counts_match_enumeration() {
        assert_eq!(grid_len(6000, 256, 256).pow(2), 529);
        assert_eq!(enumerate_windows(6000, 6000, 256, 256), 529);
        assert_eq!(grid_len(2448, 512, 512).pow(2), 16);
        assert_eq!(enumerate_windows(2448, 2448, 512, 512), 16);
        for &(h, w, c, s) in &[(100, 70, 32, 16), (64, 64, 64, 1), (99, 130, 17, 5)] {
            assert_eq!(grid_len(h, c, s) * grid_len(w, c, s), enumerate_windows(h, w, c, s));
        }
    }

    #[test]
    fn exact_fit_is_identity() {
        let s = scene(256, 256);
        let tiles = tile_raster(&s, 256, 256).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].scene, s);
    }

    #[test]
    fn tiles_have_requested_size_and_row_major_order() {
        let s = scene(100, 70);
        let tiles = tile_raster(&s, 32, 16).unwrap();
        assert_eq!(tiles.len(), grid_len(100, 32, 16) * grid_len(70, 32, 16));
        assert!(tiles.iter().all(|t| t.scene.height == 32 && t.scene.width == 32));
        let order: Vec<(usize, usize)> = tiles.iter().map(|t| (t.row, t.col)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
    }

    #[test]
    fn stitching_reconstructs_the_grid_area() {
        let s = scene(100, 70);
        let tiles = tile_raster(&s, 32, 32).unwrap();
        let back = stitch_tiles(&tiles).unwrap();
        assert_eq!((back.height, back.width), (96, 64));
        for ch in 0..3 {
            for r in 0..96 {
                for c in 0..64 {
                    assert_eq!(back.pixels[(ch * 96 + r) * 64 + c], s.pixels[(ch * 100 + r) * 70 + c]);
                }
            }
        }
        assert_eq!(back.mask.as_ref().unwrap()[5 * 64 + 7], s.mask.as_ref().unwrap()[5 * 70 + 7]);
    }

    #[test]
    fn rejects_small_scene() {
        let err = tile_raster(&scene(100, 300), 128, 128).unwrap_err();
        assert!(matches!(err, Error::SceneTooSmall { height: 100, width: 300, crop: 128 }));
        assert!(err.to_string().contains("100x300"));
    }
}
