use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb, Rgba};

use super::raster::RasterScene;
use crate::error::{Error, Result};

const MASK_SUFFIX: &str = "_mask";
const IMAGE_EXTENSIONS: &[&str] = &["png", "tif", "tiff"];

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn is_mask(path: &Path) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.ends_with(MASK_SUFFIX))
        .unwrap_or(false)
}

/// The `<stem>_mask.<ext>` sibling of an image, if one exists on disk.
pub fn mask_sibling(path: &Path) -> Option<PathBuf> {
    let stem = path.file_stem()?.to_str()?;
    let dir = path.parent().unwrap_or(Path::new(""));
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}{MASK_SUFFIX}.{ext}")))
        .find(|p| p.is_file())
}

/// Image files directly inside `dir`, excluding masks, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) && !is_mask(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Read a 3- or 4-band 8/16-bit image, attaching its `_mask` sibling if present.
pub fn read_scene(path: &Path) -> Result<RasterScene> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    let channels = if img.color().has_alpha() { 4 } else { 3 };
    let interleaved: Vec<u16> = match (sixteen, channels) {
        (false, 3) => img.to_rgb8().into_raw().into_iter().map(u16::from).collect(),
        (false, _) => img.to_rgba8().into_raw().into_iter().map(u16::from).collect(),
        (true, 3) => img.to_rgb16().into_raw(),
        (true, _) => img.to_rgba16().into_raw(),
    };
    let mut pixels = vec![0u16; channels * h * w];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            pixels[c * h * w + i] = v;
        }
    }
    let scene = RasterScene::new(channels, h, w, if sixteen { 16 } else { 8 }, pixels)?;
    match mask_sibling(path) {
        Some(mp) => {
            let mask = read_mask(&mp)?;
            scene.with_mask(mask).map_err(|_| image_err(&mp, format!("mask size differs from {}", path.display())))
        }
        None => Ok(scene),
    }
}

pub fn read_mask(path: &Path) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(img.to_luma8().into_raw())
}

/// Write a scene as `<dir>/<stem>.png` (4th band in the alpha channel) and,
/// when it carries a mask, `<dir>/<stem>_mask.png`.
pub fn write_scene(dir: &Path, stem: &str, scene: &RasterScene) -> Result<(PathBuf, Option<PathBuf>)> {
    let path = dir.join(format!("{stem}.png"));
    let (w, h, c) = (scene.width as u32, scene.height as u32, scene.channels);
    let plane = scene.height * scene.width;
    let interleaved = (0..plane).flat_map(|i| (0..c).map(move |ch| ch * plane + i));
    let saved = if scene.bit_depth == 8 {
        let raw: Vec<u8> = interleaved.map(|j| scene.pixels[j] as u8).collect();
        if c == 3 {
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).map(|b| b.save(&path))
        } else {
            ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, raw).map(|b| b.save(&path))
        }
    } else {
        let raw: Vec<u16> = interleaved.map(|j| scene.pixels[j]).collect();
        if c == 3 {
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).map(|b| b.save(&path))
        } else {
            ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, raw).map(|b| b.save(&path))
        }
    };
    saved
        .ok_or_else(|| Error::Shape(format!("pixel buffer does not fit {w}x{h}x{c}")))?
        .map_err(|e| image_err(&path, e))?;
    let mask_path = match &scene.mask {
        Some(mask) => {
            let mp = dir.join(format!("{stem}{MASK_SUFFIX}.png"));
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, mask.clone())
                .ok_or_else(|| Error::Shape("mask does not fit the scene".into()))?
                .save(&mp)
                .map_err(|e| image_err(&mp, e))?;
            Some(mp)
        }
        None => None,
    };
    Ok((path, mask_path))
}
