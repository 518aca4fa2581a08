//! Atomic file writes and PNG conversion.

use std::io::Write;
use std::path::Path;

use image::{ImageEncoder, RgbImage};
use ndarray::Array3;
use paircam_core::ImageTensor;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Input(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn load_image(path: &Path) -> CliResult<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| CliError::Input(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    Ok(rgb_to_tensor(&img)?.with_source(path.display().to_string()))
}

pub fn rgb_to_tensor(img: &RgbImage) -> CliResult<ImageTensor> {
    let (w, h) = img.dimensions();
    let data = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    });
    Ok(ImageTensor::new(data)?)
}

pub fn tensor_to_rgb(image: &ImageTensor) -> RgbImage {
    let d = image.data();
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let px = |c: usize| to_byte(d[[c, y as usize, x as usize]]);
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &RgbImage) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

pub fn write_png(path: &Path, img: &RgbImage) -> CliResult<()> {
    write_atomic(path, &encode_png(img)?)
}
