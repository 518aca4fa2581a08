//! Heatmap overlays, strips and grids.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use paircam_core::ImageTensor;

use crate::io::{tensor_to_rgb, to_byte};

pub const OVERLAY_ALPHA: f32 = 0.5;
const GAP: u32 = 2;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

/// Jet colormap: blue for 0, red for 1.
pub fn jet(v: f32) -> [f32; 3] {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let ch = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

fn unit_range(map: &Array2<f32>) -> Array2<f32> {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi > lo {
        map.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::zeros(map.raw_dim())
    }
}

pub fn heatmap(map: &Array2<f32>) -> RgbImage {
    let m = unit_range(map);
    let (h, w) = m.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let c = jet(m[[y as usize, x as usize]]);
        Rgb([to_byte(c[0]), to_byte(c[1]), to_byte(c[2])])
    })
}

/// Blends the jet-coloured map over the image at [`OVERLAY_ALPHA`]. The map
/// must have the image's spatial size.
pub fn overlay(image: &ImageTensor, map: &Array2<f32>) -> RgbImage {
    let m = unit_range(map);
    let d = image.data();
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let (xi, yi) = (x as usize, y as usize);
        let c = jet(m[[yi, xi]]);
        let mix = |k: usize| to_byte((1.0 - OVERLAY_ALPHA) * d[[k, yi, xi]] + OVERLAY_ALPHA * c[k]);
        Rgb([mix(0), mix(1), mix(2)])
    })
}

/// Lays tiles out on a grid; `rows[r][c]` is the tile at row `r`, column `c`.
pub fn grid(rows: &[Vec<RgbImage>]) -> RgbImage {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0) as u32;
    let tw = rows.iter().flatten().map(|t| t.width()).max().unwrap_or(1);
    let th = rows.iter().flatten().map(|t| t.height()).max().unwrap_or(1);
    let w = cols * tw + cols.saturating_sub(1) * GAP;
    let h = rows.len() as u32 * th + (rows.len() as u32).saturating_sub(1) * GAP;
    let mut out = RgbImage::from_pixel(w.max(1), h.max(1), BACKGROUND);
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            image::imageops::replace(
                &mut out,
                tile,
                (c as u32 * (tw + GAP)) as i64,
                (r as u32 * (th + GAP)) as i64,
            );
        }
    }
    out
}

pub fn strip(tiles: Vec<RgbImage>) -> RgbImage {
    grid(&[tiles])
}

/// A tile with a horizontal bar below it whose length encodes `value` in `[lo, hi]`.
pub fn with_score_bar(tile: &RgbImage, value: f32, lo: f32, hi: f32) -> RgbImage {
    let bar = 4u32;
    let mut out = RgbImage::from_pixel(tile.width(), tile.height() + bar, BACKGROUND);
    image::imageops::replace(&mut out, tile, 0, 0);
    let frac = if hi > lo { ((value - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let filled = (frac * tile.width() as f32).round() as u32;
    for y in tile.height() + 1..tile.height() + bar {
        for x in 0..filled {
            out.put_pixel(x, y, Rgb([200, 30, 30]));
        }
    }
    out
}

pub fn image_tile(image: &ImageTensor) -> RgbImage {
    tensor_to_rgb(image)
}

/// Table of values rendered as coloured cells, `cell` pixels on a side.
/// Missing values are drawn grey.
pub fn heatmap_table(values: &[Vec<Option<f32>>], cell: u32) -> RgbImage {
    let rows = values.len() as u32;
    let cols = values.iter().map(|r| r.len()).max().unwrap_or(0) as u32;
    let mut out = RgbImage::from_pixel((cols * cell).max(1), (rows * cell).max(1), BACKGROUND);
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let color = match v {
                Some(v) => {
                    let j = jet(*v);
                    Rgb([to_byte(j[0]), to_byte(j[1]), to_byte(j[2])])
                }
                None => Rgb([128, 128, 128]),
            };
            for y in 0..cell.saturating_sub(1) {
                for x in 0..cell.saturating_sub(1) {
                    out.put_pixel(c as u32 * cell + x, r as u32 * cell + y, color);
                }
            }
        }
    }
    out
}
