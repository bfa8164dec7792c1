//! 8-bit grayscale PNG previews.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{IoContext, Result};

/// Gap around and between panels, in pixels.
pub const PANEL_MARGIN: u32 = 4;
const MARGIN_SHADE: u8 = 40;

/// Scales `data` so its peak maps to 255; negative values clip to 0.
fn to_gray(data: &[f64]) -> Vec<u8> {
    let peak = data.iter().copied().fold(0.0, f64::max);
    data.iter()
        .map(|v| {
            if peak > 0.0 {
                (v / peak * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// Single peak-scaled `n×n` map.
pub fn map_image(data: &[f64], n: usize) -> GrayImage {
    GrayImage::from_raw(n as u32, n as u32, to_gray(data)).expect("n*n pixels")
}

/// Maps laid side by side, each peak-scaled on its own, with
/// [`PANEL_MARGIN`] pixels around and between them: `k·n + (k+1)·m` wide
/// and `n + 2m` tall.
pub fn panel_image(maps: &[&[f64]], n: usize) -> GrayImage {
    let m = PANEL_MARGIN;
    let k = maps.len() as u32;
    let side = n as u32;
    let mut img = GrayImage::from_pixel(k * side + (k + 1) * m, side + 2 * m, Luma([MARGIN_SHADE]));
    for (i, map) in maps.iter().enumerate() {
        let x0 = m + i as u32 * (side + m);
        for (j, g) in to_gray(map).into_iter().enumerate() {
            let (r, c) = ((j / n) as u32, (j % n) as u32);
            img.put_pixel(x0 + c, m + r, Luma([g]));
        }
    }
    img
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)?;
    std::fs::write(path, bytes.into_inner()).at(path)
}
