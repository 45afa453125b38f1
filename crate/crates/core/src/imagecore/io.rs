use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::{BitDepth, GrayImage};
use crate::error::{Error, Result};

/// Reads an 8- or 16-bit grayscale PNG. Colour images are converted to luma.
pub fn load_png(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (pixels, depth): (Vec<f64>, BitDepth) = match img {
        DynamicImage::ImageLuma8(buf) => (
            buf.into_raw()
                .into_iter()
                .map(|v| v as f64 / 255.0)
                .collect(),
            BitDepth::Eight,
        ),
        other => (
            other
                .into_luma16()
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
            BitDepth::Sixteen,
        ),
    };
    Ok(GrayImage::new(w, h, pixels)?.with_bit_depth(depth))
}

/// Writes a grayscale PNG at the image's bit depth.
pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let max = img.bit_depth().max_code();
    let quantize = |p: f64| (p * max).round();
    match img.bit_depth() {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.pixels().iter().map(|&p| quantize(p) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
                .expect("buffer length matches dims")
                .save(path)?;
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.pixels().iter().map(|&p| quantize(p) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
                .expect("buffer length matches dims")
                .save(path)?;
        }
    }
    Ok(())
}
