use std::io::Write;
use std::path::Path;

use super::grid::GrayImage;
use crate::error::{Error, Result};

/// Reads an 8-bit grayscale PGM or PNG (other depths are converted to 8-bit
/// luma first).
pub fn read_gray_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    GrayImage::from_u8(h as usize, w as usize, luma.as_raw())
}

/// Writes a binary (P5) portable graymap.
pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend_from_slice(&img.to_u8());
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
