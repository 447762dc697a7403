use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::ImageFormat;
use splatforge_core::image::RgbImage;

use crate::error::{Error, Result};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes PNG or JPEG into 8-bit RGB, dropping alpha.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_raw(w as usize, h as usize, img.into_raw())?)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.as_raw().to_vec())
        .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| image_err(Path::new("<png>"), e))?;
    Ok(out.into_inner())
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    crate::ply::write_bytes(path, &encode_png(img)?)
}
