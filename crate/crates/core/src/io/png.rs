//! 8-bit grayscale PNG, values mapped from [0, 1].

use std::path::Path;

use image::{GrayImage, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Clamps to [0, 1] and quantizes to 8 bits, rounding half to even.
pub fn write_png(path: &Path, raster: &Raster) -> Result<()> {
    if !raster.is_finite() {
        return Err(Error::NonFinite(format!(
            "raster written to {}",
            path.display()
        )));
    }
    let (w, h) = raster.dims();
    let (w32, h32) = (
        u32::try_from(w).map_err(|_| Error::Parameter(format!("width {w} too large for PNG")))?,
        u32::try_from(h).map_err(|_| Error::Parameter(format!("height {h} too large for PNG")))?,
    );
    let img = GrayImage::from_fn(w32, h32, |x, y| {
        let v = raster.get(x as usize, y as usize).clamp(0.0, 1.0);
        Luma([(v * 255.0).round_ties_even() as u8])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

/// Reads any PNG as 8-bit luma, scaled to [0, 1].
pub fn read_png(path: &Path) -> Result<Raster> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Raster::from_vec(
        w,
        h,
        img.into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
    )
}
