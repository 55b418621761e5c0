//! 8-bit RGB PNG input/output. Pixels map to `[0, 1]` by dividing by 255, so a
//! load/save round trip is exact at u8 resolution and any float round trip
//! stays within 1/255.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Loads an 8-bit RGB PNG as an HWC tensor in `[0, 1]`.
pub fn load_png<T: Real>(path: &Path) -> Result<Array3<T>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[(y as usize, x as usize, c)] = T::f(p.0[c] as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Saves an HWC tensor as an 8-bit RGB PNG. Values are clamped to `[0, 1]`
/// and rounded to the nearest u8 level.
pub fn save_png<T: Real>(path: &Path, img: &Array3<T>) -> Result<()> {
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::Dimension(format!(
            "save_png expects 3 channels, got {c}"
        )));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let v = img[(y, x, ch)].as_f64().clamp(0.0, 1.0);
                px[ch] = (v * 255.0).round() as u8;
            }
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::image(path, e))
}

/// Quantizes a tensor to the u8 grid in place (what a PNG round trip does).
pub fn quantize_u8<T: Real>(img: &mut Array3<T>) {
    img.mapv_inplace(|v| {
        let q = (v.as_f64().clamp(0.0, 1.0) * 255.0).round() / 255.0;
        T::f(q)
    });
}
