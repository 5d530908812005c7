//! 8-bit PNG previews of float images (clamped linear values, no gamma).

use std::path::Path;

use crate::error::{Error, Result};
use crate::img::ImageBuf;

pub fn write(path: &Path, img: &ImageBuf) -> Result<()> {
    let mut out = image::RgbImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            let q = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            out.put_pixel(x, y, image::Rgb(q));
        }
    }
    out.save(path)
        .map_err(|e| Error::Format(format!("png write {}: {e}", path.display())))
}
