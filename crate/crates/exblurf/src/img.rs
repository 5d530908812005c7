//! Float RGB image buffer shared by the renderer, metrics, and file
//! formats. Values are f64 in memory; the on-disk PFM format is f32.

use crate::error::{Error, Result};

/// Row-major interleaved RGB, f64 per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: u32, height: u32) -> Self {
        ImageBuf {
            width,
            height,
            data: vec![0.0; (width * height * 3) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) * 3 {
            return Err(Error::invalid("image data length does not match dimensions"));
        }
        Ok(ImageBuf { width, height, data })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn same_dims(&self, other: &ImageBuf) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mean magnitude of forward differences, a cheap sharpness proxy.
    pub fn mean_gradient_magnitude(&self) -> f64 {
        let (w, h) = (self.width as usize, self.height as usize);
        if w < 2 || h < 2 {
            return 0.0;
        }
        let mut total = 0.0f64;
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                let here = self.pixel(x as u32, y as u32);
                if x + 1 < w {
                    let right = self.pixel(x as u32 + 1, y as u32);
                    for c in 0..3 {
                        total += (right[c] - here[c]).abs();
                        count += 1;
                    }
                }
                if y + 1 < h {
                    let down = self.pixel(x as u32, y as u32 + 1);
                    for c in 0..3 {
                        total += (down[c] - here[c]).abs();
                        count += 1;
                    }
                }
            }
        }
        total / count as f64
    }
}
