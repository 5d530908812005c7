//! Portable float map (PFM) codec, color variant.
//!
//! Layout: `PF\n<width> <height>\n<scale>\n` followed by w*h*3 f32 samples,
//! scanlines bottom-to-top. A negative scale marks little-endian data; the
//! writer always emits scale -1.0. In-memory images are f64 and round to
//! f32 on write.

use crate::error::{Error, Result};
use crate::img::ImageBuf;

const MAX_DIM: u64 = 1 << 20;

pub fn encode(img: &ImageBuf) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + img.data.len() * 4);
    out.extend_from_slice(format!("PF\n{} {}\n-1.0\n", img.width, img.height).as_bytes());
    for row in (0..img.height).rev() {
        for x in 0..img.width {
            let p = img.pixel(x, row);
            for c in p {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    out
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n')
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.data.len() && is_ws(self.data[self.pos]) {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !is_ws(self.data[self.pos]) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("pfm: truncated header".into()));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| Error::Format("pfm: non-utf8 header token".into()))
    }

    /// The single whitespace byte separating the header from the samples.
    fn expect_ws(&mut self) -> Result<()> {
        if self.pos < self.data.len() && is_ws(self.data[self.pos]) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Format("pfm: missing separator before samples".into()))
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<ImageBuf> {
    let mut cur = Cursor { data: bytes, pos: 0 };
    let magic = cur.token()?;
    if magic != "PF" {
        return Err(Error::Format(format!("pfm: bad magic {magic:?}")));
    }
    let width: u64 = cur
        .token()?
        .parse()
        .map_err(|_| Error::Format("pfm: bad width".into()))?;
    let height: u64 = cur
        .token()?
        .parse()
        .map_err(|_| Error::Format("pfm: bad height".into()))?;
    let scale: f64 = cur
        .token()?
        .parse()
        .map_err(|_| Error::Format("pfm: bad scale".into()))?;
    cur.expect_ws()?;
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::Format(format!("pfm: unreasonable dimensions {width}x{height}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format("pfm: scale must be finite and nonzero".into()));
    }
    let count = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Format("pfm: dimension overflow".into()))?;
    let payload = &bytes[cur.pos..];
    let expected = (count as usize).checked_mul(4)
        .ok_or_else(|| Error::Format("pfm: dimension overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "pfm: payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let little_endian = scale < 0.0;
    let mut img = ImageBuf::new(width as u32, height as u32);
    let w = width as usize;
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let pixel = i / 3;
        let ch = i % 3;
        let x = pixel % w;
        let y_from_bottom = pixel / w;
        let y = height as usize - 1 - y_from_bottom;
        img.data[(y * w + x) * 3 + ch] = v as f64;
    }
    Ok(img)
}

pub fn write(path: &std::path::Path, img: &ImageBuf) -> Result<()> {
    std::fs::write(path, encode(img))?;
    Ok(())
}

pub fn read(path: &std::path::Path) -> Result<ImageBuf> {
    decode(&std::fs::read(path)?)
}
