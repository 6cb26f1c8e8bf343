//! Portable float maps: `Pf` (one channel) or `PF` (three), little-endian only,
//! rows stored bottom-to-top.

use std::path::Path;

use thermosplat_core::image::Image;

use crate::error::{Error, Result};

const FORMAT: &str = "PFM";

/// Row-major, top row first, `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn from_image(img: &Image) -> Self {
        Self { width: img.width, height: img.height, channels: img.channels, data: img.data.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, channels: self.channels, data: self.data.iter().map(|&v| v as f64).collect() }
    }

    fn bits(&self) -> impl Iterator<Item = u32> + '_ {
        self.data.iter().map(|v| v.to_bits())
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &FloatImage) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels) && self.bits().eq(other.bits())
    }
}

pub fn write_pfm(img: &FloatImage) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Parse { format: FORMAT, offset: 0, message: format!("cannot store {c} channels") }),
    };
    if img.data.len() != img.width * img.height * img.channels {
        return Err(Error::Parse { format: FORMAT, offset: 0, message: String::from("sample count does not match dimensions") });
    }
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Header tokens are whitespace separated; exactly one whitespace byte ends the scale.
pub fn read_pfm(bytes: &[u8]) -> Result<FloatImage> {
    let err = |offset: usize, message: String| Error::Parse { format: FORMAT, offset, message };
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<(usize, String)> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos || *pos >= bytes.len() {
            return Err(err(start, String::from("unexpected end of header")));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
    };
    let (_, magic) = token(&mut pos)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(err(0, format!("bad magic `{magic}`"))),
    };
    let dim = |pos: &mut usize| -> Result<usize> {
        let (at, t) = token(pos)?;
        t.parse::<usize>().ok().filter(|&d| d > 0).ok_or_else(|| err(at, format!("bad dimension `{t}`")))
    };
    let width = dim(&mut pos)?;
    let height = dim(&mut pos)?;
    let (at, t) = token(&mut pos)?;
    let scale: f64 = t.parse().map_err(|_| err(at, format!("bad scale `{t}`")))?;
    if scale > 0.0 {
        return Err(Error::UnsupportedEndianness(FORMAT));
    }
    if !(scale < 0.0) {
        return Err(err(at, format!("scale must be non-zero, got `{t}`")));
    }
    let body = pos + 1;
    let n = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| err(body, String::from("dimensions overflow")))?;
    let need = n * 4;
    let have = bytes.len().saturating_sub(body);
    if have < need {
        return Err(err(bytes.len(), format!("truncated: need {need} bytes of samples, have {have}")));
    }
    if have > need {
        return Err(err(body + need, format!("{} trailing bytes", have - need)));
    }
    let row = width * channels;
    let mut data = vec![0.0f32; n];
    for (k, chunk) in bytes[body..].chunks_exact(4).enumerate() {
        let (file_row, col) = (k / row, k % row);
        data[(height - 1 - file_row) * row + col] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(FloatImage { width, height, channels, data })
}

pub fn save(path: &Path, img: &FloatImage) -> Result<()> {
    std::fs::write(path, write_pfm(img)?).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<FloatImage> {
    read_pfm(&std::fs::read(path).map_err(Error::io(path))?)
}
