//! 8-bit PNG reading and writing.

use std::io::Cursor;
use std::path::Path;

use thermosplat_core::image::Image;

use crate::error::{Error, Result};

/// `[0, 1]` to 8 bits, rounding to nearest; out-of-range values are clamped.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode an RGB image with samples in `[0, 1]`.
pub fn encode_rgb(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::Png(format!("expected 3 channels, got {}", img.channels)));
    }
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    encode_rgb8(img.width, img.height, &bytes)
}

pub fn encode_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(Cursor::new(&mut out), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    w.write_image_data(rgb).map_err(|e| Error::Png(e.to_string()))?;
    w.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(out)
}

/// Decode to a 3-channel image in `[0, 1]`. Gray is replicated, alpha dropped, 16-bit reduced to 8.
pub fn decode_rgb(bytes: &[u8]) -> Result<Image> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src = info.color_type.samples();
    let data = &buf[..info.buffer_size()];
    Ok(Image::from_fn(w, h, 3, |x, y, c| {
        let p = (y * w + x) * src;
        let k = if src < 3 { 0 } else { c };
        data[p + k] as f64 / 255.0
    }))
}

pub fn save_rgb(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_rgb(img)?).map_err(Error::io(path))
}

pub fn load_rgb(path: &Path) -> Result<Image> {
    decode_rgb(&std::fs::read(path).map_err(Error::io(path))?)
}
