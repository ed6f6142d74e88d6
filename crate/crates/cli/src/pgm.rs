//! Binary greyscale (P5) images.

use std::path::Path;

use amvc_core::{Error, Result};

/// `floor(v·255 + 0.5)` after clamping to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    (f64::from(v).clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let pixels: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    std::fs::write(path, encode(width, height, &pixels)).map_err(|e| Error::io(path, e))
}
