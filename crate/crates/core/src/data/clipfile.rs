//! Single-clip binary files: magic, version, dtype, extents, payload, CRC32.

use std::path::Path;

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const CLIP_MAGIC: &[u8; 8] = b"AMVCLIP\0";
pub const CLIP_VERSION: u16 = 1;

pub fn encode_clip(clip: &Tensor<f32>) -> Vec<u8> {
    let shape = clip.shape();
    let mut out = Vec::with_capacity(16 + 4 * shape.len() + 4 * clip.numel());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    out.push(DType::F32 as u8);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let start = out.len();
    for v in clip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_clip(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    if bytes.len() < CLIP_MAGIC.len() && CLIP_MAGIC.starts_with(bytes) {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    let mut rd = Reader::new(bytes, path);
    let magic = rd.take(CLIP_MAGIC.len()).map_err(|_| Error::BadMagic(path.to_path_buf()))?;
    if magic != CLIP_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let version = rd.u16()?;
    if version != CLIP_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CLIP_VERSION,
        });
    }
    let tag = rd.u8()?;
    if tag != DType::F32 as u8 {
        return Err(rd.format(format!("clip dtype tag {tag} is not f32")));
    }
    let rank = rd.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(rd.u32()? as usize);
    }
    if rank == 0 || shape.contains(&0) {
        return Err(rd.format(format!("degenerate extents {shape:?}")));
    }
    let n: usize = shape.iter().product();
    let payload = rd.take(n * 4)?;
    let stored = rd.u32()?;
    if rd.remaining() != 0 {
        return Err(rd.format("trailing bytes after checksum"));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_clip(path: &Path, clip: &Tensor<f32>) -> Result<()> {
    binio::write_file(path, &encode_clip(clip))
}

pub fn read_clip(path: &Path) -> Result<Tensor<f32>> {
    decode_clip(&binio::read_file(path)?, path)
}

/// Reads a clip and checks its extents against what the manifest declares.
pub fn read_clip_expecting(path: &Path, expected: &[usize]) -> Result<Tensor<f32>> {
    let clip = read_clip(path)?;
    if clip.shape() != expected {
        return Err(Error::ExtentMismatch {
            path: path.to_path_buf(),
            found: clip.shape().to_vec(),
            expected: expected.to_vec(),
        });
    }
    Ok(clip)
}
