//! IDX (MNIST) image and label files.
//!
//! Images: big-endian header `0x00000803, count, rows, cols` followed by
//! `count·rows·cols` unsigned bytes. Labels: `0x00000801, count` then bytes.
//! Pixel bytes are scaled to `[0, 1]` by dividing by 255.

use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses an in-memory IDX3 image file.
pub fn read_idx(bytes: &[u8], source_name: &str) -> Result<Vec<Image>> {
    if bytes.len() < 16 {
        return Err(Error::format(source_name, "truncated IDX header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            source_name,
            format!("bad IDX image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"),
        ));
    }
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    if rows != cols || rows == 0 {
        return Err(Error::format(
            source_name,
            format!("only non-empty square images are supported, got {rows}x{cols}"),
        ));
    }
    let per_image = rows * cols;
    let needed = 16 + count * per_image;
    if bytes.len() < needed {
        return Err(Error::format(
            source_name,
            format!("truncated IDX body: need {needed} bytes, have {}", bytes.len()),
        ));
    }
    bytes[16..needed]
        .chunks_exact(per_image)
        .map(|chunk| Image::new(rows, 1, chunk.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect()
}

/// Loads every image of an IDX3 file.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_idx(&bytes, &path.display().to_string())
}

/// Loads an IDX1 label file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(&name, "truncated IDX header"));
    }
    let magic = be_u32(&bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(Error::format(&name, format!("bad IDX label magic 0x{magic:08x}")));
    }
    let count = be_u32(&bytes, 4) as usize;
    if bytes.len() < 8 + count {
        return Err(Error::format(&name, "truncated IDX label body"));
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Encodes single-channel images as IDX3, quantizing to the nearest byte.
pub fn write_idx(images: &[Image]) -> Result<Vec<u8>> {
    let width = images.first().map_or(0, Image::width);
    if images.iter().any(|im| im.width() != width || im.channels() != 1) {
        return Err(Error::Argument(
            "IDX output needs single-channel images of one common width".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + images.len() * width * width);
    for v in [IMAGE_MAGIC, images.len() as u32, width as u32, width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        out.extend(im.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}
