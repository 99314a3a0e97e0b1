//! IDX container (the MNIST distribution format): big-endian magic
//! `0x0000_08NN` where `NN` is the number of dimensions, big-endian `u32`
//! dimension sizes, then unsigned-byte payload.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    /// `0x00000801`
    Labels,
    /// `0x00000803`
    Images,
}

impl IdxKind {
    pub fn magic(self) -> u32 {
        match self {
            IdxKind::Labels => 0x0000_0801,
            IdxKind::Images => 0x0000_0803,
        }
    }

    fn ndims(self) -> usize {
        match self {
            IdxKind::Labels => 1,
            IdxKind::Images => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub kind: IdxKind,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset: offset as u64, message: message.into() })
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => format_err(offset, "file truncated inside the header"),
    }
}

/// Parse an IDX byte buffer that must be of the given kind.
pub fn read_idx(bytes: &[u8], kind: IdxKind) -> Result<IdxTensor> {
    let magic = read_u32(bytes, 0)?;
    if magic != kind.magic() {
        return format_err(0, format!("bad magic {magic:#010x}, expected {:#010x}", kind.magic()));
    }
    let mut dims = Vec::with_capacity(kind.ndims());
    for i in 0..kind.ndims() {
        dims.push(read_u32(bytes, 4 + 4 * i)?);
    }
    let header = 4 + 4 * kind.ndims();
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let Some(len) = len else {
        return format_err(4, "dimension product overflows");
    };
    let body = &bytes[header..];
    if body.len() < len {
        return format_err(bytes.len(), format!("payload truncated: need {len} bytes, found {}", body.len()));
    }
    if body.len() > len {
        return format_err(header + len, format!("{} trailing bytes after payload", body.len() - len));
    }
    Ok(IdxTensor { kind, dims, payload: body.to_vec() })
}

/// Serialize an IDX tensor.
pub fn write_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.payload.len());
    out.extend_from_slice(&t.kind.magic().to_be_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&t.payload);
    out
}

/// Load an image/label IDX pair as a dataset with pixels scaled to `[0, 1]`
/// and raw integer labels. Rows are not normalized.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_idx(&fs::read(images)?, IdxKind::Images)?;
    let lbl = read_idx(&fs::read(labels)?, IdxKind::Labels)?;
    if img.dims[0] != lbl.dims[0] {
        return format_err(4, format!("{} images but {} labels", img.dims[0], lbl.dims[0]));
    }
    let n = img.dims[0] as usize;
    let d = (img.dims[1] as usize) * (img.dims[2] as usize);
    let x = DMatrix::from_row_slice(n, d, &img.payload.iter().map(|&p| p as f64 / 255.0).collect::<Vec<_>>());
    let y = DVector::from_iterator(n, lbl.payload.iter().map(|&l| l as f64));
    Dataset::new(x, y)
}
