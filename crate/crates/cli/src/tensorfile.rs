//! Raw tensor files: `XAI1`, `u8` rank, `u32` dims, little-endian `f32` payload.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{CliError, CliResult};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"XAI1";

pub fn encode(tensor: &ArrayD<f32>) -> CliResult<Vec<u8>> {
    let ndim = tensor.ndim();
    if ndim > u8::MAX as usize {
        return Err(CliError::Input(format!("tensor rank {ndim} too large")));
    }
    let mut out = Vec::with_capacity(5 + 4 * ndim + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.push(ndim as u8);
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| CliError::Input(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    // iter() walks in logical row-major order regardless of memory layout
    for &v in tensor.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> CliResult<ArrayD<f32>> {
    let bad = |m: &str| CliError::Input(format!("bad tensor file: {m}"));
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(bad("missing XAI1 magic"));
    }
    let ndim = bytes[4] as usize;
    let header = 5 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() - header != count * 4 {
        return Err(bad(&format!(
            "payload has {} bytes, dims {:?} need {}",
            bytes.len() - header,
            dims,
            count * 4
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| bad(&e.to_string()))
}

pub fn write(path: &Path, tensor: &ArrayD<f32>) -> CliResult<()> {
    write_atomic(path, &encode(tensor)?)
}

pub fn read(path: &Path) -> CliResult<ArrayD<f32>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
