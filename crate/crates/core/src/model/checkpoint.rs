//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PCAM" | u16 version | u32 config_len | config JSON
//!        | u32 blob_count | blob*
//! blob = u16 name_len | name utf-8 | u32 n_floats | f32 * n_floats
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Array4};

use super::layers::{Conv2d, Layer, Linear};
use super::toy::{ContrastiveModel, ToyModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCAM";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn save_checkpoint(model: &ContrastiveModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config())
        .map_err(|e| Error::Argument(format!("config serialization failed: {e}")))?;
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    let names = model.layer_names();
    buf.extend_from_slice(&((2 * names.len()) as u32).to_le_bytes());
    for (name, layer) in names.iter().zip(model.layers()) {
        write_blob(&mut buf, &format!("{name}.weight"), layer.weight_slice());
        write_blob(&mut buf, &format!("{name}.bias"), layer.bias_slice());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_blob(buf: &mut Vec<u8>, name: &str, data: &[f32]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointCorrupted(format!(
                "unexpected end of file at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ContrastiveModel> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::CheckpointMissing(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    parse_checkpoint(&bytes)
}

pub(crate) fn parse_checkpoint(bytes: &[u8]) -> Result<ContrastiveModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointCorrupted("bad magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config_len = r.u32()? as usize;
    let config: ToyModelConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| Error::CheckpointCorrupted(format!("config block: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::CheckpointCorrupted(format!("config block: {e}")))?;
    let blob_count = r.u32()? as usize;
    let mut blobs = std::collections::HashMap::new();
    for _ in 0..blob_count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CheckpointCorrupted("blob name is not utf-8".into()))?
            .to_string();
        let n = r.u32()? as usize;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| {
            Error::CheckpointCorrupted("blob length overflow".into())
        })?)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        blobs.insert(name, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointCorrupted("trailing bytes after last blob".into()));
    }

    // Shapes come from a freshly built reference model.
    let reference = ContrastiveModel::new(config.clone())?;
    let mut layers = Vec::new();
    for (name, layer) in reference.layer_names().iter().zip(reference.layers()) {
        let mut fetch = |suffix: &str, expected: usize| -> Result<Vec<f32>> {
            let key = format!("{name}.{suffix}");
            let v = blobs
                .remove(&key)
                .ok_or_else(|| Error::CheckpointCorrupted(format!("missing blob {key}")))?;
            if v.len() != expected {
                return Err(Error::CheckpointCorrupted(format!(
                    "blob {key} has {} values, expected {expected}",
                    v.len()
                )));
            }
            Ok(v)
        };
        let w = fetch("weight", layer.weight_slice().len())?;
        let b = fetch("bias", layer.bias_slice().len())?;
        layers.push(match layer {
            Layer::Conv(c) => Layer::Conv(Conv2d {
                weight: Array4::from_shape_vec(c.weight.dim(), w).expect("shape"),
                bias: Array1::from(b),
                stride: c.stride,
            }),
            Layer::Linear(l) => Layer::Linear(Linear {
                weight: Array2::from_shape_vec(l.weight.dim(), w).expect("shape"),
                bias: Array1::from(b),
            }),
        });
    }
    if let Some(extra) = blobs.keys().next() {
        return Err(Error::CheckpointCorrupted(format!("unknown blob {extra}")));
    }
    ContrastiveModel::from_parts(config, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;
    use crate::model::SimilarityModel;

    fn model() -> ContrastiveModel {
        ContrastiveModel::new(ToyModelConfig {
            init_seed: 9,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pcam");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(m, back);
        let img = ImageTensor::filled(32, 32, [0.3, 0.6, 0.9]);
        assert_eq!(m.encode(&img).unwrap(), back.encode(&img).unwrap());
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pcam");
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointMissing(_))));

        save_checkpoint(&model(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        let truncated = &bytes[..bytes.len() - 7];
        assert!(matches!(parse_checkpoint(truncated), Err(Error::CheckpointCorrupted(_))));

        let mut versioned = bytes.clone();
        versioned[4..6].copy_from_slice(&7u16.to_le_bytes());
        match parse_checkpoint(&versioned) {
            Err(Error::CheckpointVersion { found, expected }) => {
                assert_eq!((found, expected), (7, CHECKPOINT_VERSION));
                let msg = parse_checkpoint(&versioned).unwrap_err().to_string();
                assert!(msg.contains('7') && msg.contains('1'));
            }
            other => panic!("expected version error, got {other:?}"),
        }

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(parse_checkpoint(&bad_magic), Err(Error::CheckpointCorrupted(_))));
    }
}
