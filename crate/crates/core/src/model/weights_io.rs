//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SDNW"                      magic, 4 bytes
//! u16                         format version
//! u32 + UTF-8                 network spec manifest (key=value lines)
//! per layer, in forward order:
//!   u32 + UTF-8               layer id
//!   u32 + f32 * n             weights
//!   u32 + f32 * n             bias
//! u32                         CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::network::{layer_layout, WeightStore};
use super::{ModelError, NetworkSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SDNW";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum WeightIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a weight file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported weight format version {found} (this build reads {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("weight file truncated ({0})")]
    Truncated(&'static str),
    #[error("weight file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("weight file is for {found} landmarks, expected {expected}")]
    LandmarkMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn weights_to_bytes(ws: &WeightStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(ws.param_count() * 4 + 256);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_bytes(&mut out, ws.spec().to_manifest().as_bytes());
    for layer in ws.layers() {
        put_bytes(&mut out, layer.id.as_bytes());
        put_floats(&mut out, layer.params.weights().data());
        put_floats(&mut out, layer.params.bias().data());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_floats(out: &mut Vec<u8>, values: &[f32]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightIoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(WeightIoError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, WeightIoError> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| WeightIoError::Malformed(format!("{what} is not UTF-8")))
    }

    fn floats(&mut self, expected: usize, what: &'static str) -> Result<Vec<f32>, WeightIoError> {
        let n = self.u32(what)? as usize;
        if n != expected {
            return Err(WeightIoError::Malformed(format!(
                "{what}: expected {expected} values, found {n}"
            )));
        }
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a weight file image. Checks run in order: magic, version, checksum,
/// then structure.
pub fn weights_from_bytes(bytes: &[u8]) -> Result<WeightStore, WeightIoError> {
    if bytes.len() < MAGIC.len() {
        return Err(WeightIoError::Truncated("magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(WeightIoError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(WeightIoError::Truncated("header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(WeightIoError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(WeightIoError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader {
        buf: body,
        pos: HEADER_LEN,
    };
    let manifest = r.string("spec manifest")?;
    let spec = NetworkSpec::from_manifest(&manifest).map_err(WeightIoError::Malformed)?;
    spec.validate()?;
    let mut params = Vec::new();
    for (id, shape, _) in layer_layout(&spec) {
        let found = r.string("layer id")?;
        if found != id {
            return Err(WeightIoError::Malformed(format!(
                "expected layer {id}, found {found}"
            )));
        }
        let w = r.floats(shape.iter().product(), "weights")?;
        let b = r.floats(shape[0], "bias")?;
        params.push((
            id,
            Tensor::new(shape.clone(), w).map_err(ModelError::from)?,
            Tensor::new([shape[0]], b).map_err(ModelError::from)?,
        ));
    }
    if r.pos != body.len() {
        return Err(WeightIoError::Malformed(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok(WeightStore::from_parts(spec, params)?)
}

/// Writes atomically (temporary file, then rename).
pub fn save_weights(ws: &WeightStore, path: impl AsRef<Path>) -> Result<(), WeightIoError> {
    let path = path.as_ref();
    let io = |source| WeightIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, weights_to_bytes(ws)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore, WeightIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    weights_from_bytes(&bytes)
}

/// [`load_weights`] plus a check that the network predicts `n_landmarks` points.
pub fn load_weights_expecting(
    path: impl AsRef<Path>,
    n_landmarks: usize,
) -> Result<WeightStore, WeightIoError> {
    let ws = load_weights(path)?;
    if ws.spec().n_landmarks != n_landmarks {
        return Err(WeightIoError::LandmarkMismatch {
            expected: n_landmarks,
            found: ws.spec().n_landmarks,
        });
    }
    Ok(ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, GroupSpec};

    fn small() -> WeightStore {
        build_network(&NetworkSpec {
            input_side: 16,
            n_landmarks: 3,
            groups: vec![GroupSpec::new(3, 2, 3); 3],
            fc_hidden: 5,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ws = small();
        let bytes = weights_to_bytes(&ws);
        assert_eq!(&bytes[..4], b"SDNW");
        let back = weights_from_bytes(&bytes).unwrap();
        assert_eq!(back, ws);
        assert_eq!(weights_to_bytes(&back), bytes);
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let bytes = weights_to_bytes(&small());
        for cut in [bytes.len() - 1, bytes.len() / 2, 12] {
            let err = weights_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, WeightIoError::ChecksumMismatch { .. }),
                "{cut}: {err}"
            );
        }
        assert!(matches!(
            weights_from_bytes(&bytes[..7]),
            Err(WeightIoError::Truncated(_))
        ));
        assert!(matches!(
            weights_from_bytes(b"SD"),
            Err(WeightIoError::Truncated(_))
        ));
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = weights_to_bytes(&small());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            weights_from_bytes(&bad_magic),
            Err(WeightIoError::BadMagic)
        ));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            weights_from_bytes(&bad_version),
            Err(WeightIoError::VersionMismatch {
                found: 9,
                supported: 1
            })
        ));

        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            weights_from_bytes(&bytes),
            Err(WeightIoError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn file_round_trip_and_landmark_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sdnw");
        let ws = small();
        save_weights(&ws, &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), ws);
        assert!(load_weights_expecting(&path, 3).is_ok());
        assert!(matches!(
            load_weights_expecting(&path, 68),
            Err(WeightIoError::LandmarkMismatch {
                expected: 68,
                found: 3
            })
        ));
    }
}
