//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "HDRU"
//! version u32      currently 1
//! count   u32      number of tensor records
//! record:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   dtype    u8   0 = f32, 1 = f64
//!   rank     u8
//!   dims     rank × u32
//!   payload  numel × element-size bytes
//! ```
//!
//! The container itself is name-agnostic: model parameters, optimizer
//! moments and bookkeeping scalars all ride in the same record type.
//! Distinct failure modes get distinct errors so a caller can tell a
//! wrong file from a damaged one: bad magic, unknown version, clean
//! truncation, and structural corruption are separated.

use std::fs;
use std::path::Path;

use crate::element::{Dtype, Element};
use crate::error::{Error, Result};

/// Current container version.
pub const CHECKPOINT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"HDRU";

/// Maximum accepted name length, a sanity bound against corrupt headers.
const MAX_NAME_LEN: usize = 1 << 16;

/// One tensor record's element payload.
#[derive(Debug, Clone, PartialEq)]
pub enum CkptPayload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl CkptPayload {
    pub fn dtype(&self) -> Dtype {
        match self {
            CkptPayload::F32(_) => Dtype::F32,
            CkptPayload::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CkptPayload::F32(v) => v.len(),
            CkptPayload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CkptTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub payload: CkptPayload,
}

impl CkptTensor {
    /// Builds a record from typed elements.
    pub fn from_elems<E: Element>(name: &str, dims: Vec<u32>, values: &[E]) -> CkptTensor {
        let payload = match E::DTYPE {
            Dtype::F32 => {
                CkptPayload::F32(values.iter().map(|&v| Element::to_f64(v) as f32).collect())
            }
            Dtype::F64 => CkptPayload::F64(values.iter().map(|&v| Element::to_f64(v)).collect()),
        };
        CkptTensor {
            name: name.to_string(),
            dims,
            payload,
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    /// Payload converted to the requested element type. Converting f64
    /// storage to f32 rounds; matching types copy bit-exactly.
    pub fn to_elems<E: Element>(&self) -> Vec<E> {
        match &self.payload {
            CkptPayload::F32(v) => v.iter().map(|&x| E::from_f64(x as f64)).collect(),
            CkptPayload::F64(v) => v.iter().map(|&x| E::from_f64(x)).collect(),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.to_elems::<f64>()
    }
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<CkptTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&CkptTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Appends a record built from typed elements.
    pub fn push<E: Element>(&mut self, name: &str, dims: Vec<u32>, values: &[E]) {
        self.tensors.push(CkptTensor::from_elems(name, dims, values));
    }

    /// Serializes to the binary container format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::contract("too many tensors for a checkpoint"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for t in &self.tensors {
            let expected = t.numel();
            if t.payload.len() != expected {
                return Err(Error::contract(format!(
                    "tensor '{}' dims imply {} elements but payload holds {}",
                    t.name,
                    expected,
                    t.payload.len()
                )));
            }
            let name_len = u32::try_from(t.name.len())
                .map_err(|_| Error::contract(format!("tensor name '{}' too long", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.payload.dtype().code());
            let rank = u8::try_from(t.dims.len())
                .map_err(|_| Error::contract(format!("tensor '{}' rank too large", t.name)))?;
            out.push(rank);
            for &d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &t.payload {
                CkptPayload::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                CkptPayload::F64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Parses the binary container format.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cursor = Cursor {
            bytes,
            pos: 0,
        };
        let magic = cursor.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::CheckpointMagic);
        }
        let version = cursor.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(version));
        }
        let count = cursor.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let ctx = format!("tensor {i}");
            let name_len = cursor.u32(&format!("{ctx} name length"))? as usize;
            if name_len > MAX_NAME_LEN {
                return Err(Error::CheckpointCorrupt(format!(
                    "{ctx}: name length {name_len} exceeds sanity bound"
                )));
            }
            let name_bytes = cursor.take(name_len, &format!("{ctx} name"))?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::CheckpointCorrupt(format!("{ctx}: name is not UTF-8")))?
                .to_string();
            let dtype_code = cursor.take(1, &format!("'{name}' dtype"))?[0];
            let dtype = Dtype::from_code(dtype_code).ok_or_else(|| {
                Error::CheckpointCorrupt(format!("'{name}': unknown dtype code {dtype_code}"))
            })?;
            let rank = cursor.take(1, &format!("'{name}' rank"))?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for d in 0..rank {
                dims.push(cursor.u32(&format!("'{name}' dim {d}"))?);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| {
                    Error::CheckpointCorrupt(format!("'{name}': element count overflows"))
                })?;
            let raw = cursor.take(numel * dtype.size(), &format!("'{name}' payload"))?;
            let payload = match dtype {
                Dtype::F32 => CkptPayload::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                Dtype::F64 => CkptPayload::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            tensors.push(CkptTensor {
                name,
                dims,
                payload,
            });
        }
        if cursor.pos != bytes.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - cursor.pos
            )));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| {
            Error::CheckpointCorrupt(format!("offset overflow while reading {what}"))
        })?;
        if end > self.bytes.len() {
            return Err(Error::CheckpointTruncated(format!(
                "file ends inside {what} (needed {n} bytes at offset {})",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Splits a `u64` into exactly representable high/low 32-bit halves.
pub fn u64_to_f64_pair(v: u64) -> [f64; 2] {
    [(v >> 32) as f64, (v & 0xFFFF_FFFF) as f64]
}

/// Inverse of [`u64_to_f64_pair`]; rejects values that are not integral
/// 32-bit halves.
pub fn f64_pair_to_u64(pair: [f64; 2]) -> Result<u64> {
    for half in pair {
        if !(half.is_finite() && half >= 0.0 && half.fract() == 0.0 && half < 4_294_967_296.0) {
            return Err(Error::CheckpointCorrupt(format!(
                "value {half} is not an integral 32-bit half"
            )));
        }
    }
    Ok(((pair[0] as u64) << 32) | pair[1] as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.push::<f32>("base.head.weight", vec![2, 3, 1, 1], &[0.5f32; 6]);
        ckpt.push::<f64>("adam.t", vec![1], &[42.0f64]);
        ckpt.push::<f32>("empty", vec![0], &[]);
        ckpt
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.get("adam.t").unwrap().as_f64(), vec![42.0]);
        assert!(back.get("nope").is_none());
    }

    #[test]
    fn wrong_magic_is_its_own_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointMagic)
        ));
    }

    #[test]
    fn unknown_version_is_reported_with_the_number() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointVersion(7))
        ));
    }

    #[test]
    fn every_truncation_point_errors_without_panicking() {
        let bytes = sample().to_bytes().unwrap();
        for cut in 0..bytes.len() {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            if cut >= 8 {
                assert!(
                    matches!(err, Error::CheckpointTruncated(_)),
                    "cut at {cut}: got {err:?}"
                );
            }
        }
    }

    #[test]
    fn unknown_dtype_is_corrupt() {
        let mut ckpt = Checkpoint::default();
        ckpt.push::<f32>("w", vec![1], &[1.0f32]);
        let mut bytes = ckpt.to_bytes().unwrap();
        // dtype byte sits after header (12) + name_len (4) + name (1).
        bytes[12 + 4 + 1] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointCorrupt(_))
        ));
    }

    #[test]
    fn trailing_bytes_are_corrupt() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.push(0);
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::CheckpointCorrupt(_)));
        assert!(err.to_string().contains("trailing"));
    }

    #[test]
    fn u64_halves_round_trip() {
        for v in [0u64, 1, 0xFFFF_FFFF, 1 << 32, 1 << 40, u64::MAX] {
            assert_eq!(f64_pair_to_u64(u64_to_f64_pair(v)).unwrap(), v);
        }
        assert!(f64_pair_to_u64([0.5, 0.0]).is_err());
        assert!(f64_pair_to_u64([-1.0, 0.0]).is_err());
        assert!(f64_pair_to_u64([4_294_967_296.0, 0.0]).is_err());
    }

    #[test]
    fn mismatched_payload_length_refuses_to_serialize() {
        let ckpt = Checkpoint {
            tensors: vec![CkptTensor {
                name: "w".into(),
                dims: vec![3],
                payload: CkptPayload::F32(vec![1.0; 2]),
            }],
        };
        assert!(ckpt.to_bytes().is_err());
    }
}
