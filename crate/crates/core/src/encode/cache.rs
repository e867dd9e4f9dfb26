//! Binary tensor container for per-utterance embedding and unit caches.
//!
//! Layout (little-endian): magic `M2ST`, u16 version, u16 dtype code,
//! u64 rows, u64 cols, f64 frame rate, then the row-major payload.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{EmbeddingSequence, UnitSequence};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"M2ST";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 8 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
enum Dtype {
    F32 = 1,
    F64 = 2,
    U32 = 3,
}

impl Dtype {
    fn from_code(code: u16) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            3 => Ok(Dtype::U32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn header(dtype: Dtype, rows: usize, cols: usize, frame_rate: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dtype as u16).to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.extend_from_slice(&frame_rate.to_le_bytes());
    out
}

struct Parsed<'a> {
    dtype: Dtype,
    rows: usize,
    cols: usize,
    frame_rate: f64,
    payload: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a tensor cache file".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let dtype = Dtype::from_code(u16_at(6))?;
    let rows = u64_at(8) as usize;
    let cols = u64_at(16) as usize;
    let frame_rate = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != rows * cols * dtype.width() {
        return Err(Error::Format(format!(
            "payload of {} bytes does not match {rows}x{cols} {:?}",
            payload.len(),
            dtype
        )));
    }
    Ok(Parsed { dtype, rows, cols, frame_rate, payload })
}

pub fn write_embeddings(path: impl AsRef<Path>, emb: &EmbeddingSequence) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = header(Dtype::F64, emb.len(), emb.dim(), emb.frame_rate());
    for v in emb.frames().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = parse(&bytes)?;
    let values: Vec<f64> = match p.dtype {
        Dtype::F64 => p.payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::F32 => p.payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::U32 => return Err(Error::Format("expected a float tensor, found units".into())),
    };
    let frames = Array2::from_shape_vec((p.rows, p.cols), values).map_err(|e| Error::Format(e.to_string()))?;
    EmbeddingSequence::new(frames, p.frame_rate)
}

pub fn write_units(path: impl AsRef<Path>, units: &UnitSequence) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = header(Dtype::U32, units.len(), 1, units.frame_rate());
    for u in &units.units {
        bytes.extend_from_slice(&u.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_units(path: impl AsRef<Path>) -> Result<UnitSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = parse(&bytes)?;
    if p.dtype != Dtype::U32 || p.cols != 1 {
        return Err(Error::Format("expected a single-column unit tensor".into()));
    }
    let units = p.payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(UnitSequence::new(units, p.frame_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn embedding_cache_round_trips(t in 1usize..20, d in 1usize..12, seed in any::<u64>()) {
            let frames = Array2::from_shape_fn((t, d), |(i, j)| {
                ((i * 31 + j * 7) as f64 + seed as f64 * 1e-9).sin()
            });
            let emb = EmbeddingSequence::new(frames, 50.0).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.emb");
            write_embeddings(&p, &emb).unwrap();
            prop_assert_eq!(read_embeddings(&p).unwrap(), emb);
        }

        #[test]
        fn unit_cache_round_trips(units in proptest::collection::vec(0u32..100, 0..64)) {
            let u = UnitSequence::new(units, 50.0);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.units");
            write_units(&p, &u).unwrap();
            prop_assert_eq!(read_units(&p).unwrap(), u);
        }
    }

    #[test]
    fn header_fields_are_where_documented() {
        let emb = EmbeddingSequence::new(Array2::ones((3, 2)), 50.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.emb");
        write_embeddings(&p, &emb).unwrap();
        let b = fs::read(&p).unwrap();
        assert_eq!(&b[..4], b"M2ST");
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 50.0);
        assert_eq!(b.len(), HEADER_LEN + 3 * 2 * 8);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.emb");
        let mut bytes = header(Dtype::F64, 2, 2, 50.0);
        bytes.extend_from_slice(&[0u8; 8]);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format(_))));
    }
}
