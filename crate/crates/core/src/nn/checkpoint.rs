//! Versioned binary parameter checkpoints with a shape manifest.
//! Round-trips are bit-exact; the payload carries a CRC-32.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"SCNN";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}, not a checkpoint file")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed record: {0}")]
    Malformed(String),
}

/// One named tensor: dims and row-major double-precision data.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: &str, dims: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims/data mismatch");
        Self { name: name.into(), dims, data }
    }
}

pub fn write_checkpoint(path: &Path, records: &[TensorRecord]) -> Result<(), CheckpointError> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        payload.extend_from_slice(&(name.len() as u16).to_le_bytes());
        payload.extend_from_slice(name);
        payload.push(r.dims.len() as u8);
        for &d in &r.dims {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &r.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(payload.len() + 10);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<TensorRecord>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 10 {
        return Err(CheckpointError::Truncated);
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let payload = &bytes[6..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *off + n > payload.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &payload[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let ndim = take(&mut off, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
        }
        records.push(TensorRecord { name, dims, data });
    }
    if off != payload.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn roundtrip_is_bit_exact() {
        let records = vec![
            TensorRecord::new("w", vec![2, 3], vec![1.0, -0.5, f64::MIN_POSITIVE, 3.3e300, 0.0, -0.0]),
            TensorRecord::new("b", vec![3], vec![0.1, 0.2, 0.3]),
            TensorRecord::new("scalar", vec![1], vec![42.0]),
        ];
        let dir = tempdir().unwrap();
        let p = dir.path().join("net.scnn");
        write_checkpoint(&p, &records).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back, records);
        // -0.0 must survive bit-exactly
        assert!(back[0].data[5].is_sign_negative());
    }

    #[test]
    fn corruption_is_detected() {
        let records = vec![TensorRecord::new("w", vec![2], vec![1.0, 2.0])];
        let dir = tempdir().unwrap();
        let p = dir.path().join("net.scnn");
        write_checkpoint(&p, &records).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[12] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&p),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));
    }
}
