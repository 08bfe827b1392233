//! Flat parameter checkpoints: a tag line, the parameter count as a
//! little-endian `u64`, then the parameters as little-endian `f64`.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint header, expected `{expected}`")]
    BadHeader { expected: String },
    #[error("checkpoint holds {found} parameters, expected {expected}")]
    WrongCount { expected: usize, found: usize },
}

pub fn write_params<W: Write>(mut w: W, tag: &str, params: &[f64]) -> io::Result<()> {
    w.write_all(tag.as_bytes())?;
    w.write_all(b"\n")?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads a checkpoint written with `tag`; `expected` pins the parameter count
/// when the caller knows it.
pub fn read_params<R: Read>(mut r: R, tag: &str, expected: Option<usize>) -> Result<Vec<f64>, CheckpointError> {
    let mut header = vec![0u8; tag.len() + 1];
    r.read_exact(&mut header).map_err(|_| CheckpointError::BadHeader {
        expected: tag.to_string(),
    })?;
    if &header[..tag.len()] != tag.as_bytes() || header[tag.len()] != b'\n' {
        return Err(CheckpointError::BadHeader {
            expected: tag.to_string(),
        });
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    if let Some(expected) = expected {
        if count != expected {
            return Err(CheckpointError::WrongCount { expected, found: count });
        }
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(CheckpointError::WrongCount {
            expected: count,
            found: bytes.len() / 8,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
