//! Binary field snapshots (`RDF1`) and 8-bit PGM previews.
//!
//! Layout, all little-endian: magic `RDF1`, `u32 n`, `u32 n`, `f64` time,
//! then `n²` `f64` values in row-major order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::spectral::Field;

const MAGIC: &[u8; 4] = b"RDF1";

pub fn write_field<W: Write>(mut w: W, field: &Field, time: f64) -> Result<()> {
    let n = u32::try_from(field.n())
        .map_err(|_| Error::Format(format!("grid size {} exceeds u32", field.n())))?;
    w.write_all(MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads a snapshot, returning the field and its simulation time.
pub fn read_field<R: Read>(mut r: R) -> Result<(Field, f64)> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let nx = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if nx != ny {
        return Err(Error::Format(format!("non-square grid {nx}x{ny}")));
    }
    if nx < 2 {
        return Err(Error::Format(format!("grid size {nx} too small")));
    }
    let time = f64::from_le_bytes(head[12..20].try_into().unwrap());
    let count = nx
        .checked_mul(nx)
        .ok_or_else(|| Error::Format("grid size overflows".into()))?;
    let mut body = vec![0u8; count * 8];
    r.read_exact(&mut body)
        .map_err(|e| Error::Format(format!("truncated body: {e}")))?;
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Field::from_vec(nx, values)?, time))
}

/// Binary PGM (P5), mapping `[-1, 1]` linearly onto `[0, 255]` with clamping.
pub fn write_pgm<W: Write>(mut w: W, field: &Field) -> Result<()> {
    let n = field.n();
    write!(w, "P5\n{n} {n}\n255\n")?;
    let pixels: Vec<u8> = field
        .values()
        .iter()
        .map(|&v| {
            let v = if v.is_finite() { v } else { 0.0 };
            ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
        })
        .collect();
    w.write_all(&pixels)?;
    Ok(())
}
