//! Small helpers for the tagged binary artifact formats. Every artifact is a
//! sequence of tags, little-endian integers and canonical matrices.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ringmod::ModMatrix;

pub fn write_tag<W: Write>(w: &mut W, tag: &[u8]) -> Result<()> {
    w.write_all(&(tag.len() as u8).to_le_bytes())?;
    w.write_all(tag)?;
    Ok(())
}

pub fn expect_tag<R: Read>(r: &mut R, tag: &[u8]) -> Result<()> {
    let mut len = [0u8; 1];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; len[0] as usize];
    r.read_exact(&mut buf)?;
    if buf != tag {
        return Err(Error::Format(format!(
            "expected tag {:?}, found {:?}",
            String::from_utf8_lossy(tag),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_matrix<W: Write>(w: &mut W, m: &ModMatrix) -> Result<()> {
    m.write_to(w)
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<ModMatrix> {
    ModMatrix::read_from(r)
}

pub fn write_bits<W: Write>(w: &mut W, bits: &[bool]) -> Result<()> {
    write_u64(w, bits.len() as u64)?;
    let bytes: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_bits<R: Read>(r: &mut R) -> Result<Vec<bool>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 32 {
        return Err(Error::Format("bit string too long".into()));
    }
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)?;
    bytes
        .into_iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::Format(format!("bit value {b}"))),
        })
        .collect()
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    write_u64(w, v.to_bits())
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
