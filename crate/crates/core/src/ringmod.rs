//! Arithmetic over Z_q for q a power of two, dense matrices in balanced
//! representation, and the bit-decomposition gadget.
//!
//! Values are stored as `i128` in `(-q/2, q/2]`. Because q divides 2^128,
//! wrapping `u128` arithmetic followed by masking is exact, so no widening
//! multiplication is ever needed.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest supported exponent: q = 2^126 keeps every balanced sum in `i128`.
pub const MAX_LOG_Q: u32 = 126;

/// The modulus q = 2^log_q.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Modulus {
    log_q: u32,
}

impl Modulus {
    pub fn new(log_q: u32) -> Result<Self> {
        if log_q == 0 || log_q > MAX_LOG_Q {
            return Err(Error::Config(format!(
                "log2(q) must lie in 1..={MAX_LOG_Q}, got {log_q}"
            )));
        }
        Ok(Modulus { log_q })
    }

    pub fn log_q(&self) -> u32 {
        self.log_q
    }

    pub fn q(&self) -> u128 {
        1u128 << self.log_q
    }

    pub fn half(&self) -> i128 {
        (self.q() >> 1) as i128
    }

    /// q/4 as a signed value (0 when q = 2).
    pub fn quarter(&self) -> i128 {
        (self.q() >> 2) as i128
    }

    #[inline]
    pub fn mask(&self) -> u128 {
        if self.log_q == 128 {
            u128::MAX
        } else {
            (1u128 << self.log_q) - 1
        }
    }

    /// Maps a residue class, given by any two's complement representative, to
    /// the balanced value in (-q/2, q/2].
    #[inline]
    pub fn from_wrapping(&self, x: u128) -> i128 {
        let r = x & self.mask();
        if r > (self.q() >> 1) {
            r as i128 - self.q() as i128
        } else {
            r as i128
        }
    }

    #[inline]
    pub fn reduce(&self, x: i128) -> i128 {
        self.from_wrapping(x as u128)
    }

    /// Non-negative residue in [0, q).
    #[inline]
    pub fn residue(&self, x: i128) -> u128 {
        (x as u128) & self.mask()
    }

    #[inline]
    pub fn add(&self, a: i128, b: i128) -> i128 {
        self.from_wrapping((a as u128).wrapping_add(b as u128))
    }

    #[inline]
    pub fn sub(&self, a: i128, b: i128) -> i128 {
        self.from_wrapping((a as u128).wrapping_sub(b as u128))
    }

    #[inline]
    pub fn mul(&self, a: i128, b: i128) -> i128 {
        self.from_wrapping((a as u128).wrapping_mul(b as u128))
    }

    #[inline]
    pub fn neg(&self, a: i128) -> i128 {
        self.from_wrapping((a as u128).wrapping_neg())
    }

    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> i128 {
        self.from_wrapping(rng.gen::<u128>())
    }
}

/// A dense row-major matrix over Z_q. Column vectors are `cols == 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModMatrix {
    modulus: Modulus,
    rows: usize,
    cols: usize,
    data: Vec<i128>,
}

pub type ModVector = ModMatrix;

impl ModMatrix {
    pub fn zeros(modulus: Modulus, rows: usize, cols: usize) -> Self {
        ModMatrix { modulus, rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(modulus: Modulus, size: usize) -> Self {
        let mut out = Self::zeros(modulus, size, size);
        for i in 0..size {
            out.data[i * size + i] = modulus.reduce(1);
        }
        out
    }

    /// Builds a matrix from arbitrary integers, reducing each entry.
    pub fn from_rows(modulus: Modulus, rows: usize, cols: usize, values: &[i128]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        let data = values.iter().map(|&v| modulus.reduce(v)).collect();
        Ok(ModMatrix { modulus, rows, cols, data })
    }

    pub fn column(modulus: Modulus, values: &[i128]) -> Self {
        let data = values.iter().map(|&v| modulus.reduce(v)).collect();
        ModMatrix { modulus, rows: values.len(), cols: 1, data }
    }

    pub fn uniform<R: Rng + ?Sized>(modulus: Modulus, rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| modulus.uniform(rng)).collect();
        ModMatrix { modulus, rows, cols, data }
    }

    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[i128] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i128 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: i128) {
        self.data[r * self.cols + c] = self.modulus.reduce(v);
    }

    pub fn row(&self, r: usize) -> &[i128] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Extracts column `c` as a column vector.
    pub fn col(&self, c: usize) -> ModVector {
        let data = (0..self.rows).map(|r| self.get(r, c)).collect();
        ModMatrix { modulus: self.modulus, rows: self.rows, cols: 1, data }
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> ModMatrix {
        ModMatrix {
            modulus: self.modulus,
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &ModMatrix) -> Result<ModMatrix> {
        self.check_same_modulus(other)?;
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "vstack of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(ModMatrix { modulus: self.modulus, rows: self.rows + other.rows, cols: self.cols, data })
    }

    pub fn transpose(&self) -> ModMatrix {
        let mut out = ModMatrix::zeros(self.modulus, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn check_same_modulus(&self, other: &ModMatrix) -> Result<()> {
        if self.modulus != other.modulus {
            return Err(Error::Dimension("operands use different moduli".into()));
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &ModMatrix) -> Result<()> {
        self.check_same_modulus(other)?;
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &ModMatrix) -> Result<ModMatrix> {
        self.check_same_shape(other)?;
        let m = self.modulus;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| m.add(a, b)).collect();
        Ok(ModMatrix { modulus: m, rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &ModMatrix) -> Result<ModMatrix> {
        self.check_same_shape(other)?;
        let m = self.modulus;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| m.sub(a, b)).collect();
        Ok(ModMatrix { modulus: m, rows: self.rows, cols: self.cols, data })
    }

    pub fn neg(&self) -> ModMatrix {
        let m = self.modulus;
        ModMatrix {
            modulus: m,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| m.neg(a)).collect(),
        }
    }

    pub fn scale(&self, k: i128) -> ModMatrix {
        let m = self.modulus;
        ModMatrix {
            modulus: m,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| m.mul(a, k)).collect(),
        }
    }

    pub fn matmul(&self, other: &ModMatrix) -> Result<ModMatrix> {
        self.check_same_modulus(other)?;
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let m = self.modulus;
        let mut acc = vec![0u128; self.rows * other.cols];
        for i in 0..self.rows {
            let out_row = &mut acc[i * other.cols..(i + 1) * other.cols];
            for t in 0..self.cols {
                let a = self.data[i * self.cols + t] as u128;
                if a == 0 {
                    continue;
                }
                let b_row = &other.data[t * other.cols..(t + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = o.wrapping_add(a.wrapping_mul(b as u128));
                }
            }
        }
        let data = acc.into_iter().map(|v| m.from_wrapping(v)).collect();
        Ok(ModMatrix { modulus: m, rows: self.rows, cols: other.cols, data })
    }

    /// Product with a 0/1 matrix, given as one bit row per row of `bits`.
    /// This is the hot loop of homomorphic NAND, so it avoids multiplications.
    pub fn matmul_bits(&self, bits: &BitMatrix) -> Result<ModMatrix> {
        if self.cols != bits.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{} bit matrix",
                self.rows, self.cols, bits.rows, bits.cols
            )));
        }
        let m = self.modulus;
        if m.log_q() <= 64 {
            return Ok(self.matmul_bits_narrow(bits));
        }
        let mut acc = vec![0u128; self.rows * bits.cols];
        acc.par_chunks_mut(bits.cols.max(1)).enumerate().for_each(|(i, out_row)| {
            for t in 0..self.cols {
                let a = self.data[i * self.cols + t] as u128;
                if a == 0 {
                    continue;
                }
                let b_row = bits.row(t);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = o.wrapping_add(a & (b as u128).wrapping_neg());
                }
            }
        });
        let data = acc.into_iter().map(|v| m.from_wrapping(v)).collect();
        Ok(ModMatrix { modulus: m, rows: self.rows, cols: bits.cols, data })
    }

    // Same product with u64 lanes, which is exact whenever q divides 2^64.
    // Bit rows are packed eight at a time so each output entry takes one
    // lookup in a 256-entry table of subset sums per group of eight.
    fn matmul_bits_narrow(&self, bits: &BitMatrix) -> ModMatrix {
        let m = self.modulus;
        let cols = bits.cols;
        let groups = self.cols.div_ceil(8);
        let mut packed = vec![0u8; groups * cols];
        for t in 0..self.cols {
            let (g, shift) = (t / 8, t % 8);
            for (p, &b) in packed[g * cols..(g + 1) * cols].iter_mut().zip(bits.row(t)) {
                *p |= (b & 1) << shift;
            }
        }
        let mut acc = vec![0u64; self.rows * cols];
        acc.par_chunks_mut(cols.max(1)).enumerate().for_each(|(i, out)| {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut table = [0u64; 256];
            for g in 0..groups {
                let coeffs = &row[g * 8..(g * 8 + 8).min(self.cols)];
                if coeffs.iter().all(|&a| a == 0) {
                    continue;
                }
                for v in 1..256usize {
                    let low = v.trailing_zeros() as usize;
                    let a = coeffs.get(low).map_or(0, |&a| a as u64);
                    table[v] = table[v & (v - 1)].wrapping_add(a);
                }
                for (o, &p) in out.iter_mut().zip(&packed[g * cols..(g + 1) * cols]) {
                    *o = o.wrapping_add(table[p as usize]);
                }
            }
        });
        let data = acc.into_iter().map(|v| m.from_wrapping(v as u128)).collect();
        ModMatrix { modulus: m, rows: self.rows, cols, data }
    }

    /// max |entry| in balanced representation.
    pub fn inf_norm(&self) -> u128 {
        self.data.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Canonical encoding: q as 16-byte LE, rows and cols as 8-byte LE,
    /// entries as 16-byte LE two's complement balanced values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.modulus.q().to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<ModMatrix> {
        let mut b16 = [0u8; 16];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b16)?;
        let q = u128::from_le_bytes(b16);
        if !q.is_power_of_two() {
            return Err(Error::Format(format!("modulus {q} is not a power of two")));
        }
        let modulus = Modulus::new(q.trailing_zeros())?;
        r.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let cols = u64::from_le_bytes(b8) as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= 1 << 32)
            .ok_or_else(|| Error::Format("matrix too large".into()))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b16)?;
            let v = i128::from_le_bytes(b16);
            if modulus.reduce(v) != v {
                return Err(Error::Format(format!("entry {v} not in balanced range")));
            }
            data.push(v);
        }
        Ok(ModMatrix { modulus, rows, cols, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 16 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModMatrix> {
        let mut cur = bytes;
        Self::read_from(&mut cur)
    }
}

/// Dense 0/1 matrix stored one byte per entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BitMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }
    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// G applied to a length-(rows * log q) vector: output[i] = Σ_j 2^j a[i·log q + j].
/// Entries of `a` may be arbitrary ring elements.
pub fn gadget_apply(a: &ModVector) -> Result<ModVector> {
    let m = a.modulus();
    let k = m.log_q() as usize;
    if a.cols() != 1 || !a.rows().is_multiple_of(k) {
        return Err(Error::Dimension(format!(
            "gadget input of length {} is not a multiple of log q = {k}",
            a.rows()
        )));
    }
    let out_len = a.rows() / k;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let mut acc = 0u128;
        for j in 0..k {
            acc = acc.wrapping_add((a.get(i * k + j, 0) as u128).wrapping_shl(j as u32));
        }
        out.push(m.from_wrapping(acc));
    }
    Ok(ModMatrix { modulus: m, rows: out_len, cols: 1, data: out })
}

/// G⁻¹ of a vector: little-endian bits of each non-negative residue.
pub fn gadget_decompose(v: &ModVector) -> ModVector {
    let m = v.modulus();
    let k = m.log_q() as usize;
    let mut out = Vec::with_capacity(v.len() * k);
    for &x in v.as_slice() {
        let r = m.residue(x);
        for j in 0..k {
            out.push(((r >> j) & 1) as i128);
        }
    }
    ModMatrix { modulus: m, rows: v.len() * k, cols: 1, data: out }
}

/// G⁻¹ applied to every column of `c`, producing a (rows·log q) x cols bit matrix.
pub fn gadget_decompose_matrix(c: &ModMatrix) -> BitMatrix {
    let m = c.modulus();
    let k = m.log_q() as usize;
    let rows = c.rows() * k;
    let mut data = vec![0u8; rows * c.cols()];
    for i in 0..c.rows() {
        for col in 0..c.cols() {
            let r = m.residue(c.get(i, col));
            for j in 0..k {
                data[(i * k + j) * c.cols() + col] = ((r >> j) & 1) as u8;
            }
        }
    }
    BitMatrix { rows, cols: c.cols(), data }
}

/// The gadget matrix G of shape rows x (rows·log q).
pub fn gadget_matrix(modulus: Modulus, rows: usize) -> ModMatrix {
    let k = modulus.log_q() as usize;
    let mut g = ModMatrix::zeros(modulus, rows, rows * k);
    for i in 0..rows {
        for j in 0..k {
            g.data[i * rows * k + i * k + j] = modulus.from_wrapping(1u128 << j);
        }
    }
    g
}

/// Scheme parameters. `m` splits as `m_bar + n * digits` for the trapdoor,
/// with `digits = ceil(log q / base_bits)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub lambda: u32,
    pub modulus: Modulus,
    pub n: usize,
    pub m: usize,
    pub beta_init: u64,
    /// Quantum circuit depth in Toffoli layers.
    pub levels: usize,
    /// Classical depth budget per level.
    pub level_depth: usize,
    pub eta: u32,
    pub eta_c: u32,
    /// Bits per trapdoor gadget digit.
    pub base_bits: u32,
}

impl Params {
    pub fn log_q(&self) -> u32 {
        self.modulus.log_q()
    }

    /// N = (m+1) log q.
    pub fn big_n(&self) -> usize {
        (self.m + 1) * self.log_q() as usize
    }

    pub fn digits(&self) -> usize {
        self.log_q().div_ceil(self.base_bits) as usize
    }

    pub fn m_bar(&self) -> Option<usize> {
        self.m.checked_sub(self.n * self.digits())
    }

    /// Structural checks only; the inequalities live in `dualfhe::validate_params`.
    pub fn check(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.beta_init == 0 {
            return Err(Error::Config("n, m and beta_init must be positive".into()));
        }
        if self.base_bits == 0 || self.base_bits > self.log_q() {
            return Err(Error::Config("gadget digit width must lie in 1..=log q".into()));
        }
        if self.digits() < 2 && self.log_q() > 1 {
            return Err(Error::Config("trapdoor gadget needs at least two digits".into()));
        }
        if self.m_bar().is_none() {
            return Err(Error::Config(format!(
                "m = {} is smaller than n * digits = {}",
                self.m,
                self.n * self.digits()
            )));
        }
        Ok(())
    }
}
