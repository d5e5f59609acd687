//! Gadget trapdoors: A = [Ā ; G − R·Ā] with Ā uniform and R a small ternary
//! matrix. Given b = A·s + e, the combination b_bot + R·b_top equals
//! G·s + (e_bot + R·e_top), which is decoded digit by digit.
//!
//! The gadget column for one coordinate is (1, 2^h, 2^{2h}, …) with `h`
//! bits per digit.

use std::io::{Read, Write};

use rand::Rng;

use crate::codec;
use crate::error::{Error, Result};
use crate::ringmod::{ModMatrix, ModVector, Modulus, Params};

#[derive(Clone, Debug, PartialEq)]
pub struct TrapdoorMatrix {
    a: ModMatrix,
    /// Ternary entries, (n·digits) x m_bar, row-major.
    r: Vec<i8>,
    n: usize,
    m_bar: usize,
    base_bits: u32,
}

/// Shape of a trapdoor instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrapdoorShape {
    pub modulus: Modulus,
    pub n: usize,
    pub m: usize,
    pub base_bits: u32,
}

impl TrapdoorShape {
    pub fn from_params(p: &Params) -> Self {
        TrapdoorShape { modulus: p.modulus, n: p.n, m: p.m, base_bits: p.base_bits }
    }

    pub fn digits(&self) -> usize {
        self.modulus.log_q().div_ceil(self.base_bits) as usize
    }
}

/// Samples (A, t_A). Fails when m < n·digits or the gadget has fewer than
/// two digits (a single digit leaves no room to separate s from e).
pub fn gen_trap<R: Rng + ?Sized>(shape: TrapdoorShape, rng: &mut R) -> Result<TrapdoorMatrix> {
    let digits = shape.digits();
    let k = shape.modulus.log_q();
    if shape.base_bits == 0 || shape.base_bits > k || digits < 2 {
        return Err(Error::Config(format!(
            "gadget with {} bits per digit over log q = {k} has fewer than two digits",
            shape.base_bits
        )));
    }
    let gadget_rows = shape.n * digits;
    let m_bar = shape
        .m
        .checked_sub(gadget_rows)
        .ok_or_else(|| Error::Config(format!("m = {} < n * digits = {gadget_rows}", shape.m)))?;
    let md = shape.modulus;
    let a_bar = ModMatrix::uniform(md, m_bar, shape.n, rng);
    // P(0) = 1/2, P(±1) = 1/4.
    let r: Vec<i8> = (0..gadget_rows * m_bar)
        .map(|_| match rng.gen_range(0..4) {
            0 => 1,
            1 => -1,
            _ => 0,
        })
        .collect();
    let mut bottom = ModMatrix::zeros(md, gadget_rows, shape.n);
    for i in 0..shape.n {
        for j in 0..digits {
            let row = i * digits + j;
            let mut v = vec![0i128; shape.n];
            v[i] = md.from_wrapping(1u128 << (j as u32 * shape.base_bits));
            for t in 0..m_bar {
                let coef = r[row * m_bar + t] as i128;
                if coef != 0 {
                    for (c, vc) in v.iter_mut().enumerate() {
                        *vc = md.sub(*vc, md.mul(coef, a_bar.get(t, c)));
                    }
                }
            }
            for (c, vc) in v.into_iter().enumerate() {
                bottom.set(row, c, vc);
            }
        }
    }
    let a = a_bar.vstack(&bottom)?;
    Ok(TrapdoorMatrix { a, r, n: shape.n, m_bar, base_bits: shape.base_bits })
}

impl TrapdoorMatrix {
    pub fn matrix(&self) -> &ModMatrix {
        &self.a
    }

    pub fn modulus(&self) -> Modulus {
        self.a.modulus()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn m_bar(&self) -> usize {
        self.m_bar
    }

    pub fn base_bits(&self) -> u32 {
        self.base_bits
    }

    pub fn digits(&self) -> usize {
        self.modulus().log_q().div_ceil(self.base_bits) as usize
    }

    /// The ternary trapdoor entries, row-major (n·digits) x m_bar.
    pub fn secret(&self) -> &[i8] {
        &self.r
    }

    /// Rebuilds the trapdoor from a public matrix and a candidate secret.
    /// Used when the secret is reconstructed from its bit encoding.
    pub fn with_secret(&self, r: Vec<i8>) -> TrapdoorMatrix {
        TrapdoorMatrix { r, ..self.clone() }
    }

    /// Bit encoding of the secret: two bits per entry, (nonzero, negative),
    /// in row-major order.
    pub fn secret_bits(&self) -> Vec<bool> {
        self.r.iter().flat_map(|&x| [x != 0, x < 0]).collect()
    }

    /// Inverse of `secret_bits`. The unused pattern (0, 1) decodes to 0.
    pub fn with_secret_bits(&self, bits: &[bool]) -> Result<TrapdoorMatrix> {
        if bits.len() != 2 * self.r.len() {
            return Err(Error::Dimension(format!("{} trapdoor bits, expected {}", bits.len(), 2 * self.r.len())));
        }
        let r = bits
            .chunks(2)
            .map(|p| match (p[0], p[1]) {
                (false, _) => 0,
                (true, false) => 1,
                (true, true) => -1,
            })
            .collect();
        Ok(self.with_secret(r))
    }

    /// Strict per-coordinate bound on e_bot + R·e_top under which decoding is
    /// unique: min(2^{(digits-1)h - 1}, 2^{k - h - 1}).
    pub fn decode_tolerance(&self) -> u128 {
        let k = self.modulus().log_q();
        let h = self.base_bits;
        let top = (self.digits() as u32 - 1) * h;
        let a = 1u128 << (top - 1);
        let b = if k > h { 1u128 << (k - h - 1) } else { a };
        a.min(b)
    }

    fn max_row_l1(&self) -> u128 {
        (0..self.n * self.digits())
            .map(|row| self.r[row * self.m_bar..(row + 1) * self.m_bar].iter().map(|x| x.unsigned_abs() as u128).sum())
            .max()
            .unwrap_or(0)
    }

    /// Any e with ‖e‖∞ at most this value is guaranteed to invert.
    pub fn guaranteed_bound(&self) -> u128 {
        (self.decode_tolerance() - 1) / (1 + self.max_row_l1())
    }

    /// Recovers (s, e) with b = A·s + e and ‖e‖∞ ≤ `guaranteed_bound()`;
    /// anything else is an `InversionFailure`.
    pub fn invert(&self, b: &ModVector) -> Result<(ModVector, ModVector)> {
        self.invert_within(b, self.guaranteed_bound())
    }

    /// As `invert`, with a caller-chosen acceptance radius for ‖e‖∞.
    pub fn invert_within(&self, b: &ModVector, radius: u128) -> Result<(ModVector, ModVector)> {
        let (s, e) = self.decode(b)?;
        if e.inf_norm() > radius {
            return Err(Error::InversionFailure(format!(
                "recovered error norm {} exceeds {radius}",
                e.inf_norm()
            )));
        }
        Ok((s, e))
    }

    /// Digit decoding. The result is rechecked and the combined error must
    /// lie strictly inside the decoding tolerance, which makes it unique.
    pub fn decode(&self, b: &ModVector) -> Result<(ModVector, ModVector)> {
        let md = self.modulus();
        let m = self.m();
        if b.rows() != m || b.cols() != 1 {
            return Err(Error::Dimension(format!("expected length {m}, got {}x{}", b.rows(), b.cols())));
        }
        let digits = self.digits();
        let h = self.base_bits;
        let k = md.log_q();
        let combined = self.combine(b.as_slice());
        let mut s = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut known: u128 = 0;
            let mut known_bits: u32 = 0;
            for j in (0..digits).rev() {
                let shift = j as u32 * h;
                if shift + known_bits >= k {
                    continue;
                }
                let v = combined[i * digits + j];
                let x = (v as u128).wrapping_sub(known.wrapping_shl(shift)) & md.mask();
                let t = shift + known_bits;
                let width = k - t;
                let rounded = if t == 0 { x } else { x.wrapping_add(1u128 << (t - 1)) >> t };
                let fresh = rounded & low_mask(width);
                known |= fresh << known_bits;
                known_bits += width;
            }
            s.push(md.from_wrapping(known));
        }
        let s = ModMatrix::column(md, &s);
        let e = b.sub(&self.a.matmul(&s)?)?;
        let eps = self.combine(e.as_slice());
        let tol = self.decode_tolerance();
        if let Some(bad) = eps.iter().find(|x| x.unsigned_abs() >= tol) {
            return Err(Error::InversionFailure(format!(
                "combined error {bad} outside decoding tolerance {tol}"
            )));
        }
        debug_assert_eq!(self.a.matmul(&s)?.add(&e)?, *b);
        Ok((s, e))
    }

    /// b_bot + R·b_top, reduced.
    fn combine(&self, b: &[i128]) -> Vec<i128> {
        let md = self.modulus();
        let rows = self.n * self.digits();
        (0..rows)
            .map(|row| {
                let mut acc = b[self.m_bar + row];
                for t in 0..self.m_bar {
                    match self.r[row * self.m_bar + t] {
                        1 => acc = md.add(acc, b[t]),
                        -1 => acc = md.sub(acc, b[t]),
                        _ => {}
                    }
                }
                acc
            })
            .collect()
    }

    /// χ² statistic of the entries of A over `buckets` equal ranges of Z_q.
    pub fn uniformity_chi2(&self, buckets: usize) -> f64 {
        let md = self.modulus();
        let mut counts = vec![0usize; buckets];
        for &v in self.a.as_slice() {
            let r = md.residue(v);
            let idx = ((r as f64 / md.q() as f64) * buckets as f64) as usize;
            counts[idx.min(buckets - 1)] += 1;
        }
        let expected = self.a.len() as f64 / buckets as f64;
        counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_matrix(w, &self.a)?;
        codec::write_tag(w, b"TA")?;
        codec::write_u64(w, self.n as u64)?;
        codec::write_u64(w, self.m_bar as u64)?;
        codec::write_u64(w, self.base_bits as u64)?;
        let rows = self.n * self.digits();
        let rm = ModMatrix::from_rows(
            self.modulus(),
            rows,
            self.m_bar,
            &self.r.iter().map(|&x| x as i128).collect::<Vec<_>>(),
        )?;
        codec::write_matrix(w, &rm)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let a = codec::read_matrix(r)?;
        codec::expect_tag(r, b"TA")?;
        let n = codec::read_u64(r)? as usize;
        let m_bar = codec::read_u64(r)? as usize;
        let base_bits = codec::read_u64(r)? as u32;
        let rm = codec::read_matrix(r)?;
        let secret: Vec<i8> = rm
            .as_slice()
            .iter()
            .map(|&x| match x {
                -1..=1 => Ok(x as i8),
                _ => Err(Error::Format("trapdoor entry is not ternary".into())),
            })
            .collect::<Result<_>>()?;
        let td = TrapdoorMatrix { a, r: secret, n, m_bar, base_bits };
        if td.a.cols() != n || td.a.rows() != m_bar + n * td.digits() || rm.len() != n * td.digits() * m_bar {
            return Err(Error::Format("trapdoor dimensions are inconsistent".into()));
        }
        Ok(td)
    }
}

fn low_mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

/// Result of the empirical calibration of the inversion radius.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    /// Largest ‖e‖∞ radius at which every trial inverted.
    pub radius: u128,
    /// Worst Euclidean norm of e among successful trials at that radius.
    pub l2_at_radius: f64,
    /// Implied constant in ‖e‖ ≤ q / (C_T √(n log q)).
    pub c_t: f64,
}

/// Finds, by bisection over radii, the largest ‖e‖∞ for which `trials`
/// uniformly drawn errors all invert.
pub fn calibrate<R: Rng + ?Sized>(td: &TrapdoorMatrix, trials: usize, rng: &mut R) -> Calibration {
    let md = td.modulus();
    let all_ok = |radius: u128, rng: &mut R| -> (bool, f64) {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let s = ModMatrix::uniform(md, td.n(), 1, rng);
            let e: Vec<i128> = (0..td.m()).map(|_| uniform_in(radius, rng)).collect();
            let e = ModMatrix::column(md, &e);
            let b = td.matrix().matmul(&s).unwrap().add(&e).unwrap();
            match td.decode(&b) {
                Ok((s2, e2)) if s2 == s && e2 == e => worst = worst.max(e.l2_norm()),
                _ => return (false, worst),
            }
        }
        (true, worst)
    };
    let mut lo = 0u128;
    let mut hi = td.decode_tolerance().max(1);
    let mut lo_l2 = 0.0;
    while hi - lo > 1 && hi > lo {
        let mid = lo + (hi - lo) / 2;
        let (ok, l2) = all_ok(mid, rng);
        if ok {
            lo = mid;
            lo_l2 = l2;
        } else {
            hi = mid;
        }
    }
    let denom = lo_l2.max(1.0) * ((td.n() as f64) * md.log_q() as f64).sqrt();
    Calibration { radius: lo, l2_at_radius: lo_l2, c_t: md.q() as f64 / denom }
}

fn uniform_in<R: Rng + ?Sized>(radius: u128, rng: &mut R) -> i128 {
    if radius == 0 {
        return 0;
    }
    let r = radius.min(i128::MAX as u128 / 2) as i128;
    rng.gen_range(-r..=r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn shape(k: u32, n: usize, m: usize, h: u32) -> TrapdoorShape {
        TrapdoorShape { modulus: Modulus::new(k).unwrap(), n, m, base_bits: h }
    }

    #[test]
    fn dims_and_zero_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let td = gen_trap(shape(20, 2, 48, 1), &mut rng).unwrap();
        assert_eq!(td.matrix().dims(), (48, 2));
        let md = td.modulus();
        let s = ModMatrix::uniform(md, 2, 1, &mut rng);
        let b = td.matrix().matmul(&s).unwrap();
        let (s2, e2) = td.invert(&b).unwrap();
        assert_eq!(s2, s);
        assert_eq!(e2.inf_norm(), 0);
    }

    #[test]
    fn rejects_too_small_m() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(matches!(gen_trap(shape(20, 2, 30, 1), &mut rng), Err(Error::Config(_))));
        assert!(matches!(gen_trap(shape(8, 1, 4, 8), &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_at_half_guaranteed_bound() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for (k, n, m, h) in [(20u32, 2usize, 48usize, 1u32), (16, 1, 4, 8), (40, 4, 168, 1), (4, 1, 2, 2)] {
            let td = gen_trap(shape(k, n, m, h), &mut rng).unwrap();
            let md = td.modulus();
            let bound = td.guaranteed_bound() / 2;
            for _ in 0..200 {
                let s = ModMatrix::uniform(md, n, 1, &mut rng);
                let e: Vec<i128> = (0..m).map(|_| uniform_in(bound, &mut rng)).collect();
                let e = ModMatrix::column(md, &e);
                let b = td.matrix().matmul(&s).unwrap().add(&e).unwrap();
                let (s2, e2) = td.invert(&b).unwrap();
                assert_eq!((s2, e2), (s, e));
            }
        }
    }

    #[test]
    fn uniform_targets_fail() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let td = gen_trap(shape(30, 2, 72, 1), &mut rng).unwrap();
        let md = td.modulus();
        let mut failures = 0;
        for _ in 0..100 {
            let b = ModMatrix::uniform(md, 72, 1, &mut rng);
            if td.invert(&b).is_err() {
                failures += 1;
            }
        }
        assert_eq!(failures, 100);
    }

    #[test]
    fn entries_look_uniform() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let td = gen_trap(shape(40, 60, 2500, 1), &mut rng).unwrap();
        assert!(td.matrix().len() >= 10_000);
        let stat = td.uniformity_chi2(16);
        let crit = ChiSquared::new(15.0).unwrap().inverse_cdf(0.999);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let td = gen_trap(shape(24, 2, 52, 1), &mut rng).unwrap();
        let mut buf = Vec::new();
        td.write_to(&mut buf).unwrap();
        assert_eq!(TrapdoorMatrix::read_from(&mut buf.as_slice()).unwrap(), td);
    }

    #[test]
    fn calibration_at_least_guaranteed() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let td = gen_trap(shape(24, 1, 28, 1), &mut rng).unwrap();
        let cal = calibrate(&td, 100, &mut rng);
        assert!(cal.radius >= td.guaranteed_bound());
        assert!(cal.c_t > 0.0);
    }
}
