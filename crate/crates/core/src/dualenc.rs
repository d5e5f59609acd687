//! Dual-Regev bit encryption with a trapdoored public matrix: ciphertexts
//! A′s + e + (0,…,0, μ·q/2), additive XOR, and randomness recovery.

use std::io::{Read, Write};

use rand::Rng;

use crate::codec;
use crate::distributions::TruncGaussian;
use crate::error::{Error, Result};
use crate::ringmod::{ModMatrix, ModVector, Modulus, Params};
use crate::trapdoor::{gen_trap, TrapdoorMatrix, TrapdoorShape};

const TAG: &[u8] = b"DUAL1";

/// A′ = [A ; (Aᵀ e_sk)ᵀ], shape (m+1) x n.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPublicKey {
    a_prime: ModMatrix,
}

impl DualPublicKey {
    pub fn from_matrix(a_prime: ModMatrix) -> Self {
        DualPublicKey { a_prime }
    }

    pub fn matrix(&self) -> &ModMatrix {
        &self.a_prime
    }

    pub fn modulus(&self) -> Modulus {
        self.a_prime.modulus()
    }

    pub fn n(&self) -> usize {
        self.a_prime.cols()
    }

    /// Number of rows of the trapdoored part (the ciphertext length is m+1).
    pub fn m(&self) -> usize {
        self.a_prime.rows() - 1
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_tag(w, TAG)?;
        codec::write_tag(w, b"PK")?;
        codec::write_matrix(w, &self.a_prime)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_tag(r, TAG)?;
        codec::expect_tag(r, b"PK")?;
        let a_prime = codec::read_matrix(r)?;
        if a_prime.rows() < 2 {
            return Err(Error::Format("public key needs at least two rows".into()));
        }
        Ok(DualPublicKey { a_prime })
    }
}

/// The secret e_sk ∈ {0,1}^m; the decryption vector is (−e_sk, 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualSecretKey {
    e_sk: Vec<bool>,
}

impl DualSecretKey {
    pub fn from_bits(e_sk: Vec<bool>) -> Self {
        DualSecretKey { e_sk }
    }

    pub fn bits(&self) -> &[bool] {
        &self.e_sk
    }

    /// sk = (−e_sk, 1) as a ring vector.
    pub fn vector(&self, modulus: Modulus) -> ModVector {
        let mut v: Vec<i128> = self.e_sk.iter().map(|&b| -(b as i128)).collect();
        v.push(1);
        ModMatrix::column(modulus, &v)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_tag(w, TAG)?;
        codec::write_tag(w, b"SK")?;
        codec::write_bits(w, &self.e_sk)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_tag(r, TAG)?;
        codec::expect_tag(r, b"SK")?;
        Ok(DualSecretKey { e_sk: codec::read_bits(r)? })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualKeys {
    pub pk: DualPublicKey,
    pub sk: DualSecretKey,
    pub td: TrapdoorMatrix,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualCiphertext {
    c: ModVector,
}

impl DualCiphertext {
    pub fn from_vector(c: ModVector) -> Self {
        DualCiphertext { c }
    }

    pub fn vector(&self) -> &ModVector {
        &self.c
    }

    pub fn modulus(&self) -> Modulus {
        self.c.modulus()
    }

    pub fn len(&self) -> usize {
        self.c.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.rows() == 0
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_tag(w, TAG)?;
        codec::write_tag(w, b"CT")?;
        codec::write_matrix(w, &self.c)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_tag(r, TAG)?;
        codec::expect_tag(r, b"CT")?;
        let c = codec::read_matrix(r)?;
        if c.cols() != 1 {
            return Err(Error::Format("ciphertext must be a column vector".into()));
        }
        Ok(DualCiphertext { c })
    }
}

pub fn dual_keygen<R: Rng + ?Sized>(params: &Params, rng: &mut R) -> Result<DualKeys> {
    params.check()?;
    let td = gen_trap(TrapdoorShape::from_params(params), rng)?;
    let e_sk: Vec<bool> = (0..params.m).map(|_| rng.gen::<bool>()).collect();
    let a = td.matrix();
    let md = params.modulus;
    let mut last = vec![0i128; params.n];
    for (i, &bit) in e_sk.iter().enumerate() {
        if bit {
            for (c, l) in last.iter_mut().enumerate() {
                *l = md.add(*l, a.get(i, c));
            }
        }
    }
    let a_prime = a.vstack(&ModMatrix::from_rows(md, 1, params.n, &last)?)?;
    Ok(DualKeys { pk: DualPublicKey { a_prime }, sk: DualSecretKey { e_sk }, td })
}

/// c = A′s + e + (0,…,0, μ·q/2) for explicit randomness.
pub fn dual_encrypt_with(pk: &DualPublicKey, mu: bool, s: &ModVector, e: &ModVector) -> Result<DualCiphertext> {
    let mut c = pk.a_prime.matmul(s)?.add(e)?;
    if mu {
        let last = c.rows() - 1;
        let md = c.modulus();
        c.set(last, 0, md.add(c.get(last, 0), md.half()));
    }
    Ok(DualCiphertext { c })
}

/// Fresh encryption with s uniform and e drawn from `noise` (dimension m+1).
pub fn dual_encrypt<R: Rng + ?Sized>(
    pk: &DualPublicKey,
    mu: bool,
    noise: &TruncGaussian,
    rng: &mut R,
) -> Result<DualCiphertext> {
    let md = pk.modulus();
    if noise.dim() != pk.m() + 1 {
        return Err(Error::Dimension(format!("noise of dimension {} for m+1 = {}", noise.dim(), pk.m() + 1)));
    }
    let s = ModMatrix::uniform(md, pk.n(), 1, rng);
    let e = ModMatrix::column(md, &noise.sample(rng));
    dual_encrypt_with(pk, mu, &s, &e)
}

/// b′ = skᵀc in balanced form.
pub fn dual_phase(sk: &DualSecretKey, c: &DualCiphertext) -> i128 {
    let md = c.modulus();
    let v = c.vector().as_slice();
    let mut acc = v[v.len() - 1];
    for (i, &bit) in sk.e_sk.iter().enumerate() {
        if bit {
            acc = md.sub(acc, v[i]);
        }
    }
    acc
}

/// 0 iff |b′| ≤ q/4; the boundary goes to 0.
pub fn dual_decrypt(sk: &DualSecretKey, c: &DualCiphertext) -> bool {
    let md = c.modulus();
    dual_phase(sk, c).abs() > md.quarter()
}

pub fn hom_xor(c1: &DualCiphertext, c2: &DualCiphertext) -> Result<DualCiphertext> {
    Ok(DualCiphertext { c: c1.c.add(&c2.c)? })
}

/// Undoes `hom_xor` by one of its summands.
pub fn xor_invert(sum: &DualCiphertext, c2: &DualCiphertext) -> Result<DualCiphertext> {
    Ok(DualCiphertext { c: sum.c.sub(&c2.c)? })
}

/// Randomness (μ, s, e) of a ciphertext, as recovered with the trapdoor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Randomness {
    pub mu: bool,
    pub s: ModVector,
    pub e: ModVector,
}

impl Randomness {
    /// Register width for (μ, s, e): 1 + (n + m + 1)·log q.
    pub fn bit_len(modulus: Modulus, n: usize, m: usize) -> usize {
        1 + (n + m + 1) * modulus.log_q() as usize
    }

    /// μ first, then every entry of s and e as a little-endian residue.
    pub fn to_bits(&self) -> Vec<bool> {
        let md = self.s.modulus();
        let k = md.log_q();
        let mut out = Vec::with_capacity(1 + (self.s.len() + self.e.len()) * k as usize);
        out.push(self.mu);
        for &x in self.s.as_slice().iter().chain(self.e.as_slice()) {
            let r = md.residue(x);
            out.extend((0..k).map(|j| (r >> j) & 1 == 1));
        }
        out
    }

    pub fn from_bits(modulus: Modulus, n: usize, m: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != Self::bit_len(modulus, n, m) {
            return Err(Error::Dimension(format!("{} randomness bits for n = {n}, m = {m}", bits.len())));
        }
        let k = modulus.log_q() as usize;
        let words: Vec<i128> = bits[1..]
            .chunks(k)
            .map(|w| modulus.from_wrapping(w.iter().rev().fold(0u128, |acc, &b| (acc << 1) | b as u128)))
            .collect();
        Ok(Randomness {
            mu: bits[0],
            s: ModMatrix::column(modulus, &words[..n]),
            e: ModMatrix::column(modulus, &words[n..]),
        })
    }
}

/// Recovers (μ, s, e) with c = A′s + e + (0,…,0, μq/2) and ‖e‖∞ ≤ radius.
pub fn recover_randomness(
    pk: &DualPublicKey,
    td: &TrapdoorMatrix,
    c: &DualCiphertext,
    radius: u128,
) -> Result<Randomness> {
    let md = pk.modulus();
    let m = pk.m();
    if c.len() != m + 1 {
        return Err(Error::Dimension(format!("ciphertext length {} for m+1 = {}", c.len(), m + 1)));
    }
    let top = c.c.row_range(0, m);
    let (s, e_top) = td.invert_within(&top, radius)?;
    let last_row = pk.a_prime.row_range(m, m + 1);
    let x = md.sub(c.c.get(m, 0), last_row.matmul(&s)?.get(0, 0));
    let mu = x.abs() > md.quarter();
    let e_last = if mu { md.sub(x, md.half()) } else { x };
    if e_last.unsigned_abs() > radius {
        return Err(Error::InversionFailure(format!("last error entry {e_last} exceeds {radius}")));
    }
    let mut e_vals = e_top.as_slice().to_vec();
    e_vals.push(e_last);
    let e = ModMatrix::column(md, &e_vals);
    let check = dual_encrypt_with(pk, mu, &s, &e)?;
    if check != *c {
        return Err(Error::InversionFailure("consistency recheck failed".into()));
    }
    Ok(Randomness { mu, s, e })
}


#[cfg(test)]
mod properties {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::{dual_decrypt, dual_encrypt, dual_keygen, hom_xor, DualCiphertext, Randomness};
    use crate::distributions::TruncGaussian;
    use crate::presets;
    use crate::ringmod::{ModMatrix, Modulus};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn randomness_bits_round_trip(seed in any::<u64>(), log_q in 2u32..20, n in 1usize..4, m in 1usize..5) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let md = Modulus::new(log_q).unwrap();
            let r = Randomness {
                mu: seed & 1 == 1,
                s: ModMatrix::uniform(md, n, 1, &mut rng),
                e: ModMatrix::uniform(md, m + 1, 1, &mut rng),
            };
            let bits = r.to_bits();
            prop_assert_eq!(bits.len(), Randomness::bit_len(md, n, m));
            prop_assert_eq!(Randomness::from_bits(md, n, m, &bits).unwrap(), r);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn xor_and_serialization_at_desk(seed in any::<u64>(), b1 in any::<bool>(), b2 in any::<bool>()) {
            let preset = presets::desk();
            let p = &preset.params;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let keys = dual_keygen(p, &mut rng).unwrap();
            let noise = TruncGaussian::new(p.modulus, preset.key_width, p.m + 1).unwrap();
            let c1 = dual_encrypt(&keys.pk, b1, &noise, &mut rng).unwrap();
            let c2 = dual_encrypt(&keys.pk, b2, &noise, &mut rng).unwrap();
            prop_assert_eq!(dual_decrypt(&keys.sk, &hom_xor(&c1, &c2).unwrap()), b1 ^ b2);
            let mut buf = Vec::new();
            c1.write_to(&mut buf).unwrap();
            prop_assert_eq!(DualCiphertext::read_from(&mut buf.as_slice()).unwrap(), c1);
        }
    }
}
