//! Leveled quantum homomorphic encryption: a Pauli one-time pad whose keys
//! are dual ciphertexts. Cliffords update the encrypted keys directly.
//! A layer of Toffolis is corrected with three encrypted CNOTs each, and
//! at the end of every layer the keys move to the next public key of the
//! chain, either through a trusted evaluator (oracle mode) or by running
//! the update circuits homomorphically (faithful mode).

use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;

use crate::boolcirc::{compile_decrypt_tables, compile_trapdoor_tables, Builder, Circuit, KeyUpdateSuite, Signal};
use crate::codec;
use crate::distributions::TruncGaussian;
use crate::dualenc::{dual_decrypt, dual_encrypt, dual_encrypt_with, dual_keygen, hom_xor, DualCiphertext, DualPublicKey, DualSecretKey};
use crate::dualfhe::{convert, gsw_encrypt, GswCiphertext, NoiseBudget};
use crate::enccnot::{corrections, encrypted_cnot_sampled_on, resolve, CnotContext, CnotOutcome};
use crate::error::{Error, Result};
use crate::presets::Preset;
use crate::qsim::{toffoli_key_update, Gate, PauliFrame, QuantumCircuit, StateVector};
use crate::ringmod::{ModMatrix, Modulus, Params};
use crate::trapdoor::TrapdoorMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// A trusted evaluator holding sk_i and the trapdoor computes the new
    /// keys in the clear and encrypts them under pk_{i+1}.
    Oracle,
    /// The update circuits run on GSW encryptions of sk_i and the trapdoor.
    Faithful,
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(UpdateMode::Oracle),
            "faithful" => Ok(UpdateMode::Faithful),
            _ => Err(Error::Config(format!("unknown mode `{s}` (oracle or faithful)"))),
        }
    }
}

/// GSW encryptions of sk_i and of the trapdoor bits of level i, under
/// pk_{i+1}.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyBundle {
    pub sk_bits: Vec<GswCiphertext>,
    pub td_bits: Vec<GswCiphertext>,
}

/// Public evaluation material for L levels.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalKeyChain {
    params: Params,
    d_width: f64,
    key_width: f64,
    /// pk_1 ..= pk_{L+1}.
    pks: Vec<DualPublicKey>,
    /// Public part of the trapdoor of levels 1 ..= L; the secret is zeroed.
    td_public: Vec<TrapdoorMatrix>,
    /// Bundles for levels 1 ..= L, when provisioned.
    bundles: Vec<Option<KeyBundle>>,
}

impl EvalKeyChain {
    pub fn levels(&self) -> usize {
        self.pks.len() - 1
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn modulus(&self) -> Modulus {
        self.params.modulus
    }

    pub fn pk(&self, level: usize) -> Result<&DualPublicKey> {
        level.checked_sub(1).and_then(|i| self.pks.get(i)).ok_or_else(|| Error::Config(format!("no key for level {level}")))
    }

    pub fn bundle(&self, level: usize) -> Option<&KeyBundle> {
        level.checked_sub(1).and_then(|i| self.bundles.get(i)).and_then(|b| b.as_ref())
    }

    pub fn has_bundles(&self) -> bool {
        self.bundles.iter().all(|b| b.is_some())
    }

    pub fn key_noise(&self) -> Result<TruncGaussian> {
        TruncGaussian::new(self.params.modulus, self.key_width, self.params.m + 1)
    }

    pub fn d_noise(&self) -> Result<TruncGaussian> {
        TruncGaussian::new(self.params.modulus, self.d_width, self.params.m + 1)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_tag(w, b"CHAIN1")?;
        write_params(w, &self.params)?;
        codec::write_f64(w, self.d_width)?;
        codec::write_f64(w, self.key_width)?;
        codec::write_u64(w, self.levels() as u64)?;
        for pk in &self.pks {
            pk.write_to(w)?;
        }
        for td in &self.td_public {
            td.write_to(w)?;
        }
        for b in &self.bundles {
            match b {
                None => codec::write_u64(w, 0)?,
                Some(b) => {
                    codec::write_u64(w, 1)?;
                    write_gsw_list(w, &b.sk_bits)?;
                    write_gsw_list(w, &b.td_bits)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_tag(r, b"CHAIN1")?;
        let params = read_params(r)?;
        let d_width = codec::read_f64(r)?;
        let key_width = codec::read_f64(r)?;
        let levels = codec::read_u64(r)? as usize;
        if levels > 1 << 16 {
            return Err(Error::Format(format!("{levels} levels")));
        }
        let pks = (0..=levels).map(|_| DualPublicKey::read_from(r)).collect::<Result<_>>()?;
        let td_public = (0..levels).map(|_| TrapdoorMatrix::read_from(r)).collect::<Result<_>>()?;
        let bundles = (0..levels)
            .map(|_| match codec::read_u64(r)? {
                0 => Ok(None),
                1 => Ok(Some(KeyBundle { sk_bits: read_gsw_list(r)?, td_bits: read_gsw_list(r)? })),
                t => Err(Error::Format(format!("bundle flag {t}"))),
            })
            .collect::<Result<_>>()?;
        Ok(EvalKeyChain { params, d_width, key_width, pks, td_public, bundles })
    }
}

fn write_gsw_list<W: Write>(w: &mut W, cts: &[GswCiphertext]) -> Result<()> {
    codec::write_u64(w, cts.len() as u64)?;
    cts.iter().try_for_each(|c| c.write_to(w))
}

fn read_gsw_list<R: Read>(r: &mut R) -> Result<Vec<GswCiphertext>> {
    let n = codec::read_u64(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Format(format!("{n} ciphertexts")));
    }
    (0..n).map(|_| GswCiphertext::read_from(r)).collect()
}

pub fn write_params<W: Write>(w: &mut W, p: &Params) -> Result<()> {
    codec::write_tag(w, b"PARAMS1")?;
    for v in [
        p.lambda as u64,
        p.log_q() as u64,
        p.n as u64,
        p.m as u64,
        p.beta_init,
        p.levels as u64,
        p.level_depth as u64,
        p.eta as u64,
        p.eta_c as u64,
        p.base_bits as u64,
    ] {
        codec::write_u64(w, v)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<Params> {
    codec::expect_tag(r, b"PARAMS1")?;
    let mut v = [0u64; 10];
    for x in v.iter_mut() {
        *x = codec::read_u64(r)?;
    }
    let small = |x: u64| u32::try_from(x).map_err(|_| Error::Format(format!("parameter {x} out of range")));
    let p = Params {
        lambda: small(v[0])?,
        modulus: Modulus::new(small(v[1])?)?,
        n: v[2] as usize,
        m: v[3] as usize,
        beta_init: v[4],
        levels: v[5] as usize,
        level_depth: v[6] as usize,
        eta: small(v[7])?,
        eta_c: small(v[8])?,
        base_bits: small(v[9])?,
    };
    p.check()?;
    Ok(p)
}

/// Secret material of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSecrets {
    pub sk: DualSecretKey,
    pub td: TrapdoorMatrix,
}

/// Holds sk_i and the trapdoor of levels 1 ..= L. The sampled simulation of
/// the encrypted CNOT needs the trapdoor to build the post-measurement
/// state in either mode; only oracle mode uses it to update keys.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustedEvaluator {
    levels: Vec<LevelSecrets>,
}

impl TrustedEvaluator {
    pub fn level(&self, level: usize) -> Result<&LevelSecrets> {
        level
            .checked_sub(1)
            .and_then(|i| self.levels.get(i))
            .ok_or_else(|| Error::Config(format!("no secrets for level {level}")))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_tag(w, b"EVAL1")?;
        codec::write_u64(w, self.levels.len() as u64)?;
        for l in &self.levels {
            l.sk.write_to(w)?;
            l.td.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_tag(r, b"EVAL1")?;
        let n = codec::read_u64(r)? as usize;
        if n > 1 << 16 {
            return Err(Error::Format(format!("{n} levels")));
        }
        let levels = (0..n)
            .map(|_| Ok(LevelSecrets { sk: DualSecretKey::read_from(r)?, td: TrapdoorMatrix::read_from(r)? }))
            .collect::<Result<_>>()?;
        Ok(TrustedEvaluator { levels })
    }
}

pub struct QheKeys {
    /// pk_1.
    pub pk: DualPublicKey,
    pub chain: EvalKeyChain,
    /// sk_{L+1}.
    pub sk: DualSecretKey,
    pub evaluator: TrustedEvaluator,
}

/// Generates L+1 key pairs. With `bundles`, the secrets of level i are
/// GSW-encrypted under pk_{i+1} for faithful updates.
pub fn qhe_keygen<R: Rng + ?Sized>(preset: &Preset, levels: usize, bundles: bool, rng: &mut R) -> Result<QheKeys> {
    let params = &preset.params;
    params.check()?;
    let keys = (0..=levels).map(|_| dual_keygen(params, rng)).collect::<Result<Vec<_>>>()?;
    let noise = TruncGaussian::new(params.modulus, preset.key_width, 1)?;
    let mut bundle_list = Vec::with_capacity(levels);
    for i in 0..levels {
        bundle_list.push(if bundles {
            let next = &keys[i + 1].pk;
            let enc = |bits: Vec<bool>, rng: &mut R| -> Result<Vec<GswCiphertext>> {
                bits.into_iter().map(|b| gsw_encrypt(next, b, &noise, rng)).collect()
            };
            Some(KeyBundle { sk_bits: enc(keys[i].sk.bits().to_vec(), rng)?, td_bits: enc(keys[i].td.secret_bits(), rng)? })
        } else {
            None
        });
    }
    let chain = EvalKeyChain {
        params: params.clone(),
        d_width: preset.d_width,
        key_width: preset.key_width,
        pks: keys.iter().map(|k| k.pk.clone()).collect(),
        td_public: keys[..levels].iter().map(|k| k.td.with_secret(vec![0; k.td.secret().len()])).collect(),
        bundles: bundle_list,
    };
    let evaluator = TrustedEvaluator {
        levels: keys[..levels].iter().map(|k| LevelSecrets { sk: k.sk.clone(), td: k.td.clone() }).collect(),
    };
    let last = keys.last().expect("at least one level");
    Ok(QheKeys { pk: keys[0].pk.clone(), chain, sk: last.sk.clone(), evaluator })
}

/// A padded register: a classical string x ⊕ m, or Z^z X^x |ψ⟩.
#[derive(Clone, Debug, PartialEq)]
pub enum Register {
    Bits(Vec<bool>),
    State(StateVector),
}

impl Register {
    pub fn num_qubits(&self) -> usize {
        match self {
            Register::Bits(b) => b.len(),
            Register::State(s) => s.num_qubits(),
        }
    }

    /// The basis state of a classical string, qubit q holding bit q.
    pub fn to_state(&self) -> Result<StateVector> {
        match self {
            Register::Bits(b) => StateVector::basis(b.len(), b.iter().enumerate().fold(0, |v, (q, &x)| v | (x as usize) << q)),
            Register::State(s) => Ok(s.clone()),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        match self {
            Register::Bits(b) => {
                codec::write_tag(w, b"BITS")?;
                codec::write_bits(w, b)
            }
            Register::State(s) => {
                codec::write_tag(w, b"STATE")?;
                codec::write_u64(w, s.num_qubits() as u64)?;
                for a in s.amplitudes() {
                    codec::write_f64(w, a.re)?;
                    codec::write_f64(w, a.im)?;
                }
                Ok(())
            }
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut len = [0u8; 1];
        r.read_exact(&mut len)?;
        let mut tag = vec![0u8; len[0] as usize];
        r.read_exact(&mut tag)?;
        match tag.as_slice() {
            b"BITS" => Ok(Register::Bits(codec::read_bits(r)?)),
            b"STATE" => {
                let n = codec::read_u64(r)? as usize;
                if n > crate::qsim::MAX_DENSE_QUBITS {
                    return Err(Error::Capacity(n));
                }
                let amps = (0..1usize << n)
                    .map(|_| Ok(Complex64::new(codec::read_f64(r)?, codec::read_f64(r)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Register::State(StateVector::from_amplitudes(amps)?))
            }
            _ => Err(Error::Format(format!("register tag {:?}", String::from_utf8_lossy(&tag)))),
        }
    }
}

/// An encrypted CNOT whose corrections are still to be folded into the keys.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingCnot {
    pub c_hat: DualCiphertext,
    pub y: DualCiphertext,
    pub d: Vec<bool>,
}

impl PendingCnot {
    fn from_outcome(o: &CnotOutcome, c_hat: &DualCiphertext) -> Self {
        PendingCnot { c_hat: c_hat.clone(), y: o.y.clone(), d: o.d.clone() }
    }
}

/// Key changes applied at the end of a level.
#[derive(Clone, Debug, PartialEq)]
pub enum KeyOp {
    /// One encrypted CNOT: z_control ^= z_corr, x_target ^= x_corr.
    Cnot { control: usize, target: usize, cnot: PendingCnot },
    /// A Toffoli on (a, b, t): the product update of its keys, then the
    /// corrections of CNOT(a→t)^{x_b}, CNOT(b→t)^{x_a} and, conjugated by H
    /// on b, CNOT(a→b)^{z_t}.
    Toffoli { qubits: [usize; 3], cnots: [PendingCnot; 3] },
}

impl KeyOp {
    fn cnots(&self) -> Vec<&PendingCnot> {
        match self {
            KeyOp::Cnot { cnot, .. } => vec![cnot],
            KeyOp::Toffoli { cnots, .. } => cnots.iter().collect(),
        }
    }
}

fn zk(q: usize) -> usize {
    2 * q
}

fn xk(q: usize) -> usize {
    2 * q + 1
}

/// New key bits from the old ones (z_0, x_0, z_1, …) and two correction
/// bits (z, x) per encrypted CNOT, in op order.
pub fn next_keys_clear(old: &[bool], ops: &[KeyOp], corr: &[bool]) -> Vec<bool> {
    let mut new = old.to_vec();
    let mut c = corr.chunks(2);
    let mut next = || c.next().expect("two correction bits per encrypted CNOT");
    for op in ops {
        match op {
            KeyOp::Cnot { control, target, .. } => {
                let k = next();
                new[zk(*control)] ^= k[0];
                new[xk(*target)] ^= k[1];
            }
            KeyOp::Toffoli { qubits: [a, b, t], .. } => {
                let qs = [*a, *b, *t];
                let (zn, xn) = toffoli_key_update(qs.map(|q| old[zk(q)]), qs.map(|q| old[xk(q)]));
                for (j, &q) in qs.iter().enumerate() {
                    new[zk(q)] = zn[j];
                    new[xk(q)] = xn[j];
                }
                let (c1, c2, c3) = (next(), next(), next());
                new[zk(*a)] ^= c1[0] ^ c3[0];
                new[xk(*t)] ^= c1[1] ^ c2[1];
                new[zk(*b)] ^= c2[0] ^ c3[1];
            }
        }
    }
    new
}

/// The same update as a NAND circuit with ports `keys` and `corr`.
pub fn compile_level_update(num_keys: usize, ops: &[KeyOp]) -> Circuit {
    let mut b = Builder::new();
    let old = b.input("keys", num_keys);
    let corr_len: usize = ops.iter().map(|op| 2 * op.cnots().len()).sum();
    let corr = b.input("corr", corr_len);
    let mut new: Vec<Signal> = old.clone();
    let mut c = corr.chunks(2);
    for op in ops {
        match op {
            KeyOp::Cnot { control, target, .. } => {
                let k = c.next().expect("sized above");
                new[zk(*control)] = b.xor(new[zk(*control)], k[0]);
                new[xk(*target)] = b.xor(new[xk(*target)], k[1]);
            }
            KeyOp::Toffoli { qubits: [a, bq, t], .. } => {
                let (a, bq, t) = (*a, *bq, *t);
                let (c1, c2, c3) = (c.next().expect("sized"), c.next().expect("sized"), c.next().expect("sized"));
                let xb_zt = b.and(old[xk(bq)], old[zk(t)]);
                let xa_zt = b.and(old[xk(a)], old[zk(t)]);
                let xa_xb = b.and(old[xk(a)], old[xk(bq)]);
                new[zk(a)] = b.xor_all(&[old[zk(a)], xb_zt, c1[0], c3[0]]);
                new[zk(bq)] = b.xor_all(&[old[zk(bq)], xa_zt, c2[0], c3[1]]);
                new[xk(t)] = b.xor_all(&[old[xk(t)], xa_xb, c1[1], c2[1]]);
            }
        }
    }
    b.output("next", new);
    b.finish()
}

/// A QHE ciphertext: the padded register, encryptions of its keys under
/// pk_level in the order (z_0, x_0, z_1, x_1, …), and key changes that wait
/// for the end of the level.
#[derive(Clone, Debug, PartialEq)]
pub struct QheCiphertext {
    pub padded: Register,
    pub keys: Vec<DualCiphertext>,
    pub level: usize,
    pending: Vec<KeyOp>,
    /// Encrypted CNOTs whose control collapsed so far.
    pub collapsed: usize,
}

impl QheCiphertext {
    pub fn num_qubits(&self) -> usize {
        self.padded.num_qubits()
    }

    pub fn pending(&self) -> &[KeyOp] {
        &self.pending
    }

    fn state_mut(&mut self) -> Result<&mut StateVector> {
        if let Register::Bits(_) = self.padded {
            self.padded = Register::State(self.padded.to_state()?);
        }
        match &mut self.padded {
            Register::State(s) => Ok(s),
            Register::Bits(_) => unreachable!("promoted above"),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if !self.pending.is_empty() {
            return Err(Error::Config("finish the level before serializing".into()));
        }
        codec::write_tag(w, b"QHE1")?;
        codec::write_u64(w, self.level as u64)?;
        codec::write_u64(w, self.collapsed as u64)?;
        self.padded.write_to(w)?;
        codec::write_u64(w, self.keys.len() as u64)?;
        self.keys.iter().try_for_each(|k| k.write_to(w))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_tag(r, b"QHE1")?;
        let level = codec::read_u64(r)? as usize;
        let collapsed = codec::read_u64(r)? as usize;
        let padded = Register::read_from(r)?;
        let n = codec::read_u64(r)? as usize;
        if n != 2 * padded.num_qubits() {
            return Err(Error::Format(format!("{n} keys for {} qubits", padded.num_qubits())));
        }
        let keys = (0..n).map(|_| DualCiphertext::read_from(r)).collect::<Result<_>>()?;
        Ok(QheCiphertext { padded, keys, level, pending: Vec::new(), collapsed })
    }
}

/// Pads with fresh uniform keys and encrypts them under pk_1.
pub fn qhe_encrypt<R: Rng + ?Sized>(chain: &EvalKeyChain, m: &Register, rng: &mut R) -> Result<QheCiphertext> {
    let n = m.num_qubits();
    let frame = PauliFrame::random(n, rng);
    let padded = match m {
        Register::Bits(b) => Register::Bits(b.iter().zip(&frame.x).map(|(a, k)| a ^ k).collect()),
        Register::State(s) => {
            let mut s = s.clone();
            frame.apply(&mut s)?;
            Register::State(s)
        }
    };
    let keys = encrypt_keys(chain.pk(1)?, &frame, &chain.key_noise()?, rng)?;
    Ok(QheCiphertext { padded, keys, level: 1, pending: Vec::new(), collapsed: 0 })
}

fn encrypt_keys<R: Rng + ?Sized>(
    pk: &DualPublicKey,
    frame: &PauliFrame,
    noise: &TruncGaussian,
    rng: &mut R,
) -> Result<Vec<DualCiphertext>> {
    let bits: Vec<bool> = frame.z.iter().zip(&frame.x).flat_map(|(&z, &x)| [z, x]).collect();
    bits.into_iter().map(|b| dual_encrypt(pk, b, noise, rng)).collect()
}

/// Decrypts the keys with the secret key of the ciphertext's level.
pub fn decrypt_keys(sk: &DualSecretKey, ct: &QheCiphertext) -> PauliFrame {
    let bits: Vec<bool> = ct.keys.iter().map(|k| dual_decrypt(sk, k)).collect();
    PauliFrame { z: bits.iter().step_by(2).copied().collect(), x: bits.iter().skip(1).step_by(2).copied().collect() }
}

/// Decryption with sk_{L+1}; the ciphertext must be at level L+1.
pub fn qhe_decrypt(sk: &DualSecretKey, chain: &EvalKeyChain, ct: &QheCiphertext) -> Result<Register> {
    if ct.level != chain.levels() + 1 || !ct.pending.is_empty() {
        return Err(Error::Config(format!("ciphertext at level {}, decryption needs level {}", ct.level, chain.levels() + 1)));
    }
    decrypt_at(sk, ct)
}

/// Decryption with the secret key of whatever level `ct` is at.
pub fn decrypt_at(sk: &DualSecretKey, ct: &QheCiphertext) -> Result<Register> {
    let frame = decrypt_keys(sk, ct);
    match &ct.padded {
        Register::Bits(b) => Ok(Register::Bits(b.iter().zip(&frame.x).map(|(a, k)| a ^ k).collect())),
        Register::State(s) => {
            let mut s = s.clone();
            frame.undo(&mut s)?;
            Ok(Register::State(s))
        }
    }
}

fn flip(pk: &DualPublicKey, c: &DualCiphertext) -> Result<DualCiphertext> {
    let md = pk.modulus();
    let zero_s = ModMatrix::zeros(md, pk.n(), 1);
    let zero_e = ModMatrix::zeros(md, pk.m() + 1, 1);
    hom_xor(c, &dual_encrypt_with(pk, true, &zero_s, &zero_e)?)
}

/// Applies a Clifford: Paulis only flip keys, the others act on the
/// register and update the keys by XOR and swaps of ciphertexts.
pub fn apply_clifford(ct: &mut QheCiphertext, gate: &Gate, chain: &EvalKeyChain) -> Result<()> {
    if !gate.is_clifford() {
        return Err(Error::UnsupportedGate(format!("{gate} is not a Clifford")));
    }
    gate.check(ct.num_qubits())?;
    if !ct.pending.is_empty() {
        return Err(Error::Config("Cliffords cannot follow a Toffoli within a level".into()));
    }
    let pk = chain.pk(ct.level)?;
    let k = &mut ct.keys;
    match *gate {
        Gate::X(q) => k[xk(q)] = flip(pk, &k[xk(q)])?,
        Gate::Z(q) => k[zk(q)] = flip(pk, &k[zk(q)])?,
        Gate::H(q) => k.swap(zk(q), xk(q)),
        Gate::K(q) => k[zk(q)] = hom_xor(&k[zk(q)], &k[xk(q)])?,
        Gate::Cnot(c, t) => {
            k[xk(t)] = hom_xor(&k[xk(t)], &k[xk(c)])?;
            k[zk(c)] = hom_xor(&k[zk(c)], &k[zk(t)])?;
        }
        Gate::Cz(a, b) => {
            let za = hom_xor(&k[zk(a)], &k[xk(b)])?;
            k[zk(b)] = hom_xor(&k[zk(b)], &k[xk(a)])?;
            k[zk(a)] = za;
        }
        Gate::Toffoli(..) => unreachable!("checked above"),
    }
    match (&mut ct.padded, *gate) {
        (_, Gate::X(_) | Gate::Z(_)) => {}
        (Register::Bits(b), Gate::Cnot(c, t)) => b[t] ^= b[c],
        _ => ct.state_mut()?.apply(gate)?,
    }
    Ok(())
}

/// Applies a Toffoli to the register and runs its three encrypted CNOTs,
/// leaving the key changes pending until `finish_level`.
pub fn queue_toffoli<R: Rng + ?Sized>(
    ct: &mut QheCiphertext,
    qubits: [usize; 3],
    chain: &EvalKeyChain,
    evaluator: &TrustedEvaluator,
    rng: &mut R,
) -> Result<()> {
    let [a, b, t] = qubits;
    Gate::Toffoli(a, b, t).check(ct.num_qubits())?;
    let busy = ct.pending.iter().any(|op| match op {
        KeyOp::Toffoli { qubits: q, .. } => q.iter().any(|x| qubits.contains(x)),
        KeyOp::Cnot { control, target, .. } => qubits.contains(control) || qubits.contains(target),
    });
    if busy {
        return Err(Error::Config("Toffolis within a level must act on disjoint qubits".into()));
    }
    let level = ct.level;
    let noise = chain.d_noise()?;
    let secrets = evaluator.level(level)?;
    let ctx = CnotContext { pk: chain.pk(level)?, td: &secrets.td, noise: &noise };
    let exps = [ct.keys[xk(b)].clone(), ct.keys[xk(a)].clone(), ct.keys[zk(t)].clone()];
    let state = ct.state_mut()?;
    state.apply(&Gate::Toffoli(a, b, t))?;
    let o1 = encrypted_cnot_sampled_on(state, a, t, &exps[0], &ctx, rng)?;
    let o2 = encrypted_cnot_sampled_on(&o1.out_state, b, t, &exps[1], &ctx, rng)?;
    let mut s = o2.out_state.clone();
    s.apply(&Gate::H(b))?;
    let o3 = encrypted_cnot_sampled_on(&s, a, b, &exps[2], &ctx, rng)?;
    let mut s = o3.out_state.clone();
    s.apply(&Gate::H(b))?;
    *state = s;
    ct.collapsed += [&o1, &o2, &o3].iter().filter(|o| o.collapsed()).count();
    ct.pending.push(KeyOp::Toffoli {
        qubits,
        cnots: [
            PendingCnot::from_outcome(&o1, &exps[0]),
            PendingCnot::from_outcome(&o2, &exps[1]),
            PendingCnot::from_outcome(&o3, &exps[2]),
        ],
    });
    Ok(())
}

/// Runs one encrypted CNOT^s on (control, target), s encrypted in `c_hat`
/// under the current level key. Only the Pauli correction of the encrypted
/// CNOT is queued; the existing pad is not conjugated by CNOT^s.
pub fn queue_encrypted_cnot<R: Rng + ?Sized>(
    ct: &mut QheCiphertext,
    control: usize,
    target: usize,
    c_hat: &DualCiphertext,
    chain: &EvalKeyChain,
    evaluator: &TrustedEvaluator,
    rng: &mut R,
) -> Result<CnotOutcome> {
    let level = ct.level;
    let noise = chain.d_noise()?;
    let secrets = evaluator.level(level)?;
    let ctx = CnotContext { pk: chain.pk(level)?, td: &secrets.td, noise: &noise };
    let state = ct.state_mut()?;
    let o = encrypted_cnot_sampled_on(state, control, target, c_hat, &ctx, rng)?;
    *state = o.out_state.clone();
    ct.collapsed += o.collapsed() as usize;
    ct.pending.push(KeyOp::Cnot { control, target, cnot: PendingCnot::from_outcome(&o, c_hat) });
    Ok(o)
}

/// Correction bits of every pending encrypted CNOT, from the trapdoor.
fn corrections_with(ctx: &CnotContext, ops: &[KeyOp]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for c in ops.iter().flat_map(|op| op.cnots()) {
        let res = resolve(ctx, &c.c_hat, &c.y)?;
        let (z, x) = corrections(ctx, &c.c_hat, &res, &c.d)?;
        out.extend([z, x]);
    }
    Ok(out)
}

/// Moves `keys` (under pk_level) to encryptions under pk_{level+1} with
/// `ops` folded in.
pub fn update_keys<R: Rng + ?Sized>(
    keys: &[DualCiphertext],
    ops: &[KeyOp],
    level: usize,
    chain: &EvalKeyChain,
    evaluator: &TrustedEvaluator,
    mode: UpdateMode,
    rng: &mut R,
) -> Result<Vec<DualCiphertext>> {
    if level == 0 || level > chain.levels() {
        return Err(Error::Config(format!("no key update out of level {level} in a chain of {}", chain.levels())));
    }
    let pk = chain.pk(level)?;
    let next_pk = chain.pk(level + 1)?;
    let noise = chain.d_noise()?;
    match mode {
        UpdateMode::Oracle => {
            let secrets = evaluator.level(level)?;
            let old: Vec<bool> = keys.iter().map(|k| dual_decrypt(&secrets.sk, k)).collect();
            let ctx = CnotContext { pk, td: &secrets.td, noise: &noise };
            let corr = corrections_with(&ctx, ops)?;
            let key_noise = chain.key_noise()?;
            next_keys_clear(&old, ops, &corr).into_iter().map(|b| dual_encrypt(next_pk, b, &key_noise, rng)).collect()
        }
        UpdateMode::Faithful => {
            let bundle = chain
                .bundle(level)
                .ok_or_else(|| Error::Config(format!("faithful mode needs the key bundle of level {level}")))?;
            let suite = compile_level_suite(keys, ops, level, chain, &noise)?;
            let budget = NoiseBudget::from_params(&chain.params);
            let out = suite.eval_homomorphic(&bundle.sk_bits, &bundle.td_bits, chain.modulus(), chain.params.m, &budget)?;
            Ok(out.iter().map(convert).collect())
        }
    }
}

/// The decryption, recovery and update circuits of one level. Trapdoor
/// candidates under which a recovery fails contribute zero corrections.
pub fn compile_level_suite(
    keys: &[DualCiphertext],
    ops: &[KeyOp],
    level: usize,
    chain: &EvalKeyChain,
    noise: &TruncGaussian,
) -> Result<KeyUpdateSuite> {
    let pk = chain.pk(level)?;
    let td_public = &chain.td_public[level - 1];
    let n_corr: usize = ops.iter().map(|op| 2 * op.cnots().len()).sum();
    let dec = compile_decrypt_tables(chain.params.m, keys)?;
    let recover = compile_trapdoor_tables(td_public, n_corr, |td| {
        let ctx = CnotContext { pk, td, noise };
        Ok(corrections_with(&ctx, ops).unwrap_or_else(|_| vec![false; n_corr]))
    })?;
    Ok(KeyUpdateSuite { dec, recover, update: compile_level_update(keys.len(), ops) })
}

/// Folds the pending key changes in and moves to the next level.
pub fn finish_level<R: Rng + ?Sized>(
    ct: &mut QheCiphertext,
    chain: &EvalKeyChain,
    evaluator: &TrustedEvaluator,
    mode: UpdateMode,
    rng: &mut R,
) -> Result<()> {
    ct.keys = update_keys(&ct.keys, &ct.pending, ct.level, chain, evaluator, mode, rng)?;
    ct.pending.clear();
    ct.level += 1;
    Ok(())
}

/// One Toffoli as a full level.
pub fn apply_toffoli<R: Rng + ?Sized>(
    ct: &mut QheCiphertext,
    qubits: [usize; 3],
    chain: &EvalKeyChain,
    evaluator: &TrustedEvaluator,
    mode: UpdateMode,
    rng: &mut R,
) -> Result<()> {
    queue_toffoli(ct, qubits, chain, evaluator, rng)?;
    finish_level(ct, chain, evaluator, mode, rng)
}

/// Updates the keys (z_c, x_c, z_t, x_t) of a control and target after one
/// encrypted CNOT with outcome `outcome` and exponent `c_hat`.
#[allow(clippy::too_many_arguments)]
pub fn keyupdate_pipeline<R: Rng + ?Sized>(
    outcome: &CnotOutcome,
    c_hat: &DualCiphertext,
    keys: &[DualCiphertext],
    level: usize,
    chain: &EvalKeyChain,
    evaluator: &TrustedEvaluator,
    mode: UpdateMode,
    rng: &mut R,
) -> Result<Vec<DualCiphertext>> {
    if keys.len() != 4 {
        return Err(Error::Dimension(format!("{} keys, expected (z_c, x_c, z_t, x_t)", keys.len())));
    }
    let op = KeyOp::Cnot { control: 0, target: 1, cnot: PendingCnot::from_outcome(outcome, c_hat) };
    update_keys(keys, &[op], level, chain, evaluator, mode, rng)
}

/// Evaluates a layered circuit; every layer is one level and the result is
/// at level L+1.
pub fn qhe_eval<R: Rng + ?Sized>(
    ct: &mut QheCiphertext,
    circuit: &QuantumCircuit,
    chain: &EvalKeyChain,
    evaluator: &TrustedEvaluator,
    mode: UpdateMode,
    rng: &mut R,
) -> Result<()> {
    if circuit.num_qubits != ct.num_qubits() {
        return Err(Error::Dimension(format!("circuit on {} qubits, ciphertext has {}", circuit.num_qubits, ct.num_qubits())));
    }
    if !circuit.is_layered() {
        return Err(Error::Config("each layer must be Cliffords followed by disjoint Toffolis".into()));
    }
    let available = (chain.levels() + 1).saturating_sub(ct.level);
    if circuit.layers.len() > available {
        return Err(Error::Config(format!("{} layers but {available} levels left", circuit.layers.len())));
    }
    for layer in &circuit.layers {
        for g in layer {
            match *g {
                Gate::Toffoli(a, b, t) => queue_toffoli(ct, [a, b, t], chain, evaluator, rng)?,
                _ => apply_clifford(ct, g, chain)?,
            }
        }
        finish_level(ct, chain, evaluator, mode, rng)?;
    }
    while ct.level <= chain.levels() {
        finish_level(ct, chain, evaluator, mode, rng)?;
    }
    Ok(())
}
