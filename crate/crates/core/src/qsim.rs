//! State-vector simulation. Qubit i is bit i of the basis index, and a
//! register of consecutive qubits holds its value little-endian.
//!
//! `StateVector` is dense (up to `MAX_DENSE_QUBITS`); `SparseState` keeps
//! only nonzero amplitudes and handles wide registers with small support.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::distributions::TruncGaussian;
use crate::error::{Error, Result};
use crate::ringmod::Modulus;

pub const MAX_DENSE_QUBITS: usize = 24;
pub const MAX_SPARSE_QUBITS: usize = 128;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    X(usize),
    Z(usize),
    H(usize),
    /// Phase gate diag(1, i).
    K(usize),
    Cnot(usize, usize),
    /// Controlled-Z.
    Cz(usize, usize),
    /// Controls, then target.
    Toffoli(usize, usize, usize),
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::X(q) | Gate::Z(q) | Gate::H(q) | Gate::K(q) => vec![q],
            Gate::Cnot(a, b) | Gate::Cz(a, b) => vec![a, b],
            Gate::Toffoli(a, b, c) => vec![a, b, c],
        }
    }

    pub fn is_clifford(&self) -> bool {
        !matches!(self, Gate::Toffoli(..))
    }

    pub fn check(&self, num_qubits: usize) -> Result<()> {
        let qs = self.qubits();
        for (i, &q) in qs.iter().enumerate() {
            if q >= num_qubits {
                return Err(Error::Dimension(format!("{self} on a {num_qubits}-qubit state")));
            }
            if qs[..i].contains(&q) {
                return Err(Error::Dimension(format!("{self} repeats a qubit")));
            }
        }
        Ok(())
    }

    /// The unitary on `num_qubits` qubits, built column by column.
    pub fn matrix(&self, num_qubits: usize) -> Result<DMatrix<Complex64>> {
        let dim = 1usize << num_qubits;
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for col in 0..dim {
            let mut s = StateVector::basis(num_qubits, col)?;
            s.apply(self)?;
            for (row, a) in s.amps.iter().enumerate() {
                m[(row, col)] = *a;
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::X(q) => write!(f, "X {q}"),
            Gate::Z(q) => write!(f, "Z {q}"),
            Gate::H(q) => write!(f, "H {q}"),
            Gate::K(q) => write!(f, "K {q}"),
            Gate::Cnot(a, b) => write!(f, "CNOT {a} {b}"),
            Gate::Cz(a, b) => write!(f, "CZ {a} {b}"),
            Gate::Toffoli(a, b, c) => write!(f, "T {a} {b} {c}"),
        }
    }
}

fn bit(idx: usize, q: usize) -> bool {
    (idx >> q) & 1 == 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0…0⟩.
    pub fn new(num_qubits: usize) -> Result<Self> {
        Self::basis(num_qubits, 0)
    }

    pub fn basis(num_qubits: usize, index: usize) -> Result<Self> {
        if num_qubits > MAX_DENSE_QUBITS {
            return Err(Error::Capacity(num_qubits));
        }
        if index >> num_qubits != 0 {
            return Err(Error::Dimension(format!("basis index {index} on {num_qubits} qubits")));
        }
        let mut amps = vec![ZERO; 1 << num_qubits];
        amps[index] = ONE;
        Ok(StateVector { num_qubits, amps })
    }

    /// Normalizes the given amplitudes; fails on the zero vector.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if !len.is_power_of_two() {
            return Err(Error::Dimension(format!("{len} amplitudes")));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_DENSE_QUBITS {
            return Err(Error::Capacity(num_qubits));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Dimension("zero state".into()));
        }
        Ok(StateVector { num_qubits, amps: amps.into_iter().map(|a| a / norm).collect() })
    }

    pub fn random<R: Rng + ?Sized>(num_qubits: usize, rng: &mut R) -> Result<Self> {
        let amps = (0..1usize << num_qubits)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        Self::from_amplitudes(amps)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.check(self.num_qubits)?;
        let len = self.amps.len();
        match *gate {
            Gate::X(q) => {
                for i in 0..len {
                    if !bit(i, q) {
                        self.amps.swap(i, i | 1 << q);
                    }
                }
            }
            Gate::Z(q) => {
                for (i, a) in self.amps.iter_mut().enumerate() {
                    if bit(i, q) {
                        *a = -*a;
                    }
                }
            }
            Gate::K(q) => {
                for (i, a) in self.amps.iter_mut().enumerate() {
                    if bit(i, q) {
                        *a *= I;
                    }
                }
            }
            Gate::H(q) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                for i in 0..len {
                    if !bit(i, q) {
                        let j = i | 1 << q;
                        let (a, b) = (self.amps[i], self.amps[j]);
                        self.amps[i] = (a + b) * s;
                        self.amps[j] = (a - b) * s;
                    }
                }
            }
            Gate::Cnot(c, t) => {
                for i in 0..len {
                    if bit(i, c) && !bit(i, t) {
                        self.amps.swap(i, i | 1 << t);
                    }
                }
            }
            Gate::Cz(a, b) => {
                for (i, amp) in self.amps.iter_mut().enumerate() {
                    if bit(i, a) && bit(i, b) {
                        *amp = -*amp;
                    }
                }
            }
            Gate::Toffoli(a, b, t) => {
                for i in 0..len {
                    if bit(i, a) && bit(i, b) && !bit(i, t) {
                        self.amps.swap(i, i | 1 << t);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply_all(&mut self, gates: &[Gate]) -> Result<()> {
        gates.iter().try_for_each(|g| self.apply(g))
    }

    /// Distribution of the standard-basis value of `qubits` (value bit j is
    /// qubit `qubits[j]`).
    pub fn probabilities(&self, qubits: &[usize]) -> Result<Vec<f64>> {
        check_register(qubits, self.num_qubits)?;
        let mut p = vec![0.0; 1 << qubits.len()];
        for (i, a) in self.amps.iter().enumerate() {
            p[register_value(i as u128, qubits) as usize] += a.norm_sqr();
        }
        Ok(p)
    }

    /// Standard-basis measurement of `qubits`; the state collapses and is
    /// renormalized.
    pub fn measure<R: Rng + ?Sized>(&mut self, qubits: &[usize], rng: &mut R) -> Result<Vec<bool>> {
        let probs = self.probabilities(qubits)?;
        let outcome = sample_index(&probs, rng);
        let norm = probs[outcome].sqrt();
        for (i, a) in self.amps.iter_mut().enumerate() {
            if register_value(i as u128, qubits) as usize == outcome {
                *a /= norm;
            } else {
                *a = ZERO;
            }
        }
        Ok((0..qubits.len()).map(|j| (outcome >> j) & 1 == 1).collect())
    }

    /// H on each qubit of the register, then a standard measurement.
    pub fn measure_hadamard<R: Rng + ?Sized>(&mut self, qubits: &[usize], rng: &mut R) -> Result<Vec<bool>> {
        for &q in qubits {
            self.apply(&Gate::H(q))?;
        }
        self.measure(qubits, rng)
    }

    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::Dimension("states of different width".into()));
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// self ⊗ other, with `other`'s qubits placed above this state's.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        let n = self.num_qubits + other.num_qubits;
        if n > MAX_DENSE_QUBITS {
            return Err(Error::Capacity(n));
        }
        let mut amps = Vec::with_capacity(1 << n);
        for b in &other.amps {
            for a in &self.amps {
                amps.push(a * b);
            }
        }
        Ok(StateVector { num_qubits: n, amps })
    }

    pub fn to_sparse(&self) -> SparseState {
        let amps = self
            .amps
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm_sqr() > 0.0)
            .map(|(i, a)| (i as u128, *a))
            .collect();
        SparseState { num_qubits: self.num_qubits, amps }
    }

    /// `index,re,im` lines for debugging.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,re,im\n");
        for (i, a) in self.amps.iter().enumerate() {
            s.push_str(&format!("{i},{:.17e},{:.17e}\n", a.re, a.im));
        }
        s
    }
}

/// Equality up to a global phase, within `tol` per amplitude.
pub fn equal_up_to_phase(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let Some(k) = a.iter().position(|x| x.norm() > tol) else {
        return b.iter().all(|x| x.norm() <= tol);
    };
    if b[k].norm() <= tol {
        return false;
    }
    let phase = b[k] / a[k];
    let phase = phase / phase.norm();
    a.iter().zip(b).all(|(x, y)| (x * phase - y).norm() <= tol)
}

fn check_register(qubits: &[usize], num_qubits: usize) -> Result<()> {
    for (i, &q) in qubits.iter().enumerate() {
        if q >= num_qubits || qubits[..i].contains(&q) {
            return Err(Error::Dimension(format!("bad register qubit {q} on {num_qubits} qubits")));
        }
    }
    if qubits.len() > 63 {
        return Err(Error::Capacity(qubits.len()));
    }
    Ok(())
}

fn register_value(idx: u128, qubits: &[usize]) -> u64 {
    qubits.iter().enumerate().fold(0u64, |v, (j, &q)| v | (((idx >> q) & 1) as u64) << j)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// A state stored as its nonzero amplitudes, for many qubits with small
/// support. Basis indices are u128, so at most 128 qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseState {
    num_qubits: usize,
    amps: HashMap<u128, Complex64>,
}

/// Amplitudes below this magnitude are dropped after interference.
const PRUNE: f64 = 1e-14;

impl SparseState {
    pub fn basis(num_qubits: usize, index: u128) -> Result<Self> {
        if num_qubits > MAX_SPARSE_QUBITS {
            return Err(Error::Capacity(num_qubits));
        }
        if num_qubits < 128 && index >> num_qubits != 0 {
            return Err(Error::Dimension(format!("basis index on {num_qubits} qubits")));
        }
        Ok(SparseState { num_qubits, amps: HashMap::from([(index, ONE)]) })
    }

    /// Normalizes the given (index, amplitude) pairs.
    pub fn from_entries(num_qubits: usize, entries: impl IntoIterator<Item = (u128, Complex64)>) -> Result<Self> {
        if num_qubits > MAX_SPARSE_QUBITS {
            return Err(Error::Capacity(num_qubits));
        }
        let mut amps: HashMap<u128, Complex64> = HashMap::new();
        for (i, a) in entries {
            if num_qubits < 128 && i >> num_qubits != 0 {
                return Err(Error::Dimension(format!("basis index on {num_qubits} qubits")));
            }
            *amps.entry(i).or_insert(ZERO) += a;
        }
        amps.retain(|_, a| a.norm() > PRUNE);
        let norm = amps.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Dimension("zero state".into()));
        }
        amps.values_mut().for_each(|a| *a /= norm);
        Ok(SparseState { num_qubits, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn support_size(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitude(&self, index: u128) -> Complex64 {
        self.amps.get(&index).copied().unwrap_or(ZERO)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u128, Complex64)> + '_ {
        self.amps.iter().map(|(&i, &a)| (i, a))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    fn permute(&mut self, f: impl Fn(u128) -> u128) {
        self.amps = self.amps.drain().map(|(i, a)| (f(i), a)).collect();
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.check(self.num_qubits)?;
        let b = |i: u128, q: usize| (i >> q) & 1 == 1;
        match *gate {
            Gate::X(q) => self.permute(|i| i ^ 1 << q),
            Gate::Cnot(c, t) => self.permute(|i| if b(i, c) { i ^ 1 << t } else { i }),
            Gate::Toffoli(x, y, t) => self.permute(|i| if b(i, x) && b(i, y) { i ^ 1 << t } else { i }),
            Gate::Z(q) => self.amps.iter_mut().filter(|(i, _)| b(**i, q)).for_each(|(_, a)| *a = -*a),
            Gate::K(q) => self.amps.iter_mut().filter(|(i, _)| b(**i, q)).for_each(|(_, a)| *a *= I),
            Gate::Cz(x, y) => self
                .amps
                .iter_mut()
                .filter(|(i, _)| b(**i, x) && b(**i, y))
                .for_each(|(_, a)| *a = -*a),
            Gate::H(q) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut out: HashMap<u128, Complex64> = HashMap::with_capacity(2 * self.amps.len());
                for (&i, &a) in &self.amps {
                    let lo = i & !(1 << q);
                    let hi = i | 1 << q;
                    let sign = if b(i, q) { -1.0 } else { 1.0 };
                    *out.entry(lo).or_insert(ZERO) += a * s;
                    *out.entry(hi).or_insert(ZERO) += a * s * sign;
                }
                out.retain(|_, a| a.norm() > PRUNE);
                self.amps = out;
            }
        }
        Ok(())
    }

    /// Applies a classical reversible map on basis indices. The caller
    /// guarantees it is a bijection on the support.
    pub fn apply_permutation(&mut self, f: impl Fn(u128) -> u128) {
        self.permute(f)
    }

    pub fn probabilities(&self, qubits: &[usize]) -> Result<HashMap<u64, f64>> {
        check_register(qubits, self.num_qubits)?;
        let mut p = HashMap::new();
        for (&i, a) in &self.amps {
            *p.entry(register_value(i, qubits)).or_insert(0.0) += a.norm_sqr();
        }
        Ok(p)
    }

    /// Collapses onto `value` of the register; returns its probability.
    pub fn project(&mut self, qubits: &[usize], value: u64) -> Result<f64> {
        check_register(qubits, self.num_qubits)?;
        self.amps.retain(|&i, _| register_value(i, qubits) == value);
        let p = self.norm_sqr();
        if p > 0.0 {
            let n = p.sqrt();
            self.amps.values_mut().for_each(|a| *a /= n);
        }
        Ok(p)
    }

    /// Standard-basis measurement of a register of at most 63 qubits.
    pub fn measure<R: Rng + ?Sized>(&mut self, qubits: &[usize], rng: &mut R) -> Result<u64> {
        let probs = self.probabilities(qubits)?;
        let mut keys: Vec<u64> = probs.keys().copied().collect();
        keys.sort_unstable();
        let weights: Vec<f64> = keys.iter().map(|k| probs[k]).collect();
        let outcome = keys[sample_index(&weights, rng)];
        self.project(qubits, outcome)?;
        Ok(outcome)
    }

    /// Hadamard-basis measurement, one qubit at a time (the single-qubit
    /// measurements commute), so the support never more than doubles.
    pub fn measure_hadamard<R: Rng + ?Sized>(&mut self, qubits: &[usize], rng: &mut R) -> Result<Vec<bool>> {
        check_register(qubits, self.num_qubits)?;
        let mut out = Vec::with_capacity(qubits.len());
        for &q in qubits {
            self.apply(&Gate::H(q))?;
            out.push(self.measure(&[q], rng)? == 1);
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Result<StateVector> {
        if self.num_qubits > MAX_DENSE_QUBITS {
            return Err(Error::Capacity(self.num_qubits));
        }
        let mut amps = vec![ZERO; 1 << self.num_qubits];
        for (&i, &a) in &self.amps {
            amps[i as usize] = a;
        }
        Ok(StateVector { num_qubits: self.num_qubits, amps })
    }
}

/// Σ √D(μ, r) |μ, r⟩ over the register layout of `Randomness::to_bits`:
/// μ uniform, s uniform over Z_q^n, e from `noise` (dimension m+1). The
/// register starts at qubit `offset` of a `num_qubits`-qubit state whose
/// other qubits are |0⟩.
pub fn prepare_weighted_superposition(
    modulus: Modulus,
    n: usize,
    noise: &TruncGaussian,
    offset: usize,
    num_qubits: usize,
) -> Result<SparseState> {
    let k = modulus.log_q() as usize;
    let w = 1 + (n + noise.dim()) * k;
    if offset + w > num_qubits {
        return Err(Error::Dimension(format!("register of width {w} at {offset} exceeds {num_qubits} qubits")));
    }
    let (lo, hi) = noise.support_bounds();
    let support = (hi - lo + 1) as u128;
    let total = 2u128
        .checked_mul(1u128.checked_shl((n * k) as u32).unwrap_or(0))
        .and_then(|x| x.checked_mul(support.checked_pow(noise.dim() as u32)?))
        .unwrap_or(u128::MAX);
    if total > 1 << 24 {
        return Err(Error::Capacity(w));
    }
    // Partial states as (index, log weight).
    let mut parts: Vec<(u128, f64)> = vec![(0, 0.0)];
    let mut shift = offset;
    let mut extend = |parts: Vec<(u128, f64)>, values: &[(u128, f64)], width: usize| {
        let out = parts
            .iter()
            .flat_map(|&(i, lw)| values.iter().map(move |&(v, lv)| (i | v << shift, lw + lv)))
            .collect();
        shift += width;
        out
    };
    let half = -(2f64).ln();
    parts = extend(parts, &[(0, half), (1, half)], 1);
    let s_vals: Vec<(u128, f64)> = (0..1u128 << k).map(|v| (v, -(k as f64) * (2f64).ln())).collect();
    for _ in 0..n {
        parts = extend(parts, &s_vals, k);
    }
    let e_vals: Vec<(u128, f64)> = (lo..=hi).map(|x| (modulus.residue(x), noise.log_pmf1(x))).collect();
    for _ in 0..noise.dim() {
        parts = extend(parts, &e_vals, k);
    }
    let amps = parts.into_iter().map(|(i, lw)| (i, Complex64::new((0.5 * lw).exp(), 0.0)));
    let state = SparseState::from_entries(num_qubits, amps)?;
    Ok(state)
}

/// Pauli keys: the encrypted state is Z^z X^x |ψ⟩.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliFrame {
    pub z: Vec<bool>,
    pub x: Vec<bool>,
}

impl PauliFrame {
    pub fn identity(num_qubits: usize) -> Self {
        PauliFrame { z: vec![false; num_qubits], x: vec![false; num_qubits] }
    }

    pub fn random<R: Rng + ?Sized>(num_qubits: usize, rng: &mut R) -> Self {
        PauliFrame { z: (0..num_qubits).map(|_| rng.gen()).collect(), x: (0..num_qubits).map(|_| rng.gen()).collect() }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// The gates of Z^z X^x, in application order.
    pub fn gates(&self) -> Vec<Gate> {
        let mut g: Vec<Gate> = self.x.iter().enumerate().filter(|(_, &b)| b).map(|(q, _)| Gate::X(q)).collect();
        g.extend(self.z.iter().enumerate().filter(|(_, &b)| b).map(|(q, _)| Gate::Z(q)));
        g
    }

    /// Applies Z^z X^x.
    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        state.apply_all(&self.gates())
    }

    /// Applies (Z^z X^x)⁻¹ = X^x Z^z.
    pub fn undo(&self, state: &mut StateVector) -> Result<()> {
        let mut g = self.gates();
        g.reverse();
        state.apply_all(&g)
    }

    /// Key update for a Clifford gate G: afterwards G·Z^z X^x = (phase)·Z^z′ X^x′·G.
    pub fn conjugate(&mut self, gate: &Gate) -> Result<()> {
        gate.check(self.len())?;
        match *gate {
            Gate::X(_) | Gate::Z(_) => {}
            Gate::H(q) => std::mem::swap(&mut self.z[q], &mut self.x[q]),
            Gate::K(q) => self.z[q] ^= self.x[q],
            Gate::Cnot(c, t) => {
                self.x[t] ^= self.x[c];
                self.z[c] ^= self.z[t];
            }
            Gate::Cz(a, b) => {
                self.z[a] ^= self.x[b];
                self.z[b] ^= self.x[a];
            }
            Gate::Toffoli(..) => return Err(Error::UnsupportedGate("Toffoli is not Clifford".into())),
        }
        Ok(())
    }
}

/// Key update of a Toffoli on (a, b, t): with keys (z, x) before the gate,
/// T·P_{z,x} = C·P_{z′,x′}·T where C = CNOT(a→t)^{x_b}·CNOT(b→t)^{x_a}·CZ(a,b)^{z_t}.
/// Returns (z′, x′) for the three qubits in order (a, b, t).
pub fn toffoli_key_update(z: [bool; 3], x: [bool; 3]) -> ([bool; 3], [bool; 3]) {
    let zn = [z[0] ^ (x[1] & z[2]), z[1] ^ (x[0] & z[2]), z[2]];
    let xn = [x[0], x[1], x[2] ^ (x[0] & x[1])];
    (zn, xn)
}

/// The Clifford correction C of `toffoli_key_update` as gates, in
/// application order.
pub fn toffoli_correction_gates(a: usize, b: usize, t: usize, z: [bool; 3], x: [bool; 3]) -> Vec<Gate> {
    let mut g = Vec::new();
    if z[2] {
        g.push(Gate::Cz(a, b));
    }
    if x[0] {
        g.push(Gate::Cnot(b, t));
    }
    if x[1] {
        g.push(Gate::Cnot(a, t));
    }
    g
}

fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

fn pauli_zx(z: bool, x: bool) -> DMatrix<Complex64> {
    let mut m = DMatrix::identity(2, 2);
    if x {
        m = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]) * m;
    }
    if z {
        m = DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]) * m;
    }
    m
}

/// Random density matrix of dimension `dim` (a normalized Wishart draw).
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    rho / tr
}

/// Partial trace over the first `l` qubits (the low factor of the index
/// under this module's ordering, i.e. the right Kronecker factor).
fn trace_low(rho: &DMatrix<Complex64>, l: usize) -> DMatrix<Complex64> {
    let a = 1usize << l;
    let b = rho.nrows() / a;
    DMatrix::from_fn(b, b, |i, j| (0..a).map(|k| rho[(i * a + k, j * a + k)]).sum())
}

/// Averages Z^zX^x ρ (Z^zX^x)† over all Paulis on the first `l` qubits of
/// ρ (dimension 2^l times a side register) and returns the largest entry of
/// the difference from I/2^l ⊗ Tr_A(ρ).
pub fn pauli_mixing_check(rho: &DMatrix<Complex64>, l: usize) -> Result<f64> {
    let a = 1usize << l;
    if rho.nrows() != rho.ncols() || !rho.nrows().is_multiple_of(a) || l > 3 {
        return Err(Error::Dimension(format!("{}x{} density with l = {l}", rho.nrows(), rho.ncols())));
    }
    let side = rho.nrows() / a;
    let mut acc = DMatrix::from_element(rho.nrows(), rho.ncols(), ZERO);
    for zs in 0..a {
        for xs in 0..a {
            // Qubit 0 is the rightmost Kronecker factor.
            let mut p = DMatrix::identity(side, side);
            for q in (0..l).rev() {
                p = kron(&p, &pauli_zx(bit(zs, q), bit(xs, q)));
            }
            acc += &p * rho * p.adjoint();
        }
    }
    acc /= Complex64::new((a * a) as f64, 0.0);
    let target = kron(&trace_low(rho, l), &(DMatrix::identity(a, a) / Complex64::new(a as f64, 0.0)));
    Ok((acc - target).iter().map(|v| v.norm()).fold(0.0, f64::max))
}

/// Trace distance between two pure states.
pub fn pure_trace_distance(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok((1.0 - a.fidelity(b)?).max(0.0).sqrt())
}

/// A quantum circuit as a list of layers; layer boundaries are where the
/// key-update pipeline runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantumCircuit {
    pub num_qubits: usize,
    pub layers: Vec<Vec<Gate>>,
}

impl QuantumCircuit {
    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flatten()
    }

    pub fn toffoli_count(&self) -> usize {
        self.gates().filter(|g| !g.is_clifford()).count()
    }

    /// Text form: `QUBITS n`, one gate per line (`H 0`, `CNOT 0 1`, `T 0 1 2`,
    /// also `X`, `Z`, `K`, `CZ`), and `---` between layers. `%` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut num_qubits = None;
        let mut layers = vec![Vec::new()];
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('%').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Format(format!("circuit line {}: {m}", ln + 1));
            let mut it = line.split_whitespace();
            let op = it.next().unwrap_or("");
            if op == "---" {
                layers.push(Vec::new());
                continue;
            }
            let args: Vec<usize> =
                it.map(|t| t.parse().map_err(|_| bad(&format!("bad qubit {t}")))).collect::<Result<_>>()?;
            let gate = match (op, args.as_slice()) {
                ("QUBITS", &[n]) => {
                    num_qubits = Some(n);
                    continue;
                }
                ("X", &[q]) => Gate::X(q),
                ("Z", &[q]) => Gate::Z(q),
                ("H", &[q]) => Gate::H(q),
                ("K", &[q]) => Gate::K(q),
                ("CNOT", &[a, b]) => Gate::Cnot(a, b),
                ("CZ", &[a, b]) => Gate::Cz(a, b),
                ("T", &[a, b, c]) => Gate::Toffoli(a, b, c),
                _ => return Err(bad(&format!("cannot parse `{line}`"))),
            };
            layers.last_mut().expect("nonempty").push(gate);
        }
        let num_qubits = num_qubits.ok_or_else(|| Error::Format("missing QUBITS line".into()))?;
        for g in layers.iter().flatten() {
            g.check(num_qubits)?;
        }
        Ok(QuantumCircuit { num_qubits, layers })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("QUBITS {}\n", self.num_qubits);
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                s.push_str("---\n");
            }
            for g in layer {
                s.push_str(&format!("{g}\n"));
            }
        }
        s
    }

    /// Each layer is a run of Cliffords followed by Toffolis on pairwise
    /// disjoint qubits. The evaluator accepts only this shape.
    pub fn is_layered(&self) -> bool {
        self.layers.iter().all(|layer| {
            let first_tof = layer.iter().position(|g| !g.is_clifford()).unwrap_or(layer.len());
            let tofs = &layer[first_tof..];
            let mut used = Vec::new();
            tofs.iter().all(|g| {
                let fresh = !g.is_clifford() && g.qubits().iter().all(|q| !used.contains(q));
                used.extend(g.qubits());
                fresh
            })
        })
    }

    /// Splits layers greedily so that `is_layered` holds. At most doubles
    /// the number of layers a Toffoli depth requires.
    pub fn relayered(&self) -> QuantumCircuit {
        let mut layers: Vec<Vec<Gate>> = Vec::new();
        let mut cur: Vec<Gate> = Vec::new();
        let mut used: Vec<usize> = Vec::new();
        let mut in_tofs = false;
        for layer in &self.layers {
            for g in layer {
                let clash = if g.is_clifford() { in_tofs } else { g.qubits().iter().any(|q| used.contains(q)) };
                if clash {
                    layers.push(std::mem::take(&mut cur));
                    used.clear();
                    in_tofs = false;
                }
                if !g.is_clifford() {
                    in_tofs = true;
                    used.extend(g.qubits());
                }
                cur.push(*g);
            }
            layers.push(std::mem::take(&mut cur));
            used.clear();
            in_tofs = false;
        }
        QuantumCircuit { num_qubits: self.num_qubits, layers }
    }

    /// Random layered circuit: each of `levels` layers has
    /// `cliffords_per_layer` random Cliffords, then its share of the
    /// Toffolis on disjoint qubits.
    pub fn random<R: Rng + ?Sized>(
        num_qubits: usize,
        cliffords_per_layer: usize,
        toffolis: usize,
        levels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let per_layer = num_qubits / 3;
        if levels == 0 || num_qubits == 0 || toffolis > per_layer * levels {
            return Err(Error::Config(format!(
                "{toffolis} Toffolis do not fit {levels} layers of {num_qubits} qubits"
            )));
        }
        let mut counts = vec![0usize; levels];
        for _ in 0..toffolis {
            let open: Vec<usize> = (0..levels).filter(|&l| counts[l] < per_layer).collect();
            counts[open[rng.gen_range(0..open.len())]] += 1;
        }
        let distinct = |rng: &mut R, k: usize, avoid: &[usize]| {
            let mut qs: Vec<usize> = Vec::with_capacity(k);
            while qs.len() < k {
                let q = rng.gen_range(0..num_qubits);
                if !qs.contains(&q) && !avoid.contains(&q) {
                    qs.push(q);
                }
            }
            qs
        };
        let mut layers = Vec::with_capacity(levels);
        for &here in &counts {
            let mut layer = Vec::new();
            for _ in 0..cliffords_per_layer {
                let two = num_qubits >= 2;
                let g = match rng.gen_range(0..if two { 6 } else { 4 }) {
                    0 => Gate::X(distinct(rng, 1, &[])[0]),
                    1 => Gate::Z(distinct(rng, 1, &[])[0]),
                    2 => Gate::H(distinct(rng, 1, &[])[0]),
                    3 => Gate::K(distinct(rng, 1, &[])[0]),
                    4 => {
                        let q = distinct(rng, 2, &[]);
                        Gate::Cnot(q[0], q[1])
                    }
                    _ => {
                        let q = distinct(rng, 2, &[]);
                        Gate::Cz(q[0], q[1])
                    }
                };
                layer.push(g);
            }
            let mut used = Vec::new();
            for _ in 0..here {
                let q = distinct(rng, 3, &used);
                used.extend(&q);
                layer.push(Gate::Toffoli(q[0], q[1], q[2]));
            }
            layers.push(layer);
        }
        Ok(QuantumCircuit { num_qubits, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn all_gates(n: usize) -> Vec<Gate> {
        let mut g = Vec::new();
        for q in 0..n {
            g.extend([Gate::X(q), Gate::Z(q), Gate::H(q), Gate::K(q)]);
            for r in 0..n {
                if r != q {
                    g.extend([Gate::Cnot(q, r), Gate::Cz(q, r)]);
                    for t in 0..n {
                        if t != q && t != r {
                            g.push(Gate::Toffoli(q, r, t));
                        }
                    }
                }
            }
        }
        g
    }

    #[test]
    fn gates_are_unitary_and_preserve_norm() {
        let mut r = rng(1);
        for g in all_gates(3) {
            let u = g.matrix(3).unwrap();
            let err = (u.adjoint() * &u - DMatrix::identity(8, 8)).iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{g}");
            let mut s = StateVector::random(3, &mut r).unwrap();
            s.apply(&g).unwrap();
            assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
        }
        assert!(StateVector::new(2).unwrap().apply(&Gate::X(2)).is_err());
        assert!(StateVector::new(3).unwrap().apply(&Gate::Cnot(1, 1)).is_err());
    }

    #[test]
    fn basic_identities() {
        let mut r = rng(2);
        let s = StateVector::random(3, &mut r).unwrap();
        let mut t = s.clone();
        t.apply_all(&[Gate::H(1), Gate::H(1)]).unwrap();
        assert!(equal_up_to_phase(s.amplitudes(), t.amplitudes(), 1e-12));
        let mut b = StateVector::basis(3, 0b011).unwrap();
        b.apply(&Gate::Toffoli(0, 1, 2)).unwrap();
        assert_eq!(b, StateVector::basis(3, 0b111).unwrap());
        // ZX = −XZ.
        let zx = Gate::Z(0).matrix(1).unwrap() * Gate::X(0).matrix(1).unwrap();
        let xz = Gate::X(0).matrix(1).unwrap() * Gate::Z(0).matrix(1).unwrap();
        assert!((zx + xz).iter().all(|v| v.norm() < 1e-15));
        // CZ^{z} = (I⊗H)·CNOT^{z}·(I⊗H), H on the target.
        let h = Gate::H(1).matrix(2).unwrap();
        let conj = &h * Gate::Cnot(0, 1).matrix(2).unwrap() * &h;
        assert!((conj - Gate::Cz(0, 1).matrix(2).unwrap()).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn clifford_key_updates() {
        let mut r = rng(3);
        for g in all_gates(3).into_iter().filter(Gate::is_clifford) {
            for _ in 0..8 {
                let frame = PauliFrame::random(3, &mut r);
                let psi = StateVector::random(3, &mut r).unwrap();
                let mut lhs = psi.clone();
                frame.apply(&mut lhs).unwrap();
                lhs.apply(&g).unwrap();
                let mut f2 = frame.clone();
                f2.conjugate(&g).unwrap();
                let mut rhs = psi.clone();
                rhs.apply(&g).unwrap();
                f2.apply(&mut rhs).unwrap();
                assert!(equal_up_to_phase(lhs.amplitudes(), rhs.amplitudes(), 1e-10), "{g}");
            }
        }
    }

    #[test]
    fn toffoli_conjugation_identity_exhaustive() {
        let t = Gate::Toffoli(0, 1, 2).matrix(3).unwrap();
        for bits in 0..64usize {
            let z = [bit(bits, 0), bit(bits, 1), bit(bits, 2)];
            let x = [bit(bits, 3), bit(bits, 4), bit(bits, 5)];
            let pauli = |z: [bool; 3], x: [bool; 3]| {
                let f = PauliFrame { z: z.to_vec(), x: x.to_vec() };
                f.gates().iter().fold(DMatrix::identity(8, 8), |m, g| g.matrix(3).unwrap() * m)
            };
            let lhs = &t * pauli(z, x);
            let (zn, xn) = toffoli_key_update(z, x);
            let c = toffoli_correction_gates(0, 1, 2, z, x)
                .iter()
                .fold(DMatrix::identity(8, 8), |m, g| g.matrix(3).unwrap() * m);
            let rhs = c * pauli(zn, xn) * &t;
            assert!(equal_up_to_phase(lhs.as_slice(), rhs.as_slice(), 1e-12), "z = {z:?}, x = {x:?}");
        }
    }

    #[test]
    fn frame_round_trip() {
        let mut r = rng(4);
        let psi = StateVector::random(4, &mut r).unwrap();
        let f = PauliFrame::random(4, &mut r);
        let mut s = psi.clone();
        f.apply(&mut s).unwrap();
        f.undo(&mut s).unwrap();
        assert!(s.amplitudes().iter().zip(psi.amplitudes()).all(|(a, b)| (a - b).norm() < 1e-14));
    }

    #[test]
    fn measurement_statistics() {
        let mut r = rng(5);
        let mut s = StateVector::new(1).unwrap();
        assert_eq!(s.measure(&[0], &mut r).unwrap(), vec![false]);
        let psi = StateVector::random(3, &mut r).unwrap();
        let probs = psi.probabilities(&[0, 1, 2]).unwrap();
        let shots = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..shots {
            let mut s = psi.clone();
            let o = s.measure(&[0, 1, 2], &mut r).unwrap();
            counts[o.iter().enumerate().fold(0, |v, (j, &b)| v | (b as usize) << j)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 - p * shots as f64).powi(2) / (p * shots as f64))
            .sum();
        // 0.999 quantile of chi-square with 7 degrees of freedom.
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn hadamard_measurement_of_two_branch_state() {
        // (|u⟩ + |v⟩)/√2 on w qubits: d is uniform over strings with d·(u⊕v) = 0.
        let w = 5;
        let (u, v) = (0b10110usize, 0b00011usize);
        let mut amps = vec![ZERO; 1 << w];
        amps[u] = ONE;
        amps[v] = ONE;
        let psi = StateVector::from_amplitudes(amps).unwrap();
        let mut h = psi.clone();
        for q in 0..w {
            h.apply(&Gate::H(q)).unwrap();
        }
        let probs = h.probabilities(&(0..w).collect::<Vec<_>>()).unwrap();
        for (d, p) in probs.iter().enumerate() {
            let parity = ((d & (u ^ v)).count_ones() % 2) as i32;
            let want = (1.0 + (-1f64).powi(parity)).powi(2) / 2.0 / (1 << w) as f64;
            assert!((p - want).abs() < 1e-12);
        }
        // The sparse per-qubit measurement only yields allowed strings.
        let mut r = rng(6);
        for _ in 0..200 {
            let mut s = psi.to_sparse();
            let d = s.measure_hadamard(&(0..w).collect::<Vec<_>>(), &mut r).unwrap();
            let d = d.iter().enumerate().fold(0usize, |acc, (j, &b)| acc | (b as usize) << j);
            assert_eq!((d & (u ^ v)).count_ones() % 2, 0);
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let mut r = rng(7);
        let psi = StateVector::random(4, &mut r).unwrap();
        let mut dense = psi.clone();
        let mut sparse = psi.to_sparse();
        for g in all_gates(4).into_iter().take(60) {
            dense.apply(&g).unwrap();
            sparse.apply(&g).unwrap();
        }
        let back = sparse.to_dense().unwrap();
        assert!(back.amplitudes().iter().zip(dense.amplitudes()).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn weighted_superposition_matches_pmf() {
        let md = Modulus::new(4).unwrap();
        let noise = TruncGaussian::new(md, 1.5, 3).unwrap();
        let n = 1;
        let w = 1 + (n + 3) * 4;
        let s = prepare_weighted_superposition(md, n, &noise, 2, w + 2).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
        let mu_s: Vec<usize> = (2..2 + 5).collect();
        let marg = s.probabilities(&mu_s).unwrap();
        assert_eq!(marg.len(), 32);
        assert!(marg.values().all(|p| (p - 1.0 / 32.0).abs() < 1e-12));
        for (idx, a) in s.entries() {
            assert_eq!(idx & 0b11, 0);
            let e: Vec<i128> = (0..3)
                .map(|j| md.from_wrapping((idx >> (2 + 5 + 4 * j)) & 0xf))
                .collect();
            let want = noise.pmf(&e) / 32.0;
            assert!((a.norm_sqr() - want).abs() < 1e-12);
        }
        assert_eq!(s.support_size(), 32 * 27);
    }

    #[test]
    fn pauli_mixing() {
        let mut r = rng(8);
        let zero = DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]);
        assert!(pauli_mixing_check(&zero, 1).unwrap() < 1e-10);
        let rho = random_density(8, &mut r);
        assert!(pauli_mixing_check(&rho, 2).unwrap() < 1e-10);
        let mixed = DMatrix::<Complex64>::identity(4, 4) / Complex64::new(4.0, 0.0);
        assert!(pauli_mixing_check(&mixed, 2).unwrap() < 1e-15);
        // A check that is not vacuous: averaging over X only leaves coherence.
        let plus = DMatrix::from_element(2, 2, Complex64::new(0.5, 0.0));
        let xs_only = (&plus + pauli_zx(false, true) * &plus * pauli_zx(false, true)) / Complex64::new(2.0, 0.0);
        assert!((xs_only - DMatrix::<Complex64>::identity(2, 2) / Complex64::new(2.0, 0.0)).iter().any(|v| v.norm() > 0.1));
    }

    #[test]
    fn trace_distance_of_real_superpositions() {
        let mut r = rng(9);
        for _ in 0..20 {
            let p: Vec<f64> = (0..16).map(|_| r.gen::<f64>()).collect();
            let q: Vec<f64> = (0..16).map(|_| r.gen::<f64>()).collect();
            let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
            let a = StateVector::from_amplitudes(p.iter().map(|x| Complex64::new((x / sp).sqrt(), 0.0)).collect()).unwrap();
            let b = StateVector::from_amplitudes(q.iter().map(|x| Complex64::new((x / sq).sqrt(), 0.0)).collect()).unwrap();
            let bc: f64 = p.iter().zip(&q).map(|(x, y)| (x / sp * y / sq).sqrt()).sum();
            let h2 = 1.0 - bc;
            let want = (1.0 - (1.0 - h2).powi(2)).sqrt();
            assert!((pure_trace_distance(&a, &b).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn circuit_text_round_trip() {
        let mut r = rng(10);
        let c = QuantumCircuit::random(6, 5, 3, 2, &mut r).unwrap();
        assert_eq!(c.toffoli_count(), 3);
        assert_eq!(c.layers.len(), 2);
        assert!(c.is_layered());
        assert!(QuantumCircuit::random(4, 5, 3, 2, &mut r).is_err());
        assert_eq!(QuantumCircuit::parse(&c.to_text()).unwrap(), c);
        assert!(QuantumCircuit::parse("QUBITS 2\nT 0 1 2").is_err());
        assert!(QuantumCircuit::parse("H 0").is_err());
    }

    #[test]
    fn relayering_separates_overlapping_toffolis() {
        let c = QuantumCircuit::parse("QUBITS 4\nT 0 1 2\nH 3\nT 1 2 3\nCNOT 0 1").unwrap();
        assert!(!c.is_layered());
        let l = c.relayered();
        assert!(l.is_layered());
        assert_eq!(l.layers.len(), 3);
        assert_eq!(l.gates().copied().collect::<Vec<_>>(), c.gates().copied().collect::<Vec<_>>());
    }
}

#[cfg(test)]
mod properties {
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::{Gate, PauliFrame, QuantumCircuit};

    fn matrix_of(gates: &[Gate], nq: usize) -> DMatrix<Complex64> {
        gates.iter().fold(DMatrix::identity(1 << nq, 1 << nq), |acc, g| g.matrix(nq).unwrap() * acc)
    }

    fn equal_up_to_phase(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> bool {
        let (idx, _) = b.iter().enumerate().max_by(|x, y| x.1.norm().total_cmp(&y.1.norm())).unwrap();
        let phase = a.as_slice()[idx] / b.as_slice()[idx];
        (phase.norm() - 1.0).abs() < 1e-12 && (a - b * phase).iter().all(|v| v.norm() < 1e-12)
    }

    fn clifford(nq: usize) -> impl Strategy<Value = Gate> {
        (0..6u8, 0..nq, 1..nq).prop_map(move |(kind, a, off)| {
            let b = (a + off) % nq;
            match kind {
                0 => Gate::X(a),
                1 => Gate::Z(a),
                2 => Gate::H(a),
                3 => Gate::K(a),
                4 => Gate::Cnot(a, b),
                _ => Gate::Cz(a, b),
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn clifford_key_rules_conjugate(
            gate in clifford(3),
            z in proptest::collection::vec(any::<bool>(), 3),
            x in proptest::collection::vec(any::<bool>(), 3),
        ) {
            let before = PauliFrame { z, x };
            let mut after = before.clone();
            after.conjugate(&gate).unwrap();
            let lhs = gate.matrix(3).unwrap() * matrix_of(&before.gates(), 3);
            let rhs = matrix_of(&after.gates(), 3) * gate.matrix(3).unwrap();
            prop_assert!(equal_up_to_phase(&lhs, &rhs));
        }

        #[test]
        fn circuit_text_round_trip(seed in any::<u64>(), nq in 3usize..6, levels in 1usize..4) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let c = QuantumCircuit::random(nq, 4, levels, levels, &mut rng).unwrap();
            prop_assert!(c.is_layered());
            prop_assert_eq!(QuantumCircuit::parse(&c.to_text()).unwrap(), c);
        }

    }
}
