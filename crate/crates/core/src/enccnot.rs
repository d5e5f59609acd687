//! The encrypted CNOT: CNOT^s on two qubits, where s is known only through
//! a dual ciphertext ĉ, up to Pauli corrections the trapdoor holder can
//! compute.
//!
//! Register layout for the exact mode: qubit 0 is the control a, qubit 1 the
//! target b, then the (μ, r) register of width w (μ first, see
//! `Randomness::to_bits`), then the ciphertext register y.
//!
//! f_a(μ, r) = Enc(μ; r) ⊕ a·ĉ. A measured y has a preimage under f_0 and
//! one under f_1 when both lie in the support of D; otherwise the control
//! collapses onto the one branch that produced y.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;

use crate::distributions::{hellinger2, Density, TruncGaussian};
use crate::dualenc::{dual_encrypt_with, hom_xor, recover_randomness, xor_invert, DualCiphertext, DualPublicKey, Randomness};
use crate::error::{Error, Result};
use crate::qsim::{prepare_weighted_superposition, Gate, SparseState, StateVector};
use crate::ringmod::{ModMatrix, Modulus};
use crate::trapdoor::TrapdoorMatrix;

/// Everything an evaluation needs: the public key, the distribution D
/// (noise part, dimension m+1) and, for recovering the claw, the trapdoor.
#[derive(Clone, Copy, Debug)]
pub struct CnotContext<'a> {
    pub pk: &'a DualPublicKey,
    pub td: &'a TrapdoorMatrix,
    pub noise: &'a TruncGaussian,
}

impl CnotContext<'_> {
    pub fn modulus(&self) -> Modulus {
        self.pk.modulus()
    }

    /// Width of the (μ, r) register.
    pub fn width(&self) -> usize {
        Randomness::bit_len(self.modulus(), self.pk.n(), self.pk.m())
    }

    /// Preimages are accepted only inside the support of D.
    pub fn radius(&self) -> u128 {
        let (lo, hi) = self.noise.support_bounds();
        lo.unsigned_abs().max(hi.unsigned_abs())
    }

    fn f(&self, a: bool, x: &Randomness, c_hat: &DualCiphertext) -> Result<DualCiphertext> {
        let y = dual_encrypt_with(self.pk, x.mu, &x.s, &x.e)?;
        if a {
            hom_xor(&y, c_hat)
        } else {
            Ok(y)
        }
    }

    /// log D(μ, r) up to the constant from the uniform (μ, s) part.
    fn log_weight(&self, x: &Randomness) -> f64 {
        self.noise.log_pmf(x.e.as_slice())
    }
}

/// Preimages (μ0, r0) under f_0 and (μ1, r1) under f_1 of one y.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClawPair {
    pub zero: Randomness,
    pub one: Randomness,
}

impl ClawPair {
    /// Enc(μ0; r0) = Enc(μ1; r1) ⊕ ĉ.
    pub fn is_consistent(&self, pk: &DualPublicKey, c_hat: &DualCiphertext) -> Result<bool> {
        let y0 = dual_encrypt_with(pk, self.zero.mu, &self.zero.s, &self.zero.e)?;
        let y1 = dual_encrypt_with(pk, self.one.mu, &self.one.s, &self.one.e)?;
        Ok(y0 == hom_xor(&y1, c_hat)?)
    }

    /// μ0 ⊕ μ1, which equals the encrypted bit.
    pub fn plaintext(&self) -> bool {
        self.zero.mu ^ self.one.mu
    }
}

/// (z, x) with z = d·((μ0, r0) ⊕ (μ1, r1)) over the bit encodings and x = μ0.
pub fn pauli_correction_bits(claw: &ClawPair, d: &[bool]) -> (bool, bool) {
    let z = claw
        .zero
        .to_bits()
        .iter()
        .zip(claw.one.to_bits())
        .zip(d)
        .fold(false, |acc, ((&u, v), &di)| acc ^ (di & (u ^ v)));
    (z, claw.zero.mu)
}

/// What the trapdoor holder learns from (y, d).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Resolution {
    Claw(ClawPair),
    /// Only the branch `branch` has a preimage; the control qubit collapsed.
    Collapsed { branch: bool, preimage: Randomness },
}

impl Resolution {
    pub fn is_collapsed(&self) -> bool {
        matches!(self, Resolution::Collapsed { .. })
    }
}

/// Recovers the preimages of y. Fails when neither exists.
pub fn resolve(ctx: &CnotContext, c_hat: &DualCiphertext, y: &DualCiphertext) -> Result<Resolution> {
    let radius = ctx.radius();
    let r0 = recover_randomness(ctx.pk, ctx.td, y, radius);
    let r1 = recover_randomness(ctx.pk, ctx.td, &xor_invert(y, c_hat)?, radius);
    match (r0, r1) {
        (Ok(zero), Ok(one)) => Ok(Resolution::Claw(ClawPair { zero, one })),
        (Ok(p), Err(_)) => Ok(Resolution::Collapsed { branch: false, preimage: p }),
        (Err(_), Ok(p)) => Ok(Resolution::Collapsed { branch: true, preimage: p }),
        (Err(e), Err(_)) => Err(e),
    }
}

/// The plaintext of ĉ, decoded with the trapdoor.
pub fn trapdoor_plaintext(ctx: &CnotContext, c_hat: &DualCiphertext) -> Result<bool> {
    Ok(recover_randomness(ctx.pk, ctx.td, c_hat, u128::MAX)?.mu)
}

/// Pauli corrections (z on the control, x on the target). A collapsed
/// control needs no Z; when it collapsed onto branch 1 the X correction
/// also absorbs s, which is read from ĉ with the trapdoor.
pub fn corrections(ctx: &CnotContext, c_hat: &DualCiphertext, res: &Resolution, d: &[bool]) -> Result<(bool, bool)> {
    match res {
        Resolution::Claw(claw) => Ok(pauli_correction_bits(claw, d)),
        Resolution::Collapsed { branch: false, preimage } => Ok((false, preimage.mu)),
        Resolution::Collapsed { branch: true, preimage } => Ok((false, preimage.mu ^ trapdoor_plaintext(ctx, c_hat)?)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnotOutcome {
    pub y: DualCiphertext,
    pub d: Vec<bool>,
    /// The register left behind.
    pub out_state: StateVector,
    pub control: usize,
    pub target: usize,
    pub resolution: Resolution,
    pub z_corr: bool,
    pub x_corr: bool,
}

impl CnotOutcome {
    pub fn collapsed(&self) -> bool {
        self.resolution.is_collapsed()
    }

    /// out_state with the Pauli corrections undone.
    pub fn corrected_state(&self) -> Result<StateVector> {
        let mut s = self.out_state.clone();
        if self.x_corr {
            s.apply(&Gate::X(self.target))?;
        }
        if self.z_corr {
            s.apply(&Gate::Z(self.control))?;
        }
        Ok(s)
    }
}

fn check_psi(psi: &StateVector) -> Result<()> {
    if psi.num_qubits() != 2 {
        return Err(Error::Dimension(format!("encrypted CNOT acts on 2 qubits, got {}", psi.num_qubits())));
    }
    Ok(())
}

fn bits_of(index: u128, start: usize, len: usize) -> Vec<bool> {
    (0..len).map(|j| (index >> (start + j)) & 1 == 1).collect()
}

fn pack(bits: &[bool]) -> u128 {
    bits.iter().enumerate().fold(0u128, |v, (j, &b)| v | (b as u128) << j)
}

fn encode_ciphertext(c: &DualCiphertext) -> u128 {
    let md = c.modulus();
    let k = md.log_q();
    c.vector().as_slice().iter().enumerate().fold(0u128, |v, (i, &x)| v | md.residue(x) << (i as u32 * k))
}

fn decode_ciphertext(md: Modulus, len: usize, v: u128) -> DualCiphertext {
    let k = md.log_q();
    let mask = md.mask();
    let vals: Vec<i128> = (0..len).map(|i| md.from_wrapping((v >> (i as u32 * k)) & mask)).collect();
    DualCiphertext::from_vector(ModMatrix::column(md, &vals))
}

/// Qubit layout of the exact simulation.
struct Layout {
    w: usize,
    total: usize,
}

impl Layout {
    fn new(ctx: &CnotContext) -> Result<Self> {
        let w = ctx.width();
        let y_len = (ctx.pk.m() + 1) * ctx.modulus().log_q() as usize;
        let total = 2 + w + y_len;
        if total > crate::qsim::MAX_SPARSE_QUBITS || y_len > 63 {
            return Err(Error::Config(format!("exact mode needs {total} qubits; parameters too large")));
        }
        Ok(Layout { w, total })
    }

    fn x_qubits(&self) -> Vec<usize> {
        (2..2 + self.w).collect()
    }

    fn y_qubits(&self) -> Vec<usize> {
        (2 + self.w..self.total).collect()
    }
}

/// Σ α_ab √D(x) |a, b⟩|x⟩|f_a(x)⟩, before any measurement.
pub fn pre_measurement_state(psi: &StateVector, c_hat: &DualCiphertext, ctx: &CnotContext) -> Result<SparseState> {
    check_psi(psi)?;
    let lay = Layout::new(ctx)?;
    weighted_branches(psi, ctx, &lay, |_, x| ctx.log_weight(x), c_hat)
}

/// As `pre_measurement_state` but with branch a weighted by `log_w(a, x)`.
fn weighted_branches<F>(
    psi: &StateVector,
    ctx: &CnotContext,
    lay: &Layout,
    log_w: F,
    c_hat: &DualCiphertext,
) -> Result<SparseState>
where
    F: Fn(bool, &Randomness) -> f64,
{
    let md = ctx.modulus();
    let (n, m) = (ctx.pk.n(), ctx.pk.m());
    let support = prepare_weighted_superposition(md, n, ctx.noise, 2, lay.total)?;
    let mut entries = Vec::new();
    for (ab, alpha) in psi.amplitudes().iter().enumerate() {
        if alpha.norm_sqr() == 0.0 {
            continue;
        }
        let a = ab & 1 == 1;
        for (idx, _) in support.entries() {
            let x = Randomness::from_bits(md, n, m, &bits_of(idx, 2, lay.w))?;
            let y = ctx.f(a, &x, c_hat)?;
            let amp = alpha * (0.5 * log_w(a, &x)).exp();
            entries.push((idx | ab as u128 | encode_ciphertext(&y) << (2 + lay.w), amp));
        }
    }
    SparseState::from_entries(lay.total, entries)
}

fn two_qubit_state(s: &SparseState) -> Result<StateVector> {
    let mut amps = vec![Complex64::new(0.0, 0.0); 4];
    for (idx, a) in s.entries() {
        amps[(idx & 3) as usize] += a;
    }
    StateVector::from_amplitudes(amps)
}

/// Full simulation at small parameters: prepare, compute y, measure y,
/// XOR μ into the target, Hadamard-measure the (μ, r) register.
pub fn encrypted_cnot_exact<R: Rng + ?Sized>(
    psi: &StateVector,
    c_hat: &DualCiphertext,
    ctx: &CnotContext,
    rng: &mut R,
) -> Result<CnotOutcome> {
    let lay = Layout::new(ctx)?;
    let mut st = pre_measurement_state(psi, c_hat, ctx)?;
    let yv = st.measure(&lay.y_qubits(), rng)?;
    let y = decode_ciphertext(ctx.modulus(), ctx.pk.m() + 1, yv as u128);
    st.apply(&Gate::Cnot(2, 1))?;
    let d = st.measure_hadamard(&lay.x_qubits(), rng)?;
    let out_state = two_qubit_state(&st)?;
    let resolution = resolve(ctx, c_hat, &y)?;
    let (z_corr, x_corr) = corrections(ctx, c_hat, &resolution, &d)?;
    Ok(CnotOutcome { y, d, out_state, control: 0, target: 1, resolution, z_corr, x_corr })
}

/// Classical sampler of the same process: branch, then (μ, r) from D, then
/// y, then d uniform; the two-qubit state is assembled from the recovered
/// preimages.
pub fn encrypted_cnot_sampled<R: Rng + ?Sized>(
    psi: &StateVector,
    c_hat: &DualCiphertext,
    ctx: &CnotContext,
    rng: &mut R,
) -> Result<CnotOutcome> {
    check_psi(psi)?;
    encrypted_cnot_sampled_on(psi, 0, 1, c_hat, ctx, rng)
}

/// The sampler on a register of any width, controlled by qubit `control`
/// and targeting `target`; other qubits are spectators.
pub fn encrypted_cnot_sampled_on<R: Rng + ?Sized>(
    state: &StateVector,
    control: usize,
    target: usize,
    c_hat: &DualCiphertext,
    ctx: &CnotContext,
    rng: &mut R,
) -> Result<CnotOutcome> {
    Gate::Cnot(control, target).check(state.num_qubits())?;
    let cbit = 1usize << control;
    let p1: f64 = state.amplitudes().iter().enumerate().filter(|(i, _)| i & cbit != 0).map(|(_, a)| a.norm_sqr()).sum();
    let branch = rng.gen::<f64>() < p1;
    let md = ctx.modulus();
    let x = Randomness {
        mu: rng.gen(),
        s: ModMatrix::uniform(md, ctx.pk.n(), 1, rng),
        e: ModMatrix::column(md, &ctx.noise.sample(rng)),
    };
    let y = ctx.f(branch, &x, c_hat)?;
    let d: Vec<bool> = (0..ctx.width()).map(|_| rng.gen()).collect();
    let resolution = resolve(ctx, c_hat, &y)?;
    let (z_corr, x_corr) = corrections(ctx, c_hat, &resolution, &d)?;
    let out_state = assemble(state, control, target, &resolution, &d, ctx)?;
    Ok(CnotOutcome { y, d, out_state, control, target, resolution, z_corr, x_corr })
}

/// Σ α_{a..} √D(x_a) (−1)^{d·x_a} |a, b ⊕ μ_a, ..⟩ over the branches that
/// have a preimage, a the control and b the target bit.
fn assemble(
    psi: &StateVector,
    control: usize,
    target: usize,
    res: &Resolution,
    d: &[bool],
    ctx: &CnotContext,
) -> Result<StateVector> {
    let branches: Vec<(bool, &Randomness)> = match res {
        Resolution::Claw(c) => vec![(false, &c.zero), (true, &c.one)],
        Resolution::Collapsed { branch, preimage } => vec![(*branch, preimage)],
    };
    let max_lw = branches.iter().map(|(_, x)| ctx.log_weight(x)).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![Complex64::new(0.0, 0.0); psi.amplitudes().len()];
    for (a, x) in branches {
        let parity = x.to_bits().iter().zip(d).fold(false, |p, (&u, &v)| p ^ (u & v));
        let scale = (0.5 * (ctx.log_weight(x) - max_lw)).exp() * if parity { -1.0 } else { 1.0 };
        for (i, amp) in psi.amplitudes().iter().enumerate() {
            if ((i >> control) & 1 == 1) != a {
                continue;
            }
            out[i ^ ((x.mu as usize) << target)] += amp * scale;
        }
    }
    StateVector::from_amplitudes(out)
}

/// CNOT^s ψ with branch a scaled by √D(x_a) (only the surviving branch
/// when collapsed). Undoing the reported Paulis must give this state.
pub fn reweighted_target(psi: &StateVector, s: bool, res: &Resolution, ctx: &CnotContext) -> Result<StateVector> {
    let weights: Vec<(bool, f64)> = match res {
        Resolution::Claw(c) => vec![(false, ctx.log_weight(&c.zero)), (true, ctx.log_weight(&c.one))],
        Resolution::Collapsed { branch, preimage } => vec![(*branch, ctx.log_weight(preimage))],
    };
    let max_lw = weights.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![Complex64::new(0.0, 0.0); 4];
    for (a, lw) in weights {
        let scale = (0.5 * (lw - max_lw)).exp();
        for b in [false, true] {
            let src = a as usize | (b as usize) << 1;
            let dst = a as usize | ((b ^ (a & s)) as usize) << 1;
            out[dst] += psi.amplitudes()[src] * scale;
        }
    }
    StateVector::from_amplitudes(out)
}

/// Key of the joint outcome law: (collapsed, x correction, z correction).
pub type OutcomeKey = (bool, bool, bool);

pub fn outcome_key(o: &CnotOutcome) -> OutcomeKey {
    (o.collapsed(), o.x_corr, o.z_corr)
}

/// The exact law of `OutcomeKey`, from amplitudes: for every y, its Born
/// probability, the recovered corrections, and P(z = 1 | y) = (1 − ⟨X^Δ⟩)/2
/// on the post-CNOT state, where Δ = (μ0, r0) ⊕ (μ1, r1).
pub fn exact_outcome_law(
    psi: &StateVector,
    c_hat: &DualCiphertext,
    ctx: &CnotContext,
) -> Result<HashMap<OutcomeKey, f64>> {
    let lay = Layout::new(ctx)?;
    let st = pre_measurement_state(psi, c_hat, ctx)?;
    let y_qubits = lay.y_qubits();
    let probs = st.probabilities(&y_qubits)?;
    let mut law: HashMap<OutcomeKey, f64> = HashMap::new();
    for (&yv, &py) in &probs {
        let y = decode_ciphertext(ctx.modulus(), ctx.pk.m() + 1, yv as u128);
        let res = resolve(ctx, c_hat, &y)?;
        let (_, x_corr) = corrections(ctx, c_hat, &res, &[])?;
        match &res {
            Resolution::Collapsed { .. } => *law.entry((true, x_corr, false)).or_insert(0.0) += py,
            Resolution::Claw(claw) => {
                let mut post = st.clone();
                post.project(&y_qubits, yv)?;
                post.apply(&Gate::Cnot(2, 1))?;
                let delta: Vec<bool> = claw.zero.to_bits().iter().zip(claw.one.to_bits()).map(|(a, b)| a ^ b).collect();
                let flip = pack(&delta) << 2;
                let expect_x: f64 = post.entries().map(|(i, a)| (a.conj() * post.amplitude(i ^ flip)).re).sum();
                let p1 = ((1.0 - expect_x) / 2.0).clamp(0.0, 1.0);
                *law.entry((false, x_corr, true)).or_insert(0.0) += py * p1;
                *law.entry((false, x_corr, false)).or_insert(0.0) += py * (1.0 - p1);
            }
        }
    }
    Ok(law)
}

/// Total variation between two laws over the same key type.
pub fn law_distance<K: std::hash::Hash + Eq + Clone>(p: &HashMap<K, f64>, q: &HashMap<K, f64>) -> f64 {
    let mut keys: Vec<&K> = p.keys().collect();
    keys.extend(q.keys().filter(|k| !p.contains_key(*k)));
    0.5 * keys.into_iter().map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Normalized histogram of outcome keys.
pub fn empirical_law(outcomes: &[OutcomeKey]) -> HashMap<OutcomeKey, f64> {
    let mut h: HashMap<OutcomeKey, f64> = HashMap::new();
    for k in outcomes {
        *h.entry(*k).or_insert(0.0) += 1.0 / outcomes.len() as f64;
    }
    h
}

/// Fidelity of the actual pre-measurement state with the one in which every
/// f_1 branch term carries the weight of its f_0 partner, √D(p0(x)) with
/// p0(μ, s, e) = (μ ⊕ ŝ_bit, s + ŝ, e + ê). `c_hat_randomness` is the
/// randomness of ĉ. Returns (simulated fidelity, 1 − (1 − H²)² predicted
/// for a pure control |1⟩ from the densities of e and e + ê).
pub fn fidelity_accounting(
    psi: &StateVector,
    c_hat_randomness: &Randomness,
    ctx: &CnotContext,
) -> Result<(f64, f64)> {
    check_psi(psi)?;
    let c_hat = dual_encrypt_with(ctx.pk, c_hat_randomness.mu, &c_hat_randomness.s, &c_hat_randomness.e)?;
    let lay = Layout::new(ctx)?;
    let actual = pre_measurement_state(psi, &c_hat, ctx)?;
    let md = ctx.modulus();
    let shift = c_hat_randomness.e.as_slice();
    // Enumerate the f_1 branch over the preimages x1 whose partner
    // p0(x1) = (…, e1 + ê) lies in the support, i.e. e1 ∈ support − ê.
    let mut entries = Vec::new();
    let density = ctx.noise.density()?;
    let n = ctx.pk.n();
    let k = md.log_q() as usize;
    for (ab, alpha) in psi.amplitudes().iter().enumerate() {
        if alpha.norm_sqr() == 0.0 {
            continue;
        }
        let a = ab & 1 == 1;
        for (pt, &p) in density.points().iter().zip(density.weights()) {
            let e: Vec<i128> = if a { pt.iter().zip(shift).map(|(&x, &h)| md.sub(x, h)).collect() } else { pt.clone() };
            for mu in [false, true] {
                for sv in 0..1u128 << (n * k) {
                    let s_vals: Vec<i128> = (0..n).map(|i| md.from_wrapping((sv >> (i * k)) & md.mask())).collect();
                    let x = Randomness { mu, s: ModMatrix::column(md, &s_vals), e: ModMatrix::column(md, &e) };
                    let y = ctx.f(a, &x, &c_hat)?;
                    let idx = (pack(&x.to_bits()) << 2) | ab as u128 | encode_ciphertext(&y) << (2 + lay.w);
                    entries.push((idx, alpha * p.sqrt()));
                }
            }
        }
    }
    let ideal = SparseState::from_entries(lay.total, entries)?;
    let overlap: Complex64 = actual.entries().map(|(i, a)| a.conj() * ideal.amplitude(i)).sum();
    let shifted = density.shifted(md, &shift.iter().map(|&h| md.neg(h)).collect::<Vec<_>>());
    let (lhs, rhs) = Density::align(&density, &shifted);
    let h2 = hellinger2(&lhs, &rhs)?;
    Ok((overlap.norm_sqr(), 1.0 - (1.0 - h2).powi(2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualenc::{dual_keygen, DualKeys};
    use crate::qsim::equal_up_to_phase;
    use crate::ringmod::Params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn nano(log_q: u32) -> Params {
        Params {
            lambda: 1,
            modulus: Modulus::new(log_q).unwrap(),
            n: 1,
            m: 2,
            beta_init: 2,
            levels: 1,
            level_depth: 1,
            eta: 0,
            eta_c: 0,
            base_bits: log_q / 2,
        }
    }

    struct Fixture {
        keys: DualKeys,
        noise: TruncGaussian,
    }

    impl Fixture {
        fn new(log_q: u32, width: f64, seed: u64) -> Self {
            let p = nano(log_q);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let keys = dual_keygen(&p, &mut rng).unwrap();
            let noise = TruncGaussian::new(p.modulus, width, p.m + 1).unwrap();
            Fixture { keys, noise }
        }

        fn ctx(&self) -> CnotContext<'_> {
            CnotContext { pk: &self.keys.pk, td: &self.keys.td, noise: &self.noise }
        }

        /// ĉ with chosen error.
        fn c_hat(&self, s: bool, e: &[i128], rng: &mut ChaCha20Rng) -> (DualCiphertext, Randomness) {
            let md = self.keys.pk.modulus();
            let r = Randomness { mu: s, s: ModMatrix::uniform(md, 1, 1, rng), e: ModMatrix::column(md, e) };
            (dual_encrypt_with(&self.keys.pk, s, &r.s, &r.e).unwrap(), r)
        }
    }

    fn plus_zero() -> StateVector {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::from_amplitudes(vec![Complex64::new(h, 0.0), Complex64::new(h, 0.0), 0.0.into(), 0.0.into()]).unwrap()
    }

    #[test]
    fn correction_bits_basics() {
        let md = Modulus::new(4).unwrap();
        let r = |mu: bool, v: i128| Randomness { mu, s: ModMatrix::column(md, &[v]), e: ModMatrix::column(md, &[0, 1, -1]) };
        let claw = ClawPair { zero: r(true, 3), one: r(false, 5) };
        let w = Randomness::bit_len(md, 1, 2);
        assert_eq!(pauli_correction_bits(&claw, &vec![false; w]), (false, true));
        let mut d = vec![false; w];
        d[0] = true;
        assert_eq!(pauli_correction_bits(&claw, &d), (true, true));
        assert!(claw.plaintext());
    }

    #[test]
    fn zero_bit_acts_as_identity() {
        let fx = Fixture::new(4, 1.5, 1);
        let ctx = fx.ctx();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (c_hat, _) = fx.c_hat(false, &[0, 0, 0], &mut rng);
        let psi = StateVector::basis(2, 0b01).unwrap();
        for _ in 0..20 {
            let o = encrypted_cnot_exact(&psi, &c_hat, &ctx, &mut rng).unwrap();
            let fixed = o.corrected_state().unwrap();
            assert!(equal_up_to_phase(fixed.amplitudes(), psi.amplitudes(), 1e-12));
        }
    }

    #[test]
    fn exact_runs_match_reweighted_target() {
        let fx = Fixture::new(4, 1.5, 3);
        let ctx = fx.ctx();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (c_hat, _) = fx.c_hat(true, &[1, 0, -1], &mut rng);
        let psi = plus_zero();
        let mut collapsed = 0;
        for _ in 0..200 {
            let o = encrypted_cnot_exact(&psi, &c_hat, &ctx, &mut rng).unwrap();
            if let Resolution::Claw(claw) = &o.resolution {
                assert!(claw.is_consistent(&fx.keys.pk, &c_hat).unwrap());
                assert!(claw.plaintext());
            } else {
                collapsed += 1;
            }
            let want = reweighted_target(&psi, true, &o.resolution, &ctx).unwrap();
            let got = o.corrected_state().unwrap();
            assert!(equal_up_to_phase(got.amplitudes(), want.amplitudes(), 1e-9));
        }
        // A shift of ±1 in two coordinates leaves the support often.
        assert!(collapsed > 0);
    }

    #[test]
    fn sampled_runs_match_reweighted_target() {
        let fx = Fixture::new(4, 1.5, 5);
        let ctx = fx.ctx();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for s in [false, true] {
            let (c_hat, _) = fx.c_hat(s, &[0, 1, 0], &mut rng);
            for _ in 0..200 {
                let psi = StateVector::random(2, &mut rng).unwrap();
                let o = encrypted_cnot_sampled(&psi, &c_hat, &ctx, &mut rng).unwrap();
                let want = reweighted_target(&psi, s, &o.resolution, &ctx).unwrap();
                let got = o.corrected_state().unwrap();
                assert!(equal_up_to_phase(got.amplitudes(), want.amplitudes(), 1e-9));
            }
        }
    }

    #[test]
    fn exact_law_is_normalized_and_matches_runs() {
        let fx = Fixture::new(4, 1.5, 7);
        let ctx = fx.ctx();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let (c_hat, _) = fx.c_hat(true, &[1, 0, 0], &mut rng);
        let psi = plus_zero();
        let law = exact_outcome_law(&psi, &c_hat, &ctx).unwrap();
        assert!((law.values().sum::<f64>() - 1.0).abs() < 1e-9);
        let runs: Vec<OutcomeKey> =
            (0..2000).map(|_| outcome_key(&encrypted_cnot_exact(&psi, &c_hat, &ctx, &mut rng).unwrap())).collect();
        assert!(law_distance(&law, &empirical_law(&runs)) < 0.05);
    }

    #[test]
    fn phases_for_every_d_at_width_nine() {
        // q = 4: w = 1 + 4·2 = 9, and the noise support is {0}.
        let fx = Fixture::new(2, 0.5, 9);
        let ctx = fx.ctx();
        assert_eq!(ctx.width(), 9);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let (c_hat, _) = fx.c_hat(true, &[0, 0, 0], &mut rng);
        let psi = StateVector::random(2, &mut rng).unwrap();
        let lay = Layout::new(&ctx).unwrap();
        let mut st = pre_measurement_state(&psi, &c_hat, &ctx).unwrap();
        let yv = st.measure(&lay.y_qubits(), &mut rng).unwrap();
        let y = decode_ciphertext(ctx.modulus(), 3, yv as u128);
        let res = resolve(&ctx, &c_hat, &y).unwrap();
        let Resolution::Claw(claw) = &res else { panic!("zero noise always has a claw") };
        st.apply(&Gate::Cnot(2, 1)).unwrap();
        let mut dense = st.to_dense().unwrap();
        for q in lay.x_qubits() {
            dense.apply(&Gate::H(q)).unwrap();
        }
        let fixed = (yv as usize) << (2 + lay.w);
        for dv in 0..1usize << lay.w {
            let d: Vec<bool> = (0..lay.w).map(|j| (dv >> j) & 1 == 1).collect();
            let amps: Vec<Complex64> =
                (0..4).map(|ab| dense.amplitudes()[fixed | dv << 2 | ab]).collect();
            let (z, x) = pauli_correction_bits(claw, &d);
            let mut want = reweighted_target(&psi, true, &res, &ctx).unwrap();
            if z {
                want.apply(&Gate::Z(0)).unwrap();
            }
            if x {
                want.apply(&Gate::X(1)).unwrap();
            }
            let got = StateVector::from_amplitudes(amps).unwrap();
            assert!(equal_up_to_phase(got.amplitudes(), want.amplitudes(), 1e-9), "d = {dv:b}");
        }
    }

    #[test]
    fn fidelity_matches_hellinger() {
        let fx = Fixture::new(4, 1.5, 11);
        let ctx = fx.ctx();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let (_, r) = fx.c_hat(true, &[1, 0, -1], &mut rng);
        let psi = StateVector::basis(2, 0b01).unwrap();
        let (f, predicted) = fidelity_accounting(&psi, &r, &ctx).unwrap();
        assert!(((1.0 - f) - predicted).abs() < 1e-9, "{} vs {predicted}", 1.0 - f);
        assert!(predicted > 0.01);
    }
}
