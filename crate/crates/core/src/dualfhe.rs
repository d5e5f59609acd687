//! The matrix (GSW-style) extension of the dual scheme: a bit μ is encrypted
//! as C = A′S + E + μG with G the (m+1) x N gadget, N = (m+1) log q.
//! Every column of C is itself a dual ciphertext, and the last one carries
//! μ·q/2 in its last coordinate, which is what `convert` extracts.

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;

use crate::codec;
use crate::distributions::TruncGaussian;
use crate::dualenc::{dual_decrypt, DualCiphertext, DualPublicKey, DualSecretKey};
use crate::error::{Error, Result};
use crate::ringmod::{gadget_decompose_matrix, gadget_matrix, ModMatrix, Modulus, Params};

#[derive(Clone, Debug, PartialEq)]
pub struct GswCiphertext {
    c: ModMatrix,
    level: u32,
}

impl GswCiphertext {
    pub fn matrix(&self) -> &ModMatrix {
        &self.c
    }

    /// NAND depth of the circuit that produced this ciphertext; the error is
    /// bounded by β_init (N+1)^level.
    pub fn noise_level(&self) -> u32 {
        self.level
    }

    pub fn modulus(&self) -> Modulus {
        self.c.modulus()
    }

    /// μG with zero randomness.
    pub fn trivial(modulus: Modulus, m: usize, mu: bool) -> Self {
        let g = gadget_matrix(modulus, m + 1);
        let c = if mu { g } else { ModMatrix::zeros(modulus, m + 1, g.cols()) };
        GswCiphertext { c, level: 0 }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_tag(w, b"GSW1")?;
        codec::write_u64(w, self.level as u64)?;
        codec::write_matrix(w, &self.c)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_tag(r, b"GSW1")?;
        let level = codec::read_u64(r)?;
        let level = u32::try_from(level).map_err(|_| Error::Format(format!("noise level {level}")))?;
        let c = codec::read_matrix(r)?;
        let k = c.modulus().log_q() as usize;
        if c.cols() != c.rows() * k {
            return Err(Error::Format(format!("{}x{} is not a gadget-shaped ciphertext", c.rows(), c.cols())));
        }
        Ok(GswCiphertext { c, level })
    }
}

/// C = A′S + E + μG for explicit S (n x N) and E ((m+1) x N).
pub fn gsw_encrypt_with(pk: &DualPublicKey, mu: bool, s: &ModMatrix, e: &ModMatrix) -> Result<GswCiphertext> {
    let md = pk.modulus();
    let mut c = pk.matrix().matmul(s)?.add(e)?;
    if mu {
        c = c.add(&gadget_matrix(md, pk.m() + 1))?;
    }
    if c.cols() != c.rows() * md.log_q() as usize {
        return Err(Error::Dimension(format!("S has {} columns, expected N = {}", s.cols(), c.rows() * md.log_q() as usize)));
    }
    Ok(GswCiphertext { c, level: 0 })
}

/// Fresh encryption: S uniform, E entries drawn independently from `noise`.
pub fn gsw_encrypt<R: Rng + ?Sized>(
    pk: &DualPublicKey,
    mu: bool,
    noise: &TruncGaussian,
    rng: &mut R,
) -> Result<GswCiphertext> {
    let md = pk.modulus();
    let rows = pk.m() + 1;
    let big_n = rows * md.log_q() as usize;
    let s = ModMatrix::uniform(md, pk.n(), big_n, rng);
    let e_vals: Vec<i128> = (0..rows * big_n).map(|_| noise.sample1(rng)).collect();
    let e = ModMatrix::from_rows(md, rows, big_n, &e_vals)?;
    gsw_encrypt_with(pk, mu, &s, &e)
}

/// E = C − A′S − μG, for tests that keep the encryption randomness.
pub fn gsw_error(pk: &DualPublicKey, c: &GswCiphertext, s: &ModMatrix, mu: bool) -> Result<ModMatrix> {
    let mut e = c.c.sub(&pk.matrix().matmul(s)?)?;
    if mu {
        e = e.sub(&gadget_matrix(pk.modulus(), pk.m() + 1))?;
    }
    Ok(e)
}

/// The deepest NAND level whose error bound β_init (N+1)^d stays below
/// q / (4(m+1)).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseBudget {
    max_level: Option<u32>,
}

impl NoiseBudget {
    pub fn from_params(p: &Params) -> Self {
        let max_level = (0..=u32::MAX).take_while(|&d| bound_holds(p, d as u64)).last();
        NoiseBudget { max_level }
    }

    /// A budget that admits any depth. Only for clear-semantics tests.
    pub fn unlimited() -> Self {
        NoiseBudget { max_level: Some(u32::MAX) }
    }

    pub fn max_level(&self) -> Option<u32> {
        self.max_level
    }

    pub fn admits(&self, level: u32) -> bool {
        self.max_level.is_some_and(|m| level <= m)
    }
}

/// β_init (N+1)^depth < q / (4(m+1)), evaluated exactly.
fn bound_holds(p: &Params, depth: u64) -> bool {
    let limit = p.modulus.q() / (4 * (p.m as u128 + 1));
    // Strict inequality with an integer left side: lhs < q/(4(m+1)) iff lhs·4(m+1) < q.
    let base = p.big_n() as u128 + 1;
    let mut lhs = p.beta_init as u128;
    for _ in 0..depth {
        lhs = match lhs.checked_mul(base) {
            Some(v) if v <= limit + 1 => v,
            _ => return false,
        };
    }
    lhs.checked_mul(4 * (p.m as u128 + 1)).is_some_and(|v| v < p.modulus.q())
}

/// G − C0·G⁻¹(C1), an encryption of 1 − μ0μ1 one level deeper than its inputs.
pub fn eval_nand(c0: &GswCiphertext, c1: &GswCiphertext, budget: &NoiseBudget) -> Result<GswCiphertext> {
    let level = c0.level.max(c1.level) + 1;
    if !budget.admits(level) {
        return Err(Error::NoiseBudget { level, allowed: budget.max_level.unwrap_or(0) });
    }
    if c0.c.dims() != c1.c.dims() || c0.modulus() != c1.modulus() {
        return Err(Error::Dimension("NAND operands under different keys".into()));
    }
    let bits = gadget_decompose_matrix(&c1.c);
    let prod = c0.c.matmul_bits(&bits)?;
    let g = gadget_matrix(c0.modulus(), c0.c.rows());
    Ok(GswCiphertext { c: g.sub(&prod)?, level })
}

/// NOT as NAND with the trivial encryption of 1: G − C·G⁻¹(G) = G − C.
/// The error is only negated, so the level is unchanged.
pub fn hom_not(c: &GswCiphertext) -> GswCiphertext {
    let g = gadget_matrix(c.modulus(), c.c.rows());
    GswCiphertext { c: g.sub(&c.c).expect("same shape"), level: c.level }
}

/// The last column of C, a dual ciphertext of the same bit.
pub fn convert(c: &GswCiphertext) -> DualCiphertext {
    DualCiphertext::from_vector(c.c.col(c.c.cols() - 1))
}

pub fn gsw_decrypt(sk: &DualSecretKey, c: &GswCiphertext) -> bool {
    dual_decrypt(sk, &convert(c))
}

/// Outcome of checking a parameter set against the correctness inequalities.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub log_q: u32,
    pub n: usize,
    pub m: usize,
    pub big_n: usize,
    pub beta_init: u64,
    pub eta: u32,
    pub eta_c: u32,
    /// m ≥ n log q.
    pub dimension_ok: bool,
    /// β_init ≥ 2√n.
    pub noise_ok: bool,
    /// β_init (N+1)^{η_c} < q/(4(m+1)) with the declared η_c.
    pub classical_ok: bool,
    /// β_init (N+1)^{η+η_c} < q/(4(m+1)) with the declared η, η_c.
    pub quantum_ok: bool,
    /// log2 of β_f = β_init (N+1)^{η+η_c}.
    pub log2_beta_f: f64,
    /// Depth of the compiled key-update circuit, when one exists for these
    /// parameters.
    pub measured_depth: Option<u32>,
    /// The measured depth covers decryption only and understates the full
    /// update.
    pub measured_is_lower_bound: bool,
    /// The classical inequality evaluated at the measured depth.
    pub classical_measured_ok: Option<bool>,
    /// Deepest NAND level the noise budget admits.
    pub max_level: Option<u32>,
}

impl ParamReport {
    pub fn dimension_and_noise_ok(&self) -> bool {
        self.dimension_ok && self.noise_ok
    }

    /// The quantum inequality fails, so only the exact (simulated) encrypted
    /// CNOT is meaningful.
    pub fn exact_mode_only(&self) -> bool {
        !self.quantum_ok
    }

    pub fn all_declared_ok(&self) -> bool {
        self.dimension_and_noise_ok() && self.classical_ok && self.quantum_ok
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "log q = {}, n = {}, m = {}, N = {}, beta_init = {}", self.log_q, self.n, self.m, self.big_n, self.beta_init)?;
        writeln!(f, "m >= n log q: {}", mark(self.dimension_ok))?;
        writeln!(f, "beta_init >= 2 sqrt(n): {}", mark(self.noise_ok))?;
        writeln!(f, "classical bound at eta_c = {}: {}", self.eta_c, mark(self.classical_ok))?;
        writeln!(f, "quantum bound at eta + eta_c = {}: {}", self.eta + self.eta_c, mark(self.quantum_ok))?;
        writeln!(f, "log2 beta_f = {:.2}", self.log2_beta_f)?;
        match (self.measured_depth, self.classical_measured_ok) {
            (Some(d), Some(ok)) => writeln!(
                f,
                "compiled update depth {}{d}; classical bound at that depth: {}",
                if self.measured_is_lower_bound { ">= " } else { "= " },
                mark(ok)
            )?,
            _ => writeln!(f, "compiled update depth: not available for these parameters")?,
        }
        match self.max_level {
            Some(l) => writeln!(f, "noise budget admits NAND depth {l}")?,
            None => writeln!(f, "noise budget admits no ciphertext at all")?,
        }
        if self.exact_mode_only() {
            writeln!(f, "exact-mode only")?;
        }
        Ok(())
    }
}

/// Full report, with the depth measured on the compiled key-update circuit.
pub fn validate_params(p: &Params) -> ParamReport {
    match crate::boolcirc::measured_update_depth(p) {
        Ok((d, lower)) => {
            let mut r = validate_params_with(p, Some(d));
            r.measured_is_lower_bound = lower;
            r
        }
        Err(_) => validate_params_with(p, None),
    }
}

/// Evaluates the inequalities on the declared η, η_c and, when given, on a
/// measured circuit depth.
pub fn validate_params_with(p: &Params, measured_depth: Option<u32>) -> ParamReport {
    let log_q = p.log_q();
    let big_n = p.big_n();
    let beta = p.beta_init as f64;
    let log2_beta_f = beta.log2() + (p.eta + p.eta_c) as f64 * ((big_n + 1) as f64).log2();
    ParamReport {
        log_q,
        n: p.n,
        m: p.m,
        big_n,
        beta_init: p.beta_init,
        eta: p.eta,
        eta_c: p.eta_c,
        dimension_ok: p.m as u64 >= p.n as u64 * log_q as u64,
        // β ≥ 2√n  iff  β² ≥ 4n.
        noise_ok: (p.beta_init as u128).pow(2) >= 4 * p.n as u128,
        classical_ok: bound_holds(p, p.eta_c as u64),
        quantum_ok: bound_holds(p, p.eta as u64 + p.eta_c as u64),
        log2_beta_f,
        measured_depth,
        measured_is_lower_bound: false,
        classical_measured_ok: measured_depth.map(|d| bound_holds(p, d as u64)),
        max_level: NoiseBudget::from_params(p).max_level(),
    }
}

/// Smallest log q in `range` for which the classical inequality holds at
/// `depth`, with every other field of `template` kept. `m_for` supplies m
/// as a function of log q.
pub fn smallest_log_q<F: Fn(u32) -> usize>(
    template: &Params,
    depth: u32,
    range: std::ops::RangeInclusive<u32>,
    m_for: F,
) -> Option<Params> {
    range.filter_map(|k| Modulus::new(k).ok()).find_map(|md| {
        let mut p = template.clone();
        p.modulus = md;
        p.m = m_for(md.log_q());
        (p.check().is_ok() && bound_holds(&p, depth as u64)).then_some(p)
    })
}
