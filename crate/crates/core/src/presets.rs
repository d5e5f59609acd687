//! Named parameter sets. Only the shapes are fixed here; the modulus of
//! `nano-plus` and every pass/fail flag come from the validator.

use std::fmt;

use crate::boolcirc::measured_update_depth;
use crate::dualfhe::{validate_params, validate_params_with, ParamReport};
use crate::error::{Error, Result};
use crate::ringmod::{Modulus, Params};

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub params: Params,
    /// Width of D, the distribution of the encrypted-CNOT noise.
    pub d_width: f64,
    /// Width of the noise in fresh key encryptions.
    pub key_width: f64,
    /// Small enough for the full sparse simulation of the encrypted CNOT.
    pub exact_capable: bool,
    /// Small enough to run the key update homomorphically.
    pub faithful_capable: bool,
    pub report: ParamReport,
}

pub const NAMES: [&str; 3] = ["nano", "nano-plus", "desk"];

impl Preset {
    pub fn by_name(name: &str) -> Result<Preset> {
        match name {
            "nano" => Ok(nano()),
            "nano-plus" => nano_plus(),
            "desk" => Ok(desk()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (known: {})", NAMES.join(", ")))),
        }
    }

    /// Re-runs the validator on the stored parameters.
    pub fn revalidate(&self) -> ParamReport {
        validate_params(&self.params)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preset {}", self.name)?;
        writeln!(f, "D width = {}, key noise width = {}", self.d_width, self.key_width)?;
        writeln!(f, "exact-capable: {}, faithful-capable: {}", self.exact_capable, self.faithful_capable)?;
        write!(f, "{}", self.report)
    }
}

fn build(name: &'static str, params: Params, d_width: f64, key_width: f64, exact: bool, faithful: bool) -> Preset {
    let report = validate_params(&params);
    Preset { name, params, d_width, key_width, exact_capable: exact, faithful_capable: faithful, report }
}

/// q = 16, n = 1, m = 2: the exact encrypted-CNOT simulation fits in 31
/// qubits. Fails the dimension and noise inequalities.
pub fn nano() -> Preset {
    let params = Params {
        lambda: 1,
        modulus: Modulus::new(4).expect("valid modulus"),
        n: 1,
        m: 2,
        beta_init: 2,
        levels: 1,
        level_depth: 1,
        eta: 0,
        eta_c: 0,
        base_bits: 2,
    };
    build("nano", params, 1.5, 1.5, true, false)
}

fn nano_plus_at(log_q: u32, eta_c: u32) -> Params {
    Params {
        lambda: 1,
        modulus: Modulus::new(log_q).expect("valid modulus"),
        n: 1,
        m: 3,
        beta_init: 2,
        levels: 1,
        level_depth: eta_c as usize,
        eta: 0,
        eta_c,
        base_bits: log_q / 2,
    }
}

/// n = 1, m = 3, with the smallest even log q whose noise budget covers the
/// measured depth of the compiled key-update circuit.
pub fn nano_plus() -> Result<Preset> {
    let (depth, lower) = measured_update_depth(&nano_plus_at(64, 0))?;
    if lower {
        return Err(Error::Config("nano-plus update circuit was not compiled".into()));
    }
    nano_plus_for_depth(depth)
}

/// The nano-plus shape with the smallest even log q admitting `depth`.
pub fn nano_plus_for_depth(depth: u32) -> Result<Preset> {
    let params = (8..=126)
        .step_by(2)
        .map(|k| nano_plus_at(k, depth))
        .find(|p| validate_params_with(p, Some(depth)).classical_measured_ok == Some(true))
        .ok_or_else(|| Error::Config(format!("no modulus up to 2^126 admits depth {depth}")))?;
    Ok(build("nano-plus", params, (1u64 << 16) as f64, 2.0, false, true))
}

/// q = 2^40, n = 4, binary gadget, m = n log q + 8. Declared η = η_c = 1.
pub fn desk() -> Preset {
    let params = Params {
        lambda: 4,
        modulus: Modulus::new(40).expect("valid modulus"),
        n: 4,
        m: 4 * 40 + 8,
        beta_init: 4,
        levels: 2,
        level_depth: 1,
        eta: 1,
        eta_c: 1,
        base_bits: 1,
    };
    build("desk", params, (1u64 << 33) as f64, 4.0, false, false)
}
