//! Leveled LWE homomorphic encryption (a dual-Regev scheme and its GSW-style
//! extension) together with a Pauli one-time-pad layer that evaluates
//! Clifford+Toffoli circuits on encrypted quantum states.
//!
//! Research artifact: nothing here is constant time.

pub mod error;
pub mod ringmod;
pub mod distributions;
pub mod codec;
pub mod trapdoor;
pub mod dualenc;
pub mod dualfhe;
pub mod boolcirc;
pub mod qsim;
pub mod enccnot;
pub mod presets;
pub mod qhe;
pub mod cli;
