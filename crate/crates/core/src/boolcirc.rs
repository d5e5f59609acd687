//! NAND circuits: an IR with named ports, a constant-folding builder,
//! clear and homomorphic evaluation, a text netlist format, and the
//! compilers for the classical pieces of the key-update step.
//!
//! Wires `0..num_inputs` are the input bits in port order; gate `g` defines
//! wire `num_inputs + g`. Outputs may also be constants.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dualenc::{dual_decrypt, DualCiphertext, DualSecretKey};
use crate::dualfhe::{eval_nand, hom_not, GswCiphertext, NoiseBudget};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dualenc::dual_keygen;
use crate::ringmod::{ModMatrix, Modulus, Params};
use crate::trapdoor::TrapdoorMatrix;

/// Above this many secret variables a truth-table compilation is refused.
pub const TABLE_VAR_LIMIT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Signal {
    Const(bool),
    Wire(usize),
}

impl Signal {
    pub const ZERO: Signal = Signal::Const(false);
    pub const ONE: Signal = Signal::Const(true);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Port {
    pub name: String,
    pub signals: Vec<Signal>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Circuit {
    inputs: Vec<Port>,
    num_inputs: usize,
    gates: Vec<[usize; 2]>,
    outputs: Vec<Port>,
}

impl Circuit {
    pub fn inputs(&self) -> &[Port] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Port] {
        &self.outputs
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.iter().map(|p| p.signals.len()).sum()
    }

    pub fn num_gates(&self) -> usize {
        self.gates.len()
    }

    pub fn input_width(&self, name: &str) -> Option<usize> {
        self.inputs.iter().find(|p| p.name == name).map(|p| p.signals.len())
    }

    fn wire_depths(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.num_inputs + self.gates.len()];
        for (g, [a, b]) in self.gates.iter().enumerate() {
            d[self.num_inputs + g] = d[*a].max(d[*b]) + 1;
        }
        d
    }

    /// Longest input-to-output NAND path.
    pub fn depth(&self) -> u32 {
        let d = self.wire_depths();
        self.outputs
            .iter()
            .flat_map(|p| &p.signals)
            .map(|s| match s {
                Signal::Wire(w) => d[*w],
                Signal::Const(_) => 0,
            })
            .max()
            .unwrap_or(0)
    }

    fn check_inputs<T>(&self, inputs: &[T]) -> Result<()> {
        if inputs.len() != self.num_inputs {
            return Err(Error::Dimension(format!("{} input bits for a circuit with {}", inputs.len(), self.num_inputs)));
        }
        Ok(())
    }

    /// Evaluates on the concatenation of all input ports; returns the
    /// concatenation of all output ports.
    pub fn eval_clear(&self, inputs: &[bool]) -> Result<Vec<bool>> {
        self.check_inputs(inputs)?;
        let mut w = Vec::with_capacity(self.num_inputs + self.gates.len());
        w.extend_from_slice(inputs);
        for [a, b] in &self.gates {
            let v = !(w[*a] && w[*b]);
            w.push(v);
        }
        Ok(self
            .outputs
            .iter()
            .flat_map(|p| &p.signals)
            .map(|s| match s {
                Signal::Const(c) => *c,
                Signal::Wire(x) => w[*x],
            })
            .collect())
    }

    /// Gate-by-gate evaluation on GSW ciphertexts. NAND(x, x) is realized
    /// as the cheaper negation G − C, which leaves the noise level alone.
    /// Gates of equal depth run in parallel.
    pub fn eval_homomorphic(
        &self,
        inputs: &[GswCiphertext],
        modulus: Modulus,
        m: usize,
        budget: &NoiseBudget,
    ) -> Result<Vec<GswCiphertext>> {
        self.check_inputs(inputs)?;
        let depths = self.wire_depths();
        let mut layers: Vec<Vec<usize>> = Vec::new();
        for g in 0..self.gates.len() {
            let d = depths[self.num_inputs + g] as usize;
            if layers.len() < d {
                layers.resize(d, Vec::new());
            }
            layers[d - 1].push(g);
        }
        let mut wires: Vec<Option<GswCiphertext>> = inputs.iter().cloned().map(Some).collect();
        wires.resize(self.num_inputs + self.gates.len(), None);
        for layer in layers {
            let out: Vec<(usize, GswCiphertext)> = layer
                .par_iter()
                .map(|&g| {
                    let [a, b] = self.gates[g];
                    let ca = wires[a].as_ref().expect("topological order");
                    let v = if a == b {
                        hom_not(ca)
                    } else {
                        eval_nand(ca, wires[b].as_ref().expect("topological order"), budget)?
                    };
                    Ok((self.num_inputs + g, v))
                })
                .collect::<Result<_>>()?;
            for (w, v) in out {
                wires[w] = Some(v);
            }
        }
        Ok(self
            .outputs
            .iter()
            .flat_map(|p| &p.signals)
            .map(|s| match s {
                Signal::Const(c) => GswCiphertext::trivial(modulus, m, *c),
                Signal::Wire(x) => wires[*x].clone().expect("defined wire"),
            })
            .collect())
    }

    /// Text netlist: `INPUT name width`, `NAND out a b` (wires numbered as
    /// above), and `OUTPUT name s0 s1 …` where each s is a wire or 0/1
    /// prefixed with `#`. Text after `%` is a comment.
    pub fn to_netlist(&self) -> String {
        let mut s = String::new();
        for p in &self.inputs {
            writeln!(s, "INPUT {} {}", p.name, p.signals.len()).unwrap();
        }
        for (g, [a, b]) in self.gates.iter().enumerate() {
            writeln!(s, "NAND {} {a} {b}", self.num_inputs + g).unwrap();
        }
        for p in &self.outputs {
            write!(s, "OUTPUT {}", p.name).unwrap();
            for sig in &p.signals {
                match sig {
                    Signal::Wire(w) => write!(s, " {w}").unwrap(),
                    Signal::Const(c) => write!(s, " #{}", *c as u8).unwrap(),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_netlist(text: &str) -> Result<Circuit> {
        let mut inputs = Vec::new();
        let mut num_inputs = 0usize;
        let mut gates: Vec<[usize; 2]> = Vec::new();
        let mut outputs = Vec::new();
        let bad = |line: usize, msg: &str| Error::Format(format!("netlist line {}: {msg}", line + 1));
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('%').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let kw = it.next().unwrap_or("");
            let rest: Vec<&str> = it.collect();
            match kw {
                "INPUT" => {
                    if !gates.is_empty() {
                        return Err(bad(ln, "inputs must precede gates"));
                    }
                    let [name, width] = rest[..] else { return Err(bad(ln, "expected INPUT name width")) };
                    let width: usize = width.parse().map_err(|_| bad(ln, "bad width"))?;
                    let signals = (num_inputs..num_inputs + width).map(Signal::Wire).collect();
                    num_inputs += width;
                    inputs.push(Port { name: name.to_string(), signals });
                }
                "NAND" => {
                    let nums: Vec<usize> = rest
                        .iter()
                        .map(|x| x.parse().map_err(|_| bad(ln, "bad wire")))
                        .collect::<Result<_>>()?;
                    let [out, a, b] = nums[..] else { return Err(bad(ln, "expected NAND out a b")) };
                    let next = num_inputs + gates.len();
                    if out != next {
                        return Err(bad(ln, &format!("gate defines wire {out}, expected {next}")));
                    }
                    if a >= next || b >= next {
                        return Err(bad(ln, "wire used before definition"));
                    }
                    gates.push([a, b]);
                }
                "OUTPUT" => {
                    let Some((name, sigs)) = rest.split_first() else { return Err(bad(ln, "expected OUTPUT name …")) };
                    let total = num_inputs + gates.len();
                    let signals = sigs
                        .iter()
                        .map(|t| match *t {
                            "#0" => Ok(Signal::ZERO),
                            "#1" => Ok(Signal::ONE),
                            w => match w.parse::<usize>() {
                                Ok(x) if x < total => Ok(Signal::Wire(x)),
                                _ => Err(bad(ln, &format!("bad output signal {w}"))),
                            },
                        })
                        .collect::<Result<_>>()?;
                    outputs.push(Port { name: name.to_string(), signals });
                }
                other => return Err(bad(ln, &format!("unknown keyword {other}"))),
            }
        }
        Ok(Circuit { inputs, num_inputs, gates, outputs })
    }
}

/// Builds circuits with constant folding, double-negation removal and
/// structural sharing of identical gates.
#[derive(Debug, Default)]
pub struct Builder {
    inputs: Vec<Port>,
    num_inputs: usize,
    gates: Vec<[usize; 2]>,
    outputs: Vec<Port>,
    shared: HashMap<[usize; 2], usize>,
    /// For wires that are NAND(x, x): x.
    negation_of: HashMap<usize, usize>,
}

impl Builder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an input port. All inputs must be declared before any gate.
    pub fn input(&mut self, name: &str, width: usize) -> Vec<Signal> {
        assert!(self.gates.is_empty(), "inputs must be declared before gates");
        let signals: Vec<Signal> = (self.num_inputs..self.num_inputs + width).map(Signal::Wire).collect();
        self.num_inputs += width;
        self.inputs.push(Port { name: name.to_string(), signals: signals.clone() });
        signals
    }

    pub fn output(&mut self, name: &str, signals: Vec<Signal>) {
        self.outputs.push(Port { name: name.to_string(), signals });
    }

    pub fn finish(self) -> Circuit {
        Circuit { inputs: self.inputs, num_inputs: self.num_inputs, gates: self.gates, outputs: self.outputs }
    }

    fn is_negation(&self, a: usize, b: usize) -> bool {
        self.negation_of.get(&a) == Some(&b) || self.negation_of.get(&b) == Some(&a)
    }

    pub fn nand(&mut self, a: Signal, b: Signal) -> Signal {
        use Signal::*;
        match (a, b) {
            (Const(false), _) | (_, Const(false)) => Signal::ONE,
            (Const(true), Const(true)) => Signal::ZERO,
            (Const(true), Wire(x)) | (Wire(x), Const(true)) => self.nand(Wire(x), Wire(x)),
            (Wire(x), Wire(y)) => {
                if x == y {
                    if let Some(&src) = self.negation_of.get(&x) {
                        return Wire(src);
                    }
                } else if self.is_negation(x, y) {
                    return Signal::ONE;
                }
                let key = [x.min(y), x.max(y)];
                if let Some(&w) = self.shared.get(&key) {
                    return Wire(w);
                }
                let w = self.num_inputs + self.gates.len();
                self.gates.push(key);
                self.shared.insert(key, w);
                if x == y {
                    self.negation_of.insert(w, x);
                }
                Wire(w)
            }
        }
    }

    pub fn not(&mut self, a: Signal) -> Signal {
        self.nand(a, a)
    }

    pub fn and(&mut self, a: Signal, b: Signal) -> Signal {
        let t = self.nand(a, b);
        self.not(t)
    }

    pub fn or(&mut self, a: Signal, b: Signal) -> Signal {
        let na = self.not(a);
        let nb = self.not(b);
        self.nand(na, nb)
    }

    pub fn xor(&mut self, a: Signal, b: Signal) -> Signal {
        match (a, b) {
            (Signal::Const(false), x) | (x, Signal::Const(false)) => x,
            (Signal::Const(true), x) | (x, Signal::Const(true)) => self.not(x),
            _ if a == b => Signal::ZERO,
            _ => {
                let t = self.nand(a, b);
                let l = self.nand(a, t);
                let r = self.nand(b, t);
                self.nand(l, r)
            }
        }
    }

    /// `sel ? hi : lo`.
    pub fn mux(&mut self, sel: Signal, hi: Signal, lo: Signal) -> Signal {
        if hi == lo {
            return hi;
        }
        let a = self.nand(sel, hi);
        let ns = self.not(sel);
        let b = self.nand(ns, lo);
        self.nand(a, b)
    }

    /// Balanced XOR of many signals.
    pub fn xor_all(&mut self, xs: &[Signal]) -> Signal {
        match xs.len() {
            0 => Signal::ZERO,
            1 => xs[0],
            n => {
                let (l, r) = xs.split_at(n / 2);
                let a = self.xor_all(l);
                let b = self.xor_all(r);
                self.xor(a, b)
            }
        }
    }

    /// Balanced OR of many signals.
    pub fn or_all(&mut self, xs: &[Signal]) -> Signal {
        match xs.len() {
            0 => Signal::ZERO,
            1 => xs[0],
            n => {
                let (l, r) = xs.split_at(n / 2);
                let a = self.or_all(l);
                let b = self.or_all(r);
                self.or(a, b)
            }
        }
    }

    /// (sum, carry) of three bits.
    pub fn full_adder(&mut self, a: Signal, b: Signal, c: Signal) -> (Signal, Signal) {
        let ab = self.xor(a, b);
        let sum = self.xor(ab, c);
        let g = self.nand(a, b);
        let p = self.nand(ab, c);
        (sum, self.nand(g, p))
    }

    /// Ripple-carry a + b + carry_in modulo 2^len on little-endian words.
    pub fn add(&mut self, a: &[Signal], b: &[Signal], carry_in: Signal) -> Vec<Signal> {
        assert_eq!(a.len(), b.len());
        let mut carry = carry_in;
        let mut out = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            let (s, c) = self.full_adder(x, y, carry);
            out.push(s);
            carry = c;
        }
        out
    }

    /// a − b modulo 2^len.
    pub fn sub(&mut self, a: &[Signal], b: &[Signal]) -> Vec<Signal> {
        let nb: Vec<Signal> = b.iter().map(|&x| self.not(x)).collect();
        self.add(a, &nb, Signal::ONE)
    }

    /// Sum of words modulo 2^len by a balanced tree of ripple adders.
    pub fn sum_words(&mut self, words: &[Vec<Signal>], len: usize) -> Vec<Signal> {
        match words.len() {
            0 => vec![Signal::ZERO; len],
            1 => words[0].clone(),
            n => {
                let (l, r) = words.split_at(n / 2);
                let a = self.sum_words(l, len);
                let b = self.sum_words(r, len);
                self.add(&a, &b, Signal::ZERO)
            }
        }
    }

    /// Shannon expansion of a table indexed by the little-endian bits of
    /// `vars` (entry i is f(var_0 = bit 0 of i, …)). Depth at most 2v − 1.
    pub fn truth_table(&mut self, vars: &[Signal], table: &[bool]) -> Signal {
        assert_eq!(table.len(), 1 << vars.len());
        match vars.split_last() {
            None => Signal::Const(table[0]),
            Some((&top, rest)) => {
                let half = table.len() / 2;
                let lo = self.truth_table(rest, &table[..half]);
                let hi = self.truth_table(rest, &table[half..]);
                self.mux(top, hi, lo)
            }
        }
    }
}

/// Little-endian residue bits of a ring element.
pub fn encode_word(modulus: Modulus, x: i128) -> Vec<bool> {
    let r = modulus.residue(x);
    (0..modulus.log_q()).map(|j| (r >> j) & 1 == 1).collect()
}

/// Bit encoding of a dual ciphertext: its entries as words, in order.
pub fn encode_dual_ciphertext(c: &DualCiphertext) -> Vec<bool> {
    c.vector().as_slice().iter().flat_map(|&x| encode_word(c.modulus(), x)).collect()
}

/// Dual decryption with both the ciphertext and the secret as inputs:
/// ports `c` ((m+1)·log q bits) and `sk` (m bits), output `mu`.
pub fn compile_dual_decrypt(modulus: Modulus, m: usize) -> Result<Circuit> {
    let k = modulus.log_q() as usize;
    if k < 2 {
        return Err(Error::Config("decryption circuit needs log q >= 2".into()));
    }
    let mut b = Builder::new();
    let c = b.input("c", (m + 1) * k);
    let sk = b.input("sk", m);
    let words: Vec<&[Signal]> = c.chunks(k).collect();
    let terms: Vec<Vec<Signal>> = (0..m).map(|i| words[i].iter().map(|&x| b.and(x, sk[i])).collect()).collect();
    let total = b.sum_words(&terms, k);
    let phase = b.sub(words[m], &total);
    // |b′| > q/4 iff the residue lies strictly between q/4 and 3q/4.
    let t1 = phase[k - 1];
    let t0 = phase[k - 2];
    let low = b.or_all(&phase[..k - 2]);
    let mid = b.xor(t1, t0);
    let past = b.or(t1, low);
    let mu = b.and(mid, past);
    b.output("mu", vec![mu]);
    Ok(b.finish())
}

/// Enumerates every assignment of `vars` secret bits and compiles each of
/// the `outputs` columns of `f` as a truth table. Port names are given.
fn compile_tables<F>(input: &str, vars: usize, output: &str, outputs: usize, f: F) -> Result<Circuit>
where
    F: Fn(&[bool]) -> Result<Vec<bool>> + Sync,
{
    if vars > TABLE_VAR_LIMIT {
        return Err(Error::Config(format!(
            "{vars} secret bits exceed the truth-table limit of {TABLE_VAR_LIMIT}"
        )));
    }
    let rows: Vec<Vec<bool>> = (0..1usize << vars)
        .into_par_iter()
        .map(|i| {
            let assignment: Vec<bool> = (0..vars).map(|j| (i >> j) & 1 == 1).collect();
            let row = f(&assignment)?;
            if row.len() != outputs {
                return Err(Error::Dimension(format!("table row of width {}, expected {outputs}", row.len())));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut b = Builder::new();
    let x = b.input(input, vars);
    let outs = (0..outputs)
        .map(|o| {
            let table: Vec<bool> = rows.iter().map(|r| r[o]).collect();
            b.truth_table(&x, &table)
        })
        .collect();
    b.output(output, outs);
    Ok(b.finish())
}

/// Decrypts each of `ciphertexts` as a function of the secret-key bits
/// (port `sk`, output `keys`), with the ciphertexts folded in as constants.
pub fn compile_decrypt_tables(m: usize, ciphertexts: &[DualCiphertext]) -> Result<Circuit> {
    compile_tables("sk", m, "keys", ciphertexts.len(), |bits| {
        let sk = DualSecretKey::from_bits(bits.to_vec());
        Ok(ciphertexts.iter().map(|c| dual_decrypt(&sk, c)).collect())
    })
}

/// Compiles `f(trapdoor)` over the bit encoding of the trapdoor secret
/// (port `td`, output `corr`). `td` supplies the public part.
pub fn compile_trapdoor_tables<F>(td: &TrapdoorMatrix, outputs: usize, f: F) -> Result<Circuit>
where
    F: Fn(&TrapdoorMatrix) -> Result<Vec<bool>> + Sync,
{
    let vars = 2 * td.secret().len();
    compile_tables("td", vars, "corr", outputs, |bits| f(&td.with_secret_bits(bits)?))
}

/// keys ⊕ corr, wordwise. Ports `keys` and `corr` of width `width`, output `next`.
pub fn compile_update(width: usize) -> Circuit {
    let mut b = Builder::new();
    let keys = b.input("keys", width);
    let corr = b.input("corr", width);
    let next = keys.iter().zip(&corr).map(|(&k, &c)| b.xor(k, c)).collect();
    b.output("next", next);
    b.finish()
}

/// The three circuits of one key update: decrypt the old key bits under the
/// old secret, compute corrections from the old trapdoor, and combine.
#[derive(Clone, Debug)]
pub struct KeyUpdateSuite {
    pub dec: Circuit,
    pub recover: Circuit,
    pub update: Circuit,
}

impl KeyUpdateSuite {
    /// Depth of the composition: `dec` and `recover` run side by side.
    pub fn depth(&self) -> u32 {
        self.dec.depth().max(self.recover.depth()) + self.update.depth()
    }

    pub fn eval_clear(&self, sk_bits: &[bool], td_bits: &[bool]) -> Result<Vec<bool>> {
        let keys = self.dec.eval_clear(sk_bits)?;
        let corr = self.recover.eval_clear(td_bits)?;
        self.update.eval_clear(&[keys, corr].concat())
    }

    /// Runs the suite on encryptions of the old secret and trapdoor bits.
    pub fn eval_homomorphic(
        &self,
        sk_bits: &[GswCiphertext],
        td_bits: &[GswCiphertext],
        modulus: Modulus,
        m: usize,
        budget: &NoiseBudget,
    ) -> Result<Vec<GswCiphertext>> {
        let (keys, corr) = rayon::join(
            || self.dec.eval_homomorphic(sk_bits, modulus, m, budget),
            || self.recover.eval_homomorphic(td_bits, modulus, m, budget),
        );
        self.update.eval_homomorphic(&[keys?, corr?].concat(), modulus, m, budget)
    }
}

/// Builds the suite for `keys` old key ciphertexts and a correction
/// function of the trapdoor.
pub fn compile_keyupdate_suite<F>(
    m: usize,
    keys: &[DualCiphertext],
    td: &TrapdoorMatrix,
    corrections: F,
) -> Result<KeyUpdateSuite>
where
    F: Fn(&TrapdoorMatrix) -> Result<Vec<bool>> + Sync,
{
    Ok(KeyUpdateSuite {
        dec: compile_decrypt_tables(m, keys)?,
        recover: compile_trapdoor_tables(td, keys.len(), corrections)?,
        update: compile_update(keys.len()),
    })
}

/// Depth of the key-update circuit faithful evaluation would run for `p`.
/// When the secrets are small enough for truth tables, a suite is compiled
/// with random public data (tables of random functions reach the structural
/// bound). Otherwise the generic decryption circuit is compiled and its depth
/// returned as a lower bound, flagged by the second component.
pub fn measured_update_depth(p: &Params) -> Result<(u32, bool)> {
    p.check()?;
    let td_vars = 2 * p.n * p.digits() * p.m_bar().unwrap_or(0);
    if p.m <= TABLE_VAR_LIMIT && td_vars <= TABLE_VAR_LIMIT {
        let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
        let keys = dual_keygen(p, &mut rng)?;
        let cts: Vec<DualCiphertext> =
            (0..4).map(|_| DualCiphertext::from_vector(ModMatrix::uniform(p.modulus, p.m + 1, 1, &mut rng))).collect();
        let salt: u64 = rng.gen();
        let suite = compile_keyupdate_suite(p.m, &cts, &keys.td, |t| {
            let seed = t.secret().iter().fold(salt, |h, &x| h.wrapping_mul(31).wrapping_add((x as i64 + 2) as u64));
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            Ok((0..cts.len()).map(|_| r.gen()).collect())
        })?;
        Ok((suite.depth(), false))
    } else {
        Ok((compile_dual_decrypt(p.modulus, p.m)?.depth(), true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::TruncGaussian;
    use crate::dualenc::dual_encrypt;
    use crate::dualfhe::{gsw_decrypt, gsw_encrypt};

    fn single_gate(op: fn(&mut Builder, Signal, Signal) -> Signal) -> Circuit {
        let mut b = Builder::new();
        let x = b.input("x", 2);
        let y = op(&mut b, x[0], x[1]);
        b.output("y", vec![y]);
        b.finish()
    }

    #[test]
    fn nand_and_macros_clear() {
        let nand = single_gate(|b, x, y| b.nand(x, y));
        assert_eq!(nand.eval_clear(&[true, true]).unwrap(), vec![false]);
        let ops: [(fn(&mut Builder, Signal, Signal) -> Signal, fn(bool, bool) -> bool); 4] = [
            (|b, x, y| b.xor(x, y), |x, y| x ^ y),
            (|b, x, y| b.and(x, y), |x, y| x & y),
            (|b, x, y| b.or(x, y), |x, y| x | y),
            (|b, x, y| b.nand(x, y), |x, y| !(x & y)),
        ];
        for (op, want) in ops {
            let c = single_gate(op);
            for i in 0..4 {
                let (x, y) = (i & 1 == 1, i & 2 == 2);
                assert_eq!(c.eval_clear(&[x, y]).unwrap(), vec![want(x, y)]);
            }
        }
        assert_eq!(single_gate(|b, x, y| b.xor(x, y)).depth(), 3);
        assert!(nand.eval_clear(&[true]).is_err());
    }

    #[test]
    fn folding() {
        let mut b = Builder::new();
        let x = b.input("x", 1)[0];
        let nx = b.not(x);
        assert_eq!(b.not(nx), x);
        assert_eq!(b.nand(x, nx), Signal::ONE);
        assert_eq!(b.nand(x, Signal::ZERO), Signal::ONE);
        assert_eq!(b.xor(x, x), Signal::ZERO);
        assert_eq!(b.mux(x, Signal::ONE, Signal::ZERO), x);
        assert_eq!(b.mux(x, Signal::ZERO, Signal::ONE), nx);
        let before = b.gates.len();
        let _ = b.not(x);
        assert_eq!(b.gates.len(), before);
    }

    #[test]
    fn mux_and_tables_exhaustive() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for vars in 0..=6usize {
            for _ in 0..5 {
                let table: Vec<bool> = (0..1usize << vars).map(|_| rng.gen()).collect();
                let mut b = Builder::new();
                let x = b.input("x", vars);
                let y = b.truth_table(&x, &table);
                b.output("y", vec![y]);
                let c = b.finish();
                assert!(c.depth() <= (2 * vars as u32).saturating_sub(1));
                for (i, &want) in table.iter().enumerate() {
                    let bits: Vec<bool> = (0..vars).map(|j| (i >> j) & 1 == 1).collect();
                    assert_eq!(c.eval_clear(&bits).unwrap(), vec![want]);
                }
            }
        }
    }

    #[test]
    fn adders_match_integer_arithmetic() {
        let mut b = Builder::new();
        let x = b.input("x", 6);
        let y = b.input("y", 6);
        let s = b.add(&x, &y, Signal::ZERO);
        let d = b.sub(&x, &y);
        b.output("s", s);
        b.output("d", d);
        let c = b.finish();
        for u in 0..64u32 {
            for v in 0..64u32 {
                let bits: Vec<bool> = (0..6).map(|j| (u >> j) & 1 == 1).chain((0..6).map(|j| (v >> j) & 1 == 1)).collect();
                let out = c.eval_clear(&bits).unwrap();
                let word = |w: &[bool]| w.iter().enumerate().fold(0u32, |a, (j, &b)| a | (b as u32) << j);
                assert_eq!(word(&out[..6]), (u + v) % 64);
                assert_eq!(word(&out[6..]), (u + 64 - v) % 64);
            }
        }
    }

    #[test]
    fn netlist_round_trip() {
        let mut b = Builder::new();
        let x = b.input("x", 3);
        let y = b.input("y", 3);
        let s = b.add(&x, &y, Signal::ZERO);
        b.output("s", s);
        b.output("k", vec![Signal::ONE, x[0]]);
        let c = b.finish();
        let text = c.to_netlist();
        assert_eq!(Circuit::from_netlist(&text).unwrap(), c);
        assert!(Circuit::from_netlist("NAND 0 0 0").is_err());
        assert!(Circuit::from_netlist("INPUT x 1\nNAND 2 0 0").is_err());
        assert!(Circuit::from_netlist("INPUT x 1\nNAND 1 0 5").is_err());
    }

    fn test_params() -> Params {
        Params {
            lambda: 8,
            modulus: Modulus::new(24).unwrap(),
            n: 2,
            m: 30,
            beta_init: 3,
            levels: 1,
            level_depth: 1,
            eta: 0,
            eta_c: 1,
            base_bits: 2,
        }
    }

    #[test]
    fn dual_decrypt_circuit_matches() {
        let p = test_params();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys = dual_keygen(&p, &mut rng).unwrap();
        let circ = compile_dual_decrypt(p.modulus, p.m).unwrap();
        let noise = TruncGaussian::new(p.modulus, p.beta_init as f64, p.m + 1).unwrap();
        let sk_bits = keys.sk.bits().to_vec();
        for i in 0..1000 {
            // Half honest encryptions, half arbitrary vectors (which exercise
            // the rounding boundary).
            let c = if i % 2 == 0 {
                dual_encrypt(&keys.pk, rng.gen(), &noise, &mut rng).unwrap()
            } else {
                DualCiphertext::from_vector(ModMatrix::uniform(p.modulus, p.m + 1, 1, &mut rng))
            };
            let input = [encode_dual_ciphertext(&c), sk_bits.clone()].concat();
            assert_eq!(circ.eval_clear(&input).unwrap(), vec![dual_decrypt(&keys.sk, &c)]);
        }
    }

    #[test]
    fn decrypt_circuit_tie_rule() {
        let md = Modulus::new(5).unwrap();
        let circ = compile_dual_decrypt(md, 1).unwrap();
        let sk = DualSecretKey::from_bits(vec![false]);
        for last in -15i128..=16 {
            let c = DualCiphertext::from_vector(ModMatrix::column(md, &[0, last]));
            let input = [encode_dual_ciphertext(&c), vec![false]].concat();
            assert_eq!(circ.eval_clear(&input).unwrap(), vec![dual_decrypt(&sk, &c)], "b' = {last}");
        }
    }

    #[test]
    fn decrypt_tables_match() {
        let p = test_params();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut q = p.clone();
        q.m = 6;
        q.n = 1;
        q.base_bits = 12;
        let keys = dual_keygen(&q, &mut rng).unwrap();
        let noise = TruncGaussian::new(q.modulus, q.beta_init as f64, q.m + 1).unwrap();
        let cts: Vec<DualCiphertext> = (0..5).map(|_| dual_encrypt(&keys.pk, rng.gen(), &noise, &mut rng).unwrap()).collect();
        let circ = compile_decrypt_tables(q.m, &cts).unwrap();
        assert!(circ.depth() < 2 * q.m as u32);
        for mask in 0..1usize << q.m {
            let bits: Vec<bool> = (0..q.m).map(|j| (mask >> j) & 1 == 1).collect();
            let sk = DualSecretKey::from_bits(bits.clone());
            let want: Vec<bool> = cts.iter().map(|c| dual_decrypt(&sk, c)).collect();
            assert_eq!(circ.eval_clear(&bits).unwrap(), want);
        }
        assert!(compile_decrypt_tables(TABLE_VAR_LIMIT + 1, &cts).is_err());
    }

    #[test]
    fn update_matches_direct_xor() {
        let c = compile_update(4);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..100 {
            let keys: Vec<bool> = (0..4).map(|_| rng.gen()).collect();
            let corr: Vec<bool> = (0..4).map(|_| rng.gen()).collect();
            let want: Vec<bool> = keys.iter().zip(&corr).map(|(a, b)| a ^ b).collect();
            assert_eq!(c.eval_clear(&[keys, corr].concat()).unwrap(), want);
        }
        assert_eq!(c.depth(), 3);
    }

    fn he_params() -> Params {
        Params {
            lambda: 8,
            modulus: Modulus::new(100).unwrap(),
            n: 1,
            m: 3,
            beta_init: 2,
            levels: 1,
            level_depth: 8,
            eta: 0,
            eta_c: 8,
            base_bits: 50,
        }
    }

    #[test]
    fn homomorphic_matches_clear() {
        let p = he_params();
        let budget = NoiseBudget::from_params(&p);
        assert!(budget.admits(8));
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let keys = dual_keygen(&p, &mut rng).unwrap();
        let noise = TruncGaussian::new(p.modulus, p.beta_init as f64, 1).unwrap();
        let enc = |bits: &[bool], rng: &mut ChaCha20Rng| -> Vec<GswCiphertext> {
            bits.iter().map(|&b| gsw_encrypt(&keys.pk, b, &noise, rng).unwrap()).collect()
        };
        let xor = single_gate(|b, x, y| b.xor(x, y));
        for i in 0..4 {
            let bits = [i & 1 == 1, i & 2 == 2];
            let out = xor.eval_homomorphic(&enc(&bits, &mut rng), p.modulus, p.m, &budget).unwrap();
            assert_eq!(gsw_decrypt(&keys.sk, &out[0]), bits[0] ^ bits[1]);
        }
        // One full-adder slice: two shared XORs plus the carry gate.
        let mut b = Builder::new();
        let x = b.input("x", 3);
        let (s, c) = b.full_adder(x[0], x[1], x[2]);
        b.output("s", vec![s, c]);
        let adder = b.finish();
        assert_eq!(adder.num_gates(), 9);
        for _ in 0..20 {
            let bits: Vec<bool> = (0..3).map(|_| rng.gen()).collect();
            let want = adder.eval_clear(&bits).unwrap();
            let out = adder.eval_homomorphic(&enc(&bits, &mut rng), p.modulus, p.m, &budget).unwrap();
            let got: Vec<bool> = out.iter().map(|c| gsw_decrypt(&keys.sk, c)).collect();
            assert_eq!(got, want);
            assert!(out.iter().all(|c| c.noise_level() <= adder.depth()));
        }
        let mut b = Builder::new();
        let x = b.input("x", 1);
        b.output("y", x);
        let ident = b.finish();
        let input = enc(&[true], &mut rng);
        assert_eq!(ident.eval_homomorphic(&input, p.modulus, p.m, &budget).unwrap(), input);
    }

    #[test]
    fn homomorphic_refuses_deep_circuits() {
        let mut p = he_params();
        p.modulus = Modulus::new(16).unwrap();
        p.base_bits = 8;
        let budget = NoiseBudget::from_params(&p);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let keys = dual_keygen(&p, &mut rng).unwrap();
        let noise = TruncGaussian::new(p.modulus, p.beta_init as f64, 1).unwrap();
        let input: Vec<GswCiphertext> =
            (0..2).map(|_| gsw_encrypt(&keys.pk, true, &noise, &mut rng).unwrap()).collect();
        let xor = single_gate(|b, x, y| b.xor(x, y));
        assert!(matches!(
            xor.eval_homomorphic(&input, p.modulus, p.m, &budget),
            Err(Error::NoiseBudget { .. })
        ));
    }
}
