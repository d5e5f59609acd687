//! Command-line front end.
//!
//! Randomness: one ChaCha20 generator per run, seeded by `--seed`, with a
//! separate stream per subsystem (see `Stream`). Outputs are byte-identical
//! for a fixed seed and thread count does not affect them.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::distributions::{hellinger2, shift_bound, Density, TruncGaussian};
use crate::dualenc::{dual_encrypt_with, dual_keygen, DualSecretKey};
use crate::dualfhe::{eval_nand, gsw_decrypt, gsw_encrypt, NoiseBudget};
use crate::enccnot::{empirical_law, encrypted_cnot_exact, encrypted_cnot_sampled, exact_outcome_law, law_distance, outcome_key, CnotContext};
use crate::error::{Error, Result};
use crate::presets::Preset;
use crate::qhe::{apply_toffoli, qhe_decrypt, qhe_encrypt, qhe_eval, qhe_keygen, EvalKeyChain, QheCiphertext, Register, TrustedEvaluator, UpdateMode};
use crate::qsim::{QuantumCircuit, StateVector};
use crate::ringmod::{ModMatrix, Modulus};

const EXIT_CODES: &str = "Exit codes: 0 success, 2 usage error, 3 invalid configuration, \
4 noise budget exceeded, 5 trapdoor inversion failure, 6 malformed input or I/O error, \
7 dimension or capacity error, 8 unsupported gate.";

#[derive(Parser, Debug)]
#[command(name = "qfhe", version, about = "Leveled homomorphic encryption for Clifford+Toffoli circuits", after_help = EXIT_CODES)]
struct Cli {
    /// Seed of the run's random generator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter reports.
    Params {
        #[command(subcommand)]
        action: ParamsAction,
    },
    /// Generate a key chain into a directory.
    Keygen(KeygenArgs),
    /// Encrypt a bit string.
    Encrypt(EncryptArgs),
    /// Evaluate a layered circuit on a ciphertext.
    Eval(EvalArgs),
    /// Decrypt a ciphertext at the final level.
    Decrypt(DecryptArgs),
    /// Encrypted CNOT experiments.
    Enccnot {
        #[command(subcommand)]
        action: EnccnotAction,
    },
    /// Distribution statistics.
    Stats {
        #[command(subcommand)]
        action: StatsAction,
    },
    /// Timings.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// End-to-end demonstrations.
    Demo {
        #[command(subcommand)]
        action: DemoAction,
    },
}

#[derive(Subcommand, Debug)]
enum ParamsAction {
    /// Validate a preset and print its report.
    Check {
        #[arg(long)]
        preset: String,
    },
}

#[derive(Args, Debug)]
struct KeygenArgs {
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 1)]
    levels: usize,
    /// Also write GSW encryptions of each level's secrets (faithful mode).
    #[arg(long)]
    bundles: bool,
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args, Debug)]
struct EncryptArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Plaintext as a string of 0 and 1, qubit 0 first.
    #[arg(long)]
    bits: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Oracle,
    Faithful,
}

impl From<ModeArg> for UpdateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Oracle => UpdateMode::Oracle,
            ModeArg::Faithful => UpdateMode::Faithful,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    circuit: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Oracle)]
    mode: ModeArg,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecryptArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CnotMode {
    Exact,
    Sampled,
}

#[derive(Subcommand, Debug)]
enum EnccnotAction {
    /// Run encrypted CNOTs on (|00⟩ + |10⟩)/√2 and tabulate the outcome law.
    Demo {
        #[arg(long, default_value = "nano")]
        preset: String,
        #[arg(long, value_enum, default_value_t = CnotMode::Sampled)]
        mode: CnotMode,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        /// The encrypted exponent s.
        #[arg(long, default_value_t = 1)]
        bit: u8,
    },
}

#[derive(Subcommand, Debug)]
enum StatsAction {
    /// H²(D, D+e) against its closed-form bound for random shifts, as CSV.
    Gaussians {
        #[arg(long, default_value_t = 6)]
        log_q: u32,
        #[arg(long, default_value_t = 8.0)]
        width: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        shifts: usize,
    },
}

#[derive(Subcommand, Debug)]
enum BenchAction {
    /// Time homomorphic NAND gates.
    Nand {
        #[arg(long, default_value = "nano-plus")]
        preset: String,
        #[arg(long, default_value_t = 10)]
        gates: usize,
    },
}

#[derive(Subcommand, Debug)]
enum DemoAction {
    /// Encrypt every 3-bit input, apply a Toffoli, decrypt.
    Toffoli {
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Oracle)]
        mode: ModeArg,
    },
}

/// Independent random streams derived from the run seed.
#[derive(Clone, Copy)]
enum Stream {
    Keygen = 1,
    Encrypt = 2,
    Eval = 3,
    Demo = 4,
    Stats = 5,
}

fn stream(seed: u64, s: Stream) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 3,
        Error::NoiseBudget { .. } => 4,
        Error::InversionFailure(_) => 5,
        Error::Format(_) | Error::Io(_) => 6,
        Error::Dimension(_) | Error::Capacity(_) => 7,
        Error::UnsupportedGate(_) => 8,
    }
}

/// Parses `argv` (program name first), runs, and returns the exit code.
/// Reports go to `out`, diagnostics to stderr.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Params { action: ParamsAction::Check { preset } } => {
            write!(out, "{}", Preset::by_name(preset)?)?;
        }
        Command::Keygen(a) => keygen(a, seed, out)?,
        Command::Encrypt(a) => encrypt(a, seed, out)?,
        Command::Eval(a) => eval(a, seed, out)?,
        Command::Decrypt(a) => decrypt(a, out)?,
        Command::Enccnot { action: EnccnotAction::Demo { preset, mode, runs, bit } } => {
            enccnot_demo(preset, *mode, *runs, *bit != 0, seed, out)?
        }
        Command::Stats { action: StatsAction::Gaussians { log_q, width, dim, shifts } } => {
            stats_gaussians(*log_q, *width, *dim, *shifts, seed, out)?
        }
        Command::Bench { action: BenchAction::Nand { preset, gates } } => bench_nand(preset, *gates, seed, out)?,
        Command::Demo { action: DemoAction::Toffoli { preset, mode } } => demo_toffoli(preset, (*mode).into(), seed, out)?,
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn keygen(a: &KeygenArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let preset = Preset::by_name(&a.preset)?;
    let mut rng = stream(seed, Stream::Keygen);
    let keys = qhe_keygen(&preset, a.levels, a.bundles, &mut rng)?;
    std::fs::create_dir_all(&a.dir)?;
    let mut w = create(&a.dir.join("chain.bin"))?;
    keys.chain.write_to(&mut w)?;
    w.flush()?;
    let mut w = create(&a.dir.join("sk.bin"))?;
    keys.sk.write_to(&mut w)?;
    w.flush()?;
    let mut w = create(&a.dir.join("evaluator.bin"))?;
    keys.evaluator.write_to(&mut w)?;
    w.flush()?;
    writeln!(out, "wrote chain.bin, sk.bin, evaluator.bin for {} levels of {}", a.levels, preset.name)?;
    Ok(())
}

fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Format(format!("bit string may only contain 0 and 1, found `{c}`"))),
        })
        .collect()
}

fn bits_string(b: &[bool]) -> String {
    b.iter().map(|&x| if x { '1' } else { '0' }).collect()
}

fn load_chain(dir: &Path) -> Result<EvalKeyChain> {
    EvalKeyChain::read_from(&mut open(&dir.join("chain.bin"))?)
}

fn encrypt(a: &EncryptArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let chain = load_chain(&a.dir)?;
    let bits = parse_bits(&a.bits)?;
    let ct = qhe_encrypt(&chain, &Register::Bits(bits), &mut stream(seed, Stream::Encrypt))?;
    let mut w = create(&a.out)?;
    ct.write_to(&mut w)?;
    w.flush()?;
    writeln!(out, "encrypted {} bits under pk_1", a.bits.len())?;
    Ok(())
}

fn eval(a: &EvalArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let chain = load_chain(&a.dir)?;
    let evaluator = TrustedEvaluator::read_from(&mut open(&a.dir.join("evaluator.bin"))?)?;
    let circuit = QuantumCircuit::parse(&std::fs::read_to_string(&a.circuit)?)?;
    let mut ct = QheCiphertext::read_from(&mut open(&a.input)?)?;
    let start = Instant::now();
    qhe_eval(&mut ct, &circuit, &chain, &evaluator, a.mode.into(), &mut stream(seed, Stream::Eval))?;
    let mut w = create(&a.out)?;
    ct.write_to(&mut w)?;
    w.flush()?;
    writeln!(
        out,
        "evaluated {} layers ({} Toffolis) in {:.2}s; {} collapsed encrypted CNOTs",
        circuit.layers.len(),
        circuit.toffoli_count(),
        start.elapsed().as_secs_f64(),
        ct.collapsed
    )?;
    Ok(())
}

fn decrypt(a: &DecryptArgs, out: &mut dyn Write) -> Result<()> {
    let chain = load_chain(&a.dir)?;
    let sk = DualSecretKey::read_from(&mut open(&a.dir.join("sk.bin"))?)?;
    let ct = QheCiphertext::read_from(&mut open(&a.input)?)?;
    match qhe_decrypt(&sk, &chain, &ct)? {
        Register::Bits(b) => writeln!(out, "{}", bits_string(&b))?,
        Register::State(s) => write_distribution(&s, out)?,
    }
    Ok(())
}

/// Measurement probabilities as CSV, outcome written qubit 0 first.
fn write_distribution(s: &StateVector, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "outcome,probability")?;
    for (i, a) in s.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        if p > 1e-12 {
            let bits: Vec<bool> = (0..s.num_qubits()).map(|q| (i >> q) & 1 == 1).collect();
            writeln!(out, "{},{p:.9}", bits_string(&bits))?;
        }
    }
    Ok(())
}

fn enccnot_demo(preset: &str, mode: CnotMode, runs: usize, bit: bool, seed: u64, out: &mut dyn Write) -> Result<()> {
    let preset = Preset::by_name(preset)?;
    if matches!(mode, CnotMode::Exact) && !preset.exact_capable {
        return Err(Error::Config(format!("preset {} is too large for the exact simulation", preset.name)));
    }
    let p = &preset.params;
    let mut rng = stream(seed, Stream::Demo);
    let keys = dual_keygen(p, &mut rng)?;
    let noise = TruncGaussian::new(p.modulus, preset.d_width, p.m + 1)?;
    let key_noise = TruncGaussian::new(p.modulus, preset.key_width, p.m + 1)?;
    let s = ModMatrix::uniform(p.modulus, p.n, 1, &mut rng);
    let e = ModMatrix::column(p.modulus, &key_noise.sample(&mut rng));
    let c_hat = dual_encrypt_with(&keys.pk, bit, &s, &e)?;
    let ctx = CnotContext { pk: &keys.pk, td: &keys.td, noise: &noise };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let psi = StateVector::from_amplitudes(vec![h.into(), h.into(), 0.0.into(), 0.0.into()])?;
    let mut keys_seen = Vec::with_capacity(runs);
    for _ in 0..runs {
        let o = match mode {
            CnotMode::Exact => encrypted_cnot_exact(&psi, &c_hat, &ctx, &mut rng)?,
            CnotMode::Sampled => encrypted_cnot_sampled(&psi, &c_hat, &ctx, &mut rng)?,
        };
        keys_seen.push(outcome_key(&o));
    }
    let emp = empirical_law(&keys_seen);
    writeln!(out, "collapsed,x_corr,z_corr,frequency")?;
    let sorted: BTreeMap<_, _> = emp.iter().collect();
    for ((c, x, z), f) in sorted {
        writeln!(out, "{},{},{},{f:.4}", *c as u8, *x as u8, *z as u8)?;
    }
    if preset.exact_capable {
        let law = exact_outcome_law(&psi, &c_hat, &ctx)?;
        writeln!(out, "TV to the exact law: {:.4}", law_distance(&law, &emp))?;
    }
    Ok(())
}

fn stats_gaussians(log_q: u32, width: f64, dim: usize, shifts: usize, seed: u64, out: &mut dyn Write) -> Result<()> {
    let md = Modulus::new(log_q)?;
    let g = TruncGaussian::new(md, width, dim)?;
    let base = g.density()?;
    let mut rng = stream(seed, Stream::Stats);
    writeln!(out, "shift,norm,hellinger2,bound,holds")?;
    for _ in 0..shifts {
        let lim = width as i128;
        let e: Vec<i128> = (0..dim).map(|_| rng.gen_range(-lim..=lim)).collect();
        let (a, b) = Density::align(&base, &base.shifted(md, &e));
        let h2 = hellinger2(&a, &b)?;
        let norm = e.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
        let bound = shift_bound(dim, norm, width);
        let shift: Vec<String> = e.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{},{norm:.4},{h2:.6e},{bound:.6e},{}", shift.join(" "), h2 <= bound + 1e-12)?;
    }
    Ok(())
}

fn bench_nand(preset: &str, gates: usize, seed: u64, out: &mut dyn Write) -> Result<()> {
    let preset = Preset::by_name(preset)?;
    let p = &preset.params;
    let mut rng = stream(seed, Stream::Demo);
    let keys = dual_keygen(p, &mut rng)?;
    let noise = TruncGaussian::new(p.modulus, preset.key_width, 1)?;
    let budget = NoiseBudget::from_params(p);
    let (a, b): (bool, bool) = (rng.gen(), rng.gen());
    let ca = gsw_encrypt(&keys.pk, a, &noise, &mut rng)?;
    let cb = gsw_encrypt(&keys.pk, b, &noise, &mut rng)?;
    let start = Instant::now();
    let mut last = None;
    for _ in 0..gates {
        last = Some(eval_nand(&ca, &cb, &budget)?);
    }
    let secs = start.elapsed().as_secs_f64();
    if let Some(c) = last {
        if gsw_decrypt(&keys.sk, &c) != !(a & b) {
            return Err(Error::Config("NAND decrypted incorrectly".into()));
        }
    }
    writeln!(out, "preset,N,gates,seconds,seconds_per_gate")?;
    writeln!(out, "{},{},{gates},{secs:.4},{:.6}", preset.name, p.big_n(), secs / gates.max(1) as f64)?;
    Ok(())
}

fn demo_toffoli(preset: &str, mode: UpdateMode, seed: u64, out: &mut dyn Write) -> Result<()> {
    let preset = Preset::by_name(preset)?;
    let mut rng = stream(seed, Stream::Demo);
    let keys = qhe_keygen(&preset, 1, mode == UpdateMode::Faithful, &mut rng)?;
    writeln!(out, "input,output")?;
    for input in 0..8usize {
        let bits: Vec<bool> = (0..3).map(|q| (input >> q) & 1 == 1).collect();
        let mut ct = qhe_encrypt(&keys.chain, &Register::Bits(bits.clone()), &mut rng)?;
        apply_toffoli(&mut ct, [0, 1, 2], &keys.chain, &keys.evaluator, mode, &mut rng)?;
        let state = match qhe_decrypt(&keys.sk, &keys.chain, &ct)? {
            Register::State(s) => s,
            Register::Bits(_) => return Err(Error::Config("Toffoli output stays quantum".into())),
        };
        let (best, _) = state
            .amplitudes()
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm_sqr().total_cmp(&y.1.norm_sqr()))
            .expect("nonempty register");
        let out_bits: Vec<bool> = (0..3).map(|q| (best >> q) & 1 == 1).collect();
        writeln!(out, "{},{}", bits_string(&bits), bits_string(&out_bits))?;
    }
    Ok(())
}
