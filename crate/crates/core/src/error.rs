use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trapdoor inversion failed: {0}")]
    InversionFailure(String),
    #[error("noise budget exceeded: level {level} > allowed {allowed}")]
    NoiseBudget { level: u32, allowed: u32 },
    #[error("simulator capacity exceeded: {0} qubits")]
    Capacity(usize),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("unsupported gate: {0}")]
    UnsupportedGate(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
