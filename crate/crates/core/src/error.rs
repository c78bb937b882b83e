use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range 1..={n_qubits}")]
    QubitIndex { index: usize, n_qubits: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported number of qubits {n_qubits}: {reason}")]
    UnsupportedQubitCount { n_qubits: usize, reason: &'static str },

    #[error("no singlet sector for an odd number of qubits ({0})")]
    NoSingletSector(usize),

    #[error("alpha and beta cannot both vanish")]
    ZeroParameters,

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("state is not dark (residual {0:.3e})")]
    NotDark(f64),

    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("integration failed at t = {t}: step size {step:.3e} underflowed")]
    IntegrationFailure { t: f64, step: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
