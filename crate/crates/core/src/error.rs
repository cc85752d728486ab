use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate space label {0}")]
    DuplicateLabel(String),
    #[error("invalid space label: {0}")]
    InvalidLabel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("space {0} is not a factor of this vector")]
    LabelAbsent(String),
    #[error("basis index {index} out of range for space {label} (dim {dim})")]
    IndexOutOfRange {
        label: String,
        index: usize,
        dim: usize,
    },
    #[error("operator is not hermitian (max |A - A^dagger| = {0:e})")]
    NotHermitian(f64),
    #[error("operator is not unitary (max |A^dagger A - I| = {0:e})")]
    NotUnitary(f64),
    #[error("Kraus operators are not complete (max |sum K^dagger K - I| = {0:e})")]
    IncompleteKraus(f64),
    #[error("basis is not orthonormal (max |<u_i|u_j> - delta_ij| = {0:e})")]
    NotOrthonormal(f64),
    #[error("invalid clock grid: {0}")]
    InvalidGrid(String),
    #[error("degenerate envelope: all weights vanish on the grid")]
    DegenerateEnvelope,
    #[error("frequency index {index} outside lattice [{min}, {max}]")]
    FrequencyOutOfRange { index: i64, min: i64, max: i64 },
    #[error("time {t} lies outside the clock window [{t_min}, {t_max}]")]
    TimeOutsideWindow { t: f64, t_min: f64, t_max: f64 },
    #[error("conditioning on null-probability time t = {t} (|phi| = {weight:e})")]
    NullProbabilityTime { t: f64, weight: f64 },
    #[error("conditioning on null-probability outcome (P = {0:e})")]
    NullProbabilityOutcome(f64),
    #[error("frequency conditioning requires a flat envelope")]
    UnsupportedEnvelope,
    #[error("dense constraint operator of dimension {0} exceeds the size guard")]
    SizeGuard(usize),
    #[error("invalid Hamiltonian: {0}")]
    InvalidHamiltonian(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("state is not normalized (norm = {0})")]
    NotNormalized(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors raised by a numerical guard during a computation, as
    /// opposed to malformed input.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::NullProbabilityTime { .. }
                | Error::NullProbabilityOutcome(_)
                | Error::NotUnitary(_)
                | Error::SizeGuard(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
