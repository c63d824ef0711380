use std::fmt;

/// Errors raised anywhere in the pricing, simulation and training pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input fell outside the domain of an operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A computation produced NaN or an infinity.
    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    /// Heston parameters failed validation (Feller or bounds).
    #[error("invalid Heston parameters: {0}")]
    Heston(#[from] HestonViolation),

    /// Characteristic-function quadrature produced an implausible probability.
    #[error("integration failure: {0}")]
    Integration(String),

    /// A hedge sample could not be used.
    #[error("sample rejected: {0}")]
    Rejected(String),

    /// Configuration values are inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint field `{field}`: {detail}")]
    Checkpoint { field: &'static str, detail: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    /// Training stopped on a non-finite loss or an exploding gradient.
    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    /// Reports or grids that should line up do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }
}

/// A failed Heston parameter check, carrying both sides of the violated inequality.
#[derive(Debug, Clone, PartialEq)]
pub enum HestonViolation {
    Feller { lhs: f64, rhs: f64 },
    Correlation(f64),
    NonPositive { name: &'static str, value: f64 },
    NonFinite { name: &'static str },
}

impl fmt::Display for HestonViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HestonViolation::Feller { lhs, rhs } => {
                write!(f, "Feller: {} ≤ {}", fmt_num(*lhs), fmt_num(*rhs))
            }
            HestonViolation::Correlation(rho) => write!(f, "correlation |rho| = {} > 1", rho.abs()),
            HestonViolation::NonPositive { name, value } => {
                write!(f, "{name} must be positive, got {value}")
            }
            HestonViolation::NonFinite { name } => write!(f, "{name} is not finite"),
        }
    }
}

impl std::error::Error for HestonViolation {}

/// Shortest decimal that survives a round trip after trimming float noise
/// (2·1.25·0.0225 prints as 0.05625, not 0.056249999999999994).
fn fmt_num(x: f64) -> String {
    let s = format!("{:.12}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}
