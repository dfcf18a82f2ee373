//! Error types shared across the solver/simulator pipeline.

use std::fmt;

/// Machine-readable failure category, mirrored into CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    NonSolvable,
    BlowUp,
    Io,
    Config,
    Dimension,
}

impl ErrorCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCategory::Validation => "validation",
            ErrorCategory::NonSolvable => "non-solvable",
            ErrorCategory::BlowUp => "blow-up",
            ErrorCategory::Io => "io",
            ErrorCategory::Config => "config",
            ErrorCategory::Dimension => "dimension",
        }
    }
}

#[derive(Debug)]
pub enum Error {
    /// Structurally malformed input: inconsistent matrix dimensions.
    Dimension { context: String },
    /// One or more model assumptions are violated (see the report for details).
    Validation { violations: Vec<String> },
    /// A Riccati layer has no usable solution (certificate failed or escape detected).
    NonSolvable { equation: String, detail: String },
    /// Non-finite values appeared during integration or simulation.
    BlowUp { context: String, time: f64 },
    /// Bad run parameters (path counts, agent counts, grid mismatches, ...).
    Invalid { context: String },
    /// Config file could not be parsed or is semantically unusable.
    Config { detail: String },
    Io(std::io::Error),
}

impl Error {
    pub fn dimension(context: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
        }
    }

    pub fn invalid(context: impl Into<String>) -> Self {
        Error::Invalid {
            context: context.into(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config {
            detail: detail.into(),
        }
    }

    pub fn non_solvable(equation: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NonSolvable {
            equation: equation.into(),
            detail: detail.into(),
        }
    }

    pub fn blow_up(context: impl Into<String>, time: f64) -> Self {
        Error::BlowUp {
            context: context.into(),
            time,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dimension { .. } => ErrorCategory::Dimension,
            Error::Validation { .. } => ErrorCategory::Validation,
            Error::NonSolvable { .. } => ErrorCategory::NonSolvable,
            Error::BlowUp { .. } => ErrorCategory::BlowUp,
            Error::Invalid { .. } => ErrorCategory::Validation,
            Error::Config { .. } => ErrorCategory::Config,
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { context } => write!(f, "dimension mismatch: {context}"),
            Error::Validation { violations } => {
                write!(f, "model assumptions violated ({} findings):", violations.len())?;
                for v in violations {
                    write!(f, "\n  - {v}")?;
                }
                Ok(())
            }
            Error::NonSolvable { equation, detail } => {
                write!(f, "{equation} is not solvable: {detail}")
            }
            Error::BlowUp { context, time } => {
                write!(f, "non-finite values in {context} at t = {time}")
            }
            Error::Invalid { context } => write!(f, "invalid input: {context}"),
            Error::Config { detail } => write!(f, "config error: {detail}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
