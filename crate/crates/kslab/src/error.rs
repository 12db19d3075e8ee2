//! Error type shared by all modules.

use std::fmt;

#[derive(Debug, Clone)]
pub enum Error {
    /// Domain description rejected (degenerate axes, non-convex polygon, ...).
    InvalidDomain(String),
    /// Grid resolution cannot represent the domain.
    GridTooCoarse(String),
    /// A field or parameter failed a precondition.
    InvalidInput(String),
    /// An iterative linear solve did not reach its tolerance.
    SolverDiverged {
        context: &'static str,
        residual: f64,
        iterations: usize,
    },
    /// Monotone iteration detected an ordering failure away from the boundary
    /// layer, or exhausted its iteration budget.
    BarrierInconsistency(String),
    /// Eigensolver did not converge.
    EigenDiverged { residual: f64, iterations: usize },
    /// Config file rejected; carries the offending key and line when known.
    Config {
        line: Option<usize>,
        key: String,
        message: String,
    },
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDomain(m) => write!(f, "invalid domain: {m}"),
            Error::GridTooCoarse(m) => write!(f, "grid too coarse: {m}"),
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::SolverDiverged {
                context,
                residual,
                iterations,
            } => write!(
                f,
                "{context}: linear solver stalled after {iterations} iterations \
                 (best residual {residual:.3e})"
            ),
            Error::BarrierInconsistency(m) => write!(f, "barrier inconsistency: {m}"),
            Error::EigenDiverged {
                residual,
                iterations,
            } => write!(
                f,
                "eigensolver did not converge after {iterations} operator applications \
                 (residual {residual:.3e})"
            ),
            Error::Config { line, key, message } => match line {
                Some(n) => write!(f, "config error at line {n}, key `{key}`: {message}"),
                None => write!(f, "config error, key `{key}`: {message}"),
            },
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
