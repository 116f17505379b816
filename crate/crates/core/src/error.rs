use alloc::string::String;
use core::fmt;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Array or network shapes do not line up.
    Shape {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// Input width does not match a network layer.
    LayerDimension {
        layer: usize,
        expected: usize,
        found: usize,
    },
    /// A tape was replayed after its backward pass already ran.
    TapeConsumed,
    /// A non-finite value reached an optimizer or loss.
    Divergence(String),
    /// Dimension argument out of range (e.g. d = 0).
    InvalidDimension(usize),
    /// Numeric argument outside the supported domain.
    Range(String),
    /// Vector expected on the unit sphere was not.
    NotUnit(f64),
    /// Fewer than two negatives for a contrastive estimate.
    DegenerateNegatives(usize),
    /// Action contains NaN.
    InvalidAction,
    /// Inconsistent configuration or mode selection.
    Config(String),
    /// Not enough samples for a statistic.
    InsufficientData { needed: usize, found: usize },
    /// Persisted state could not be restored.
    State(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                context,
                expected,
                found,
            } => write!(
                f,
                "shape mismatch in {context}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::LayerDimension {
                layer,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch at layer {layer}: expected input width {expected}, found {found}"
            ),
            Error::TapeConsumed => f.write_str("tape already consumed by a backward pass"),
            Error::Divergence(what) => write!(f, "training diverged: {what}"),
            Error::InvalidDimension(d) => write!(f, "invalid dimension {d}"),
            Error::Range(what) => write!(f, "argument out of supported range: {what}"),
            Error::NotUnit(norm) => write!(f, "expected a unit vector, norm is {norm}"),
            Error::DegenerateNegatives(m) => {
                write!(f, "need at least 2 negative samples, got {m}")
            }
            Error::InvalidAction => f.write_str("action contains NaN"),
            Error::Config(what) => write!(f, "configuration error: {what}"),
            Error::InsufficientData { needed, found } => {
                write!(f, "insufficient data: need {needed} samples, found {found}")
            }
            Error::State(what) => write!(f, "cannot restore state: {what}"),
        }
    }
}

impl core::error::Error for Error {}
