use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Validation and precondition failures raised by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A table or vector has the wrong number of entries.
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A probability row or vector does not sum to one.
    NotNormalized { what: &'static str, index: usize, sum: f64 },
    /// An entry that must be strictly positive is not.
    NonPositive { what: &'static str, index: usize, value: f64 },
    /// An entry falls outside its admissible interval.
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// The noise penalty coefficient must be positive; with `lambda <= 0`
    /// the inner noise minimization is unbounded below.
    NonPositiveLambda(f64),
    /// Preference pairs need at least two responses.
    TooFewResponses(usize),
    /// A log ratio was requested at a zero-probability entry.
    ZeroProbability { prompt: usize, response: usize },
    /// A combinatorial oracle was asked to enumerate too large a space.
    TooLarge { what: &'static str, size: usize, cap: usize },
    Empty(&'static str),
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected} entries, found {found}"),
            Error::NotNormalized { what, index, sum } => {
                write!(f, "{what}[{index}] sums to {sum}, expected 1")
            }
            Error::NonPositive { what, index, value } => {
                write!(f, "{what}[{index}] = {value} must be > 0")
            }
            Error::OutOfRange { what, value, lo, hi } => {
                write!(f, "{what} = {value} outside [{lo}, {hi}]")
            }
            Error::NonPositiveLambda(l) => write!(
                f,
                "lambda = {l} must be > 0: the noise minimization is unbounded for lambda <= 0"
            ),
            Error::TooFewResponses(n) => {
                write!(f, "need at least 2 responses per prompt, got {n}")
            }
            Error::ZeroProbability { prompt, response } => {
                write!(f, "policy has zero probability at ({prompt}, {response})")
            }
            Error::TooLarge { what, size, cap } => write!(f, "{what} = {size} exceeds cap {cap}"),
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
