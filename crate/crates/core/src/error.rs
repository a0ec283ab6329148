use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    Dimension {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A focus map was requested before the first token arrived.
    EmptyPrefix,
    /// Invalid configuration value.
    Config(String),
    /// A NaN or infinity showed up where it must not.
    NonFinite(String),
    /// Scene generation could not place every object.
    Generation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, expected, found } => write!(
                f,
                "dimension mismatch in {op}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::EmptyPrefix => f.write_str("empty prefix: no token has been revealed yet"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Generation(msg) => write!(f, "scene generation failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
