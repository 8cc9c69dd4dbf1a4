use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every fallible operation in the core reports one of these.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Softmax of a zero-length vector.
    EmptyLogits,
    /// A batch, dataset or checkpoint stream that must be nonempty was empty.
    Empty(&'static str),
    /// Two operands that must agree in length or shape did not.
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A split or protocol that requires at least one unseen class got none.
    NoUnseenClasses,
    /// Two parameter sets built from different architectures.
    SpecMismatch,
    /// Argument outside its documented domain.
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(what: &'static str, expected: usize, found: usize) -> Self {
        Error::ShapeMismatch {
            what,
            expected,
            found,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyLogits => f.write_str("empty logits"),
            Error::Empty(what) => write!(f, "empty {what}"),
            Error::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Error::NoUnseenClasses => f.write_str("no unseen classes"),
            Error::SpecMismatch => f.write_str("model specs differ"),
            Error::InvalidArgument(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
