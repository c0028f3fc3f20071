use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("integer overflow evaluating {0}")]
    Overflow(&'static str),
    #[error("bad magic: expected \"RPTN\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    BadVersion(u8),
    #[error("truncated tensor file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("dtype mismatch: file holds code {found}, expected {expected}")]
    DtypeMismatch { expected: u8, found: u8 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
