use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("coordinate {coord} out of range for mode {mode} with extent {extent}")]
    IndexOutOfRange { mode: usize, coord: u64, extent: usize },
    #[error("size overflow: {0}")]
    Overflow(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("tensor has no nonzeros")]
    Empty,
    #[error("expected an order-3 tensor, got order {0}")]
    Order(usize),
    #[error("operation mismatch: F-COO built for {built}, kernel wants {wanted}")]
    OpMismatch { built: &'static str, wanted: &'static str },
    #[error("flag mismatch: {0}")]
    FlagMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("tensor norm is zero")]
    ZeroNorm,
}
