use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor shapes that must agree do not.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A model or backend could not be constructed.
    #[error("initialization failed: {0}")]
    Init(String),
    /// A loss component became NaN or infinite during training.
    #[error("non-finite loss component `{component}` = {value}")]
    NonFinite { component: &'static str, value: f64 },
    /// A covariance product had an eigenvalue too negative to be roundoff.
    #[error("matrix square root failed: eigenvalue {0} is negative beyond tolerance")]
    NegativeEigenvalue(f64),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}

macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(alloc::format!($($arg)*)) };
}

pub(crate) use {arg_err, shape_err};
