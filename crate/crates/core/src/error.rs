use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("construction failure: {0}")]
    ConstructionFailure(String),
    #[error("convergence not guaranteed: {0}")]
    NotTight(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! numeric {
    ($($arg:tt)*) => {
        $crate::error::Error::NumericFailure(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use numeric;
