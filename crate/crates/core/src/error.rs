use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("division guard: 1 - alpha_bar[{t}] is numerically zero")]
    DivisionGuard { t: usize },
    #[error("sigma overflow: eta {eta} too large for step {t_now} -> {t_next}")]
    SigmaOverflow { t_now: usize, t_next: isize, eta: f64 },
    #[error("training diverged at step {step}: loss is {loss}")]
    TrainingDiverged { step: u64, loss: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidParameter(alloc::format!($($arg)*))
    };
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::Shape(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape_err;
