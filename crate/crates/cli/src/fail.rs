//! Exit-status policy: one code per failure class, stable across releases.

use spinecarve_core::Error;

pub const EXIT_IO: i32 = 2;
pub const EXIT_DIMS: i32 = 3;
pub const EXIT_NONCONVERGED: i32 = 4;
pub const EXIT_SPEC: i32 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DimensionMismatch(_) => EXIT_DIMS,
            Error::InvalidSpec(_) | Error::NonPositiveBandwidth(_) => EXIT_SPEC,
            _ => EXIT_IO,
        };
        fail(code, e.to_string())
    }
}
