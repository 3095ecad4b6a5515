use std::fmt;

use serde::{Deserialize, Serialize};

/// Stable, wire-visible error classification shared by every module.
///
/// The gateway maps each code to one HTTP status and the CLI prints the code
/// on stderr; the mapping is 1:1 with the module error variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    MalformedRequest,
    MalformedDid,
    MalformedScript,
    InvalidToken,
    Unauthorized,
    NotController,
    NotFound,
    UnknownAccount,
    UnknownVersion,
    UnknownRole,
    UnknownActor,
    WrongState,
    Deactivated,
    Conflict,
    PayloadTooLarge,
    CompartmentLimitExceeded,
    InsufficientBalance,
    IntegrityViolation,
    DegenerateInput,
    ConfigInvalid,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::MalformedRequest => "MalformedRequest",
            ErrorCode::MalformedDid => "MalformedDid",
            ErrorCode::MalformedScript => "MalformedScript",
            ErrorCode::InvalidToken => "InvalidToken",
            ErrorCode::Unauthorized => "Unauthorized",
            ErrorCode::NotController => "NotController",
            ErrorCode::NotFound => "NotFound",
            ErrorCode::UnknownAccount => "UnknownAccount",
            ErrorCode::UnknownVersion => "UnknownVersion",
            ErrorCode::UnknownRole => "UnknownRole",
            ErrorCode::UnknownActor => "UnknownActor",
            ErrorCode::WrongState => "WrongState",
            ErrorCode::Deactivated => "Deactivated",
            ErrorCode::Conflict => "Conflict",
            ErrorCode::PayloadTooLarge => "PayloadTooLarge",
            ErrorCode::CompartmentLimitExceeded => "CompartmentLimitExceeded",
            ErrorCode::InsufficientBalance => "InsufficientBalance",
            ErrorCode::IntegrityViolation => "IntegrityViolation",
            ErrorCode::DegenerateInput => "DegenerateInput",
            ErrorCode::ConfigInvalid => "ConfigInvalid",
            ErrorCode::Internal => "Internal",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Implemented by every module error.
pub trait Classify {
    fn code(&self) -> ErrorCode;
}
