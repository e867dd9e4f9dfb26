//! Command-line pipeline for murmur-to-speech conversion.

pub mod config;
pub mod pipeline;
pub mod plot;

use m2s_core::Error;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Shape(_) | Error::Parse { .. } | Error::Format(_) => 1,
        Error::Io { .. } | Error::Audio { .. } => 2,
        Error::MissingDependency(_) => 3,
    }
}
