use std::fmt;
use std::path::Path;

use derev_core::Error;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MODEL: u8 = 3;
pub const EXIT_IO: u8 = 4;

/// An error message plus the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type Outcome<T> = std::result::Result<T, Failure>;

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {err}", path.display()) }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Config(_) | Error::Shape(_) | Error::SampleRate(_) | Error::TooShort(_) | Error::Empty(_) => {
                EXIT_CONFIG
            }
            Error::Model(_) | Error::Snapshot(_) => EXIT_MODEL,
            Error::Io(_) | Error::Wav(_) => EXIT_IO,
            Error::Json(_) => EXIT_CONFIG,
            Error::NonFinite(_)
            | Error::NegativePsd { .. }
            | Error::RankDeficient { .. }
            | Error::ZeroEnergy(_) => EXIT_RUNTIME,
        };
        Self { code, message: err.to_string() }
    }
}
