use std::fmt;

use lgt_core::Error;

pub const CHECK_FAILED: i32 = 1;
pub const CONFIG_ERROR: i32 = 2;
pub const NUMERICAL_ABORT: i32 = 3;
pub const DATA_ERROR: i32 = 4;

/// A message with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG_ERROR, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA_ERROR, message)
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self::new(CHECK_FAILED, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Argument(_) | Error::ExitsMap(_) | Error::ClassificationUndefined(_) => CONFIG_ERROR,
            Error::NonFinite { .. } => NUMERICAL_ABORT,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::TargetUnobserved(_)
            | Error::UnknownConnectionType(_)
            | Error::EmptyHistory(_)
            | Error::NoAgents
            | Error::NoLanes
            | Error::NoKeys
            | Error::MissingGroundTruth(_)
            | Error::Io { .. }
            | Error::Json { .. } => DATA_ERROR,
            Error::Tensor(lgt_autodiff::Error::Checkpoint { .. } | lgt_autodiff::Error::Io { .. }) => DATA_ERROR,
            Error::Tensor(_) => CHECK_FAILED,
        };
        Self::new(code, e.to_string())
    }
}

impl From<lgt_autodiff::Error> for Failure {
    fn from(e: lgt_autodiff::Error) -> Self {
        Error::from(e).into()
    }
}

/// IO on outputs the command itself writes.
pub fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}
