use std::fmt;
use std::path::{Path, PathBuf};

/// An input file named on the command line that cannot be read.
#[derive(Debug)]
pub struct InputError {
    pub path: PathBuf,
    pub reason: String,
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot read {}: {}", self.path.display(), self.reason)
    }
}

impl std::error::Error for InputError {}

pub fn read_input(path: &Path) -> Result<String, InputError> {
    std::fs::read_to_string(path).map_err(|e| InputError {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Fails when `path` does not exist; used before work starts.
pub fn require(path: &Path) -> Result<(), InputError> {
    if path.exists() {
        Ok(())
    } else {
        Err(InputError {
            path: path.to_path_buf(),
            reason: "no such file".into(),
        })
    }
}
