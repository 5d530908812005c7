//! Advisory lock guarding an output directory against concurrent writers.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const LOCK_NAME: &str = ".exblurf.lock";

pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    /// Creates `dir` if needed and takes the lock; errors if another run
    /// holds it (or died without cleanup — the message says which file to
    /// remove).
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_NAME);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutDirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!(
                        "output directory is locked by another run; remove {} if that run is gone",
                        path.display()
                    ),
                ),
            )),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_excludes_second_holder_and_releases_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutDirLock::acquire(dir.path()).unwrap();
        assert!(OutDirLock::acquire(dir.path()).is_err());
        drop(lock);
        let again = OutDirLock::acquire(dir.path()).unwrap();
        drop(again);
    }
}
