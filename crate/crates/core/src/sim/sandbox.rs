//! Maps device paths onto a host directory without letting them escape it.

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("invalid path {0:?}")]
    Invalid(String),
    #[error("path {0:?} escapes the SD root")]
    Escape(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct SdRoot {
    root: PathBuf,
}

impl SdRoot {
    pub fn new(root: &Path) -> io::Result<Self> {
        let root = root.canonicalize()?;
        if !root.is_dir() {
            return Err(io::Error::new(io::ErrorKind::NotADirectory, format!("{} is not a directory", root.display())));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Host path for an absolute device path. Rejects `.`/`..` segments,
    /// backslashes and NUL, and (for paths that exist) symlinks leading
    /// outside the root.
    pub fn resolve(&self, device_path: &str) -> Result<PathBuf, SandboxError> {
        let invalid = || SandboxError::Invalid(device_path.to_string());
        let rel = device_path.strip_prefix('/').ok_or_else(invalid)?;
        if device_path.contains(['\\', '\0', '\n', '\r']) {
            return Err(invalid());
        }
        let mut host = self.root.clone();
        for seg in rel.split('/').filter(|s| !s.is_empty()) {
            if seg == "." || seg == ".." {
                return Err(SandboxError::Escape(device_path.to_string()));
            }
            let mut comps = Path::new(seg).components();
            match (comps.next(), comps.next()) {
                (Some(Component::Normal(_)), None) => host.push(seg),
                _ => return Err(invalid()),
            }
        }
        self.check_inside(&host, device_path)?;
        Ok(host)
    }

    /// The deepest existing ancestor of `host` must canonicalize inside the
    /// root.
    fn check_inside(&self, host: &Path, device_path: &str) -> Result<(), SandboxError> {
        let mut probe = host;
        loop {
            match fs::symlink_metadata(probe) {
                Ok(_) => break,
                Err(_) => match probe.parent() {
                    Some(p) => probe = p,
                    None => return Ok(()),
                },
            }
        }
        let real = probe.canonicalize()?;
        if real.starts_with(&self.root) {
            Ok(())
        } else {
            Err(SandboxError::Escape(device_path.to_string()))
        }
    }
}
