//! File access used by every reader and writer in the crate. Accesses can be
//! recorded so a caller can audit exactly which paths a phase touched.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
    List,
}

static TRACE: Mutex<Option<Vec<(Access, PathBuf)>>> = Mutex::new(None);

/// Starts recording file accesses, discarding anything recorded before.
pub fn start_trace() {
    *TRACE.lock().unwrap() = Some(Vec::new());
}

/// Stops recording and returns the accesses in order.
pub fn take_trace() -> Vec<(Access, PathBuf)> {
    TRACE.lock().unwrap().take().unwrap_or_default()
}

fn record(access: Access, path: &Path) {
    if let Some(log) = TRACE.lock().unwrap().as_mut() {
        log.push((access, path.to_path_buf()));
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    record(Access::Read, path);
    std::fs::read(path).map_err(io_err(path))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    record(Access::Read, path);
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    record(Access::Write, path);
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    record(Access::Write, path);
    std::fs::create_dir_all(path).map_err(io_err(path))
}

/// Sorted entries of a directory.
pub fn list_dir(path: &Path) -> Result<Vec<PathBuf>> {
    record(Access::List, path);
    let mut entries = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err(path))?;
    entries.sort();
    Ok(entries)
}
