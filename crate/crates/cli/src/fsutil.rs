use std::io::Write;
use std::path::Path;

use crate::error::{CliError, Result};

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| runtime(dir, e))?;
    tmp.write_all(bytes).map_err(|e| runtime(path, e))?;
    tmp.as_file().sync_all().map_err(|e| runtime(path, e))?;
    tmp.persist(path).map_err(|e| runtime(path, e.error))?;
    Ok(())
}

fn runtime(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("writing {}: {e}", path.display()))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_existing_content_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("file.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        let entries = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(entries, 1);
    }
}
