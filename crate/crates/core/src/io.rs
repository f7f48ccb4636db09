//! File plumbing shared by the writers: content hashes and atomic writes.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a value's JSON serialization. Field order is the struct order,
/// so the hash is stable for a given type layout.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize to JSON");
    sha256_hex(&json)
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Iterates the data rows of a simple comma-separated file, skipping `#`
/// comments and blank lines. The first non-comment line must equal `header`.
pub(crate) fn csv_rows<'a>(
    src: &'a str,
    source_name: &'a str,
    header: &'a str,
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a> {
    let mut lines = src
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == header => {}
        Some((n, l)) => {
            return Err(Error::Parse {
                source_name: source_name.to_owned(),
                location: format!("line {n}"),
                message: format!("expected header `{header}`, found `{l}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                source_name: source_name.to_owned(),
                location: "line 1".to_owned(),
                message: format!("missing header `{header}`"),
            })
        }
    }
    Ok(lines.map(|(n, l)| (n, l.split(',').map(str::trim).collect())))
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    field: Option<&&str>,
    source_name: &str,
    line: usize,
    column: &str,
) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Parse {
        source_name: source_name.to_owned(),
        location: format!("line {line}"),
        message: format!("missing column `{column}`"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        source_name: source_name.to_owned(),
        location: format!("line {line}"),
        message: format!("cannot parse `{raw}` as {column}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
