//! Line-delimited JSON artifacts and atomic file writes.
//!
//! Every artifact starts with a header line `{"schema":"<name>/v<n>"}`
//! followed by one record per line.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Decode {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: expected schema `{expected}`, found `{found}`")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, ArtifactError> {
    let bytes = std::fs::read(path).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    let io = |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn encode_jsonl<T: Serialize>(schema: &str, records: &[T]) -> Vec<u8> {
    let mut out = serde_json::to_vec(&Header {
        schema: schema.to_string(),
    })
    .expect("header serializes");
    out.push(b'\n');
    for record in records {
        serde_json::to_writer(&mut out, record).expect("record serializes");
        out.push(b'\n');
    }
    out
}

/// Writes the artifact atomically and returns the SHA-256 of its bytes.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    schema: &str,
    records: &[T],
) -> Result<String, ArtifactError> {
    let bytes = encode_jsonl(schema, records);
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>, ArtifactError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = raw.lines().enumerate();
    let decode = |line: usize, message: String| ArtifactError::Decode {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header: Header = match lines.next() {
        Some((_, l)) => serde_json::from_str(l).map_err(|e| decode(1, e.to_string()))?,
        None => return Err(decode(1, "missing schema header".into())),
    };
    if header.schema != schema {
        return Err(ArtifactError::Schema {
            path: path.to_path_buf(),
            expected: schema.to_string(),
            found: header.schema,
        });
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| decode(i + 1, e.to_string())))
        .collect()
}
