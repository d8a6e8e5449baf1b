//! Corpus ingestion and fixed-size word chunking.
//!
//! A corpus is described by a manifest: a line-delimited JSON file where each
//! non-blank line that does not start with `#` is one entry:
//!
//! ```text
//! {"doc_id": "thesis-017", "path": "texts/thesis-017.txt", "title": "Optional title"}
//! {"doc_id": "synthetic-3", "path": "synthetic/3.txt", "synthetic": true}
//! ```
//!
//! Relative paths resolve against the directory holding the manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_CHUNK_WORDS: usize = 2000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    ManifestIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} line {line}: {message}")]
    ManifestSyntax {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("manifest {path} lists doc_id `{doc_id}` more than once")]
    DuplicateDocId { path: PathBuf, doc_id: String },
}

/// A per-document failure. Other documents in the manifest still load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentError {
    pub doc_id: String,
    pub path: PathBuf,
    pub kind: DocumentErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentErrorKind {
    Missing,
    Unreadable,
    NotUtf8,
    Empty,
}

impl fmt::Display for DocumentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}): {}",
            self.doc_id,
            self.path.display(),
            self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub synthetic: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    /// Set for model-written baseline documents.
    #[serde(default)]
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: u32,
    pub word_count: usize,
    pub text: String,
}

#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub errors: Vec<DocumentError>,
}

/// NFC normalization plus `\r\n` / `\r` to `\n`.
pub fn normalize_text(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    unified.nfc().collect()
}

pub fn read_manifest(manifest_path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let raw = std::fs::read_to_string(manifest_path).map_err(|source| CorpusError::ManifestIo {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(trimmed).map_err(|e| CorpusError::ManifestSyntax {
                path: manifest_path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if entry.doc_id.trim().is_empty() {
            return Err(CorpusError::ManifestSyntax {
                path: manifest_path.to_path_buf(),
                line: idx + 1,
                message: "empty doc_id".into(),
            });
        }
        if !seen.insert(entry.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId {
                path: manifest_path.to_path_buf(),
                doc_id: entry.doc_id,
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry).expect("manifest entry serializes"));
        out.push('\n');
    }
    out
}

/// Loads every document listed in the manifest. Manifest-level problems are
/// fatal; a missing, unreadable or blank document is recorded in
/// [`LoadedCorpus::errors`] and the rest still load.
pub fn load_corpus(manifest_path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut corpus = LoadedCorpus::default();
    for entry in entries {
        let resolved = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        match load_document(&entry, &resolved) {
            Ok(doc) => corpus.documents.push(doc),
            Err(err) => {
                tracing::warn!(doc_id = %err.doc_id, path = %err.path.display(), "{}", err.message);
                corpus.errors.push(err);
            }
        }
    }
    Ok(corpus)
}

fn load_document(entry: &ManifestEntry, resolved: &Path) -> Result<Document, DocumentError> {
    let fail = |kind, message: String| DocumentError {
        doc_id: entry.doc_id.clone(),
        path: resolved.to_path_buf(),
        kind,
        message,
    };
    let bytes = std::fs::read(resolved).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            fail(
                DocumentErrorKind::Missing,
                format!("missing file {}", resolved.display()),
            )
        } else {
            fail(
                DocumentErrorKind::Unreadable,
                format!("cannot read {}: {e}", resolved.display()),
            )
        }
    })?;
    let raw = String::from_utf8(bytes)
        .map_err(|e| fail(DocumentErrorKind::NotUtf8, format!("not valid UTF-8: {e}")))?;
    let text = normalize_text(&raw);
    if text.split_whitespace().next().is_none() {
        return Err(fail(DocumentErrorKind::Empty, "empty document".into()));
    }
    Ok(Document {
        doc_id: entry.doc_id.clone(),
        source_path: entry.path.to_string_lossy().into_owned(),
        title: entry.title.clone(),
        text,
        synthetic: entry.synthetic,
    })
}

pub fn chunk_id(doc_id: &str, ordinal: u32) -> String {
    format!("{doc_id}#{ordinal:04}")
}

/// Byte ranges of maximal non-whitespace runs.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits a document into consecutive slices of `chunk_words` words. The
/// final chunk keeps the remainder. Chunk text runs from the first to the
/// last word of the slice with the original spacing in between.
///
/// Panics if `chunk_words` is zero.
pub fn chunk_document(doc: &Document, chunk_words: usize) -> Vec<Chunk> {
    assert!(chunk_words > 0, "chunk_words must be positive");
    word_spans(&doc.text)
        .chunks(chunk_words)
        .enumerate()
        .map(|(ordinal, words)| {
            let ordinal = ordinal as u32;
            let start = words[0].0;
            let end = words[words.len() - 1].1;
            Chunk {
                chunk_id: chunk_id(&doc.doc_id, ordinal),
                doc_id: doc.doc_id.clone(),
                ordinal,
                word_count: words.len(),
                text: doc.text[start..end].to_string(),
            }
        })
        .collect()
}
