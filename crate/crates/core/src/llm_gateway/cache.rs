//! On-disk response cache: one JSON file per request hash.
//!
//! ```text
//! <dir>/completions/<request-hash>.json   {request, response}
//! <dir>/embeddings/<sha256(model \0 text)>.json   {model_id, text, values}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, ProviderReply, TokenUsage};
use crate::artifact::{sha256_hex, write_atomic, ArtifactError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedCompletion {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub recorded_at: String,
}

#[derive(Serialize, Deserialize)]
struct CompletionEntry {
    request_hash: String,
    request: CompletionRequest,
    response: CachedCompletion,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingEntry {
    model_id: String,
    text: String,
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: PathBuf) -> Result<Self, ArtifactError> {
        for sub in ["completions", "embeddings"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir)
                .map_err(|source| ArtifactError::Io { path: dir, source })?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn completion_path(&self, hash: &str) -> PathBuf {
        self.root.join("completions").join(format!("{hash}.json"))
    }

    fn embedding_path(&self, model_id: &str, text: &str) -> PathBuf {
        let key = sha256_hex(format!("{model_id}\0{text}").as_bytes());
        self.root.join("embeddings").join(format!("{key}.json"))
    }

    pub fn get_completion(&self, hash: &str) -> Result<Option<CachedCompletion>, ArtifactError> {
        let path = self.completion_path(hash);
        Ok(read_entry::<CompletionEntry>(&path)?.map(|e| e.response))
    }

    pub fn put_completion(
        &self,
        hash: &str,
        request: &CompletionRequest,
        reply: &ProviderReply,
    ) -> Result<(), ArtifactError> {
        let entry = CompletionEntry {
            request_hash: hash.to_string(),
            request: request.clone(),
            response: CachedCompletion {
                text: reply.text.clone(),
                usage: reply.usage,
                recorded_at: chrono::Utc::now().to_rfc3339(),
            },
        };
        let bytes = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        write_atomic(&self.completion_path(hash), &bytes)
    }

    pub fn get_embedding(
        &self,
        model_id: &str,
        text: &str,
    ) -> Result<Option<Vec<f64>>, ArtifactError> {
        let path = self.embedding_path(model_id, text);
        Ok(read_entry::<EmbeddingEntry>(&path)?
            .filter(|e| e.model_id == model_id && e.text == text)
            .map(|e| e.values))
    }

    pub fn put_embedding(
        &self,
        model_id: &str,
        text: &str,
        values: &[f64],
    ) -> Result<(), ArtifactError> {
        let entry = EmbeddingEntry {
            model_id: model_id.to_string(),
            text: text.to_string(),
            values: values.to_vec(),
        };
        let bytes = serde_json::to_vec(&entry).expect("cache entry serializes");
        write_atomic(&self.embedding_path(model_id, text), &bytes)
    }
}

fn read_entry<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, ArtifactError> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| ArtifactError::Decode {
                path: path.to_path_buf(),
                line: 1,
                message: e.to_string(),
            }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(ArtifactError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}
