//! Synthetic lower-bound corpus: the model writes five subtopics per topic
//! and a short chapter per subtopic. Since everything in it comes from the
//! model itself, its IP marks the floor a real collection should beat.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::artifact::{write_atomic, ArtifactError};
use crate::corpus::{normalize_text, render_manifest, Document, ManifestEntry};
use crate::llm_gateway::mock::stable_hash;
use crate::llm_gateway::{CompletionRequest, Gateway, GatewayError};
use crate::prompts::PromptSet;

pub const SUBTOPICS_PER_TOPIC: usize = 5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("expected {SUBTOPICS_PER_TOPIC} subtopics for `{topic}`, parsed {found}")]
    SubtopicParse {
        topic: String,
        found: usize,
        raw: String,
    },
    #[error("empty chapter for `{title}` / `{subtopic}`")]
    EmptyChapter { title: String, subtopic: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot create {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Write(#[from] ArtifactError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTopic {
    pub topic: String,
    pub subtopics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub model_id: String,
    pub temperature: Option<f64>,
    pub subtopic_max_tokens: u32,
    pub chapter_max_tokens: u32,
}

impl SynthSettings {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: None,
            subtopic_max_tokens: 256,
            chapter_max_tokens: 1200,
        }
    }

    fn request(&self, prompt: String, max_tokens: u32, tag: &str) -> CompletionRequest {
        CompletionRequest {
            model_id: self.model_id.clone(),
            prompt,
            temperature: self.temperature,
            max_tokens,
            request_tag: tag.into(),
        }
    }
}

fn item_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\s'*]*(\d+)\s*[\).:]\s*(.*?)[\s'*]*$").unwrap())
}

/// Reads a numbered `1) ... 5)` list. A trailing `<end>` is optional and
/// anything after it is ignored.
pub fn parse_subtopics(topic: &str, raw: &str) -> Result<SyntheticTopic, SynthError> {
    let body = raw.split("<end>").next().unwrap_or_default();
    let mut seen = HashSet::new();
    let mut subtopics = Vec::with_capacity(SUBTOPICS_PER_TOPIC);
    for line in body.lines() {
        let Some(c) = item_re().captures(line) else {
            continue;
        };
        let text = c[2].trim().to_string();
        if !text.is_empty() && seen.insert(text.to_lowercase()) {
            subtopics.push(text);
        }
        if subtopics.len() == SUBTOPICS_PER_TOPIC {
            break;
        }
    }
    if subtopics.len() < SUBTOPICS_PER_TOPIC {
        return Err(SynthError::SubtopicParse {
            topic: topic.into(),
            found: subtopics.len(),
            raw: raw.into(),
        });
    }
    Ok(SyntheticTopic {
        topic: topic.into(),
        subtopics,
    })
}

pub fn subtopics_prompt(prompts: &PromptSet, topic: &str) -> String {
    prompts.subtopics.render(&[("TOPIC_HERE", topic)])
}

pub fn chapter_prompt(prompts: &PromptSet, title: &str, subtopic: &str) -> String {
    prompts.chapter.render(&[
        ("MANUSCRIPT_TITLE_HERE", title),
        ("SUBTOPIC_HERE", subtopic),
    ])
}

pub fn generate_subtopics(
    topic: &str,
    prompts: &PromptSet,
    gateway: &Gateway,
    settings: &SynthSettings,
) -> Result<SyntheticTopic, SynthError> {
    if topic.trim().is_empty() {
        return Err(SynthError::EmptyInput("topic"));
    }
    let req = settings.request(
        subtopics_prompt(prompts, topic),
        settings.subtopic_max_tokens,
        "synth:subtopics",
    );
    parse_subtopics(topic, &gateway.complete(&req)?.text)
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for w in s
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push('-');
        }
        out.push_str(&w.to_ascii_lowercase());
        if out.len() >= 40 {
            break;
        }
    }
    out
}

/// Stable, filename-safe id for one chapter.
pub fn synthetic_doc_id(title: &str, subtopic: &str) -> String {
    let h = stable_hash(&[title, subtopic]) as u32;
    format!("synth-{}-{h:08x}", slug(title))
}

fn chapter_document(title: &str, subtopic: &str, raw: &str) -> Result<Document, SynthError> {
    let text = normalize_text(raw.trim());
    if text.trim().is_empty() {
        return Err(SynthError::EmptyChapter {
            title: title.into(),
            subtopic: subtopic.into(),
        });
    }
    Ok(Document {
        doc_id: synthetic_doc_id(title, subtopic),
        source_path: String::new(),
        title: Some(format!("{title}: {subtopic}")),
        text,
        synthetic: true,
    })
}

pub fn generate_chapter(
    title: &str,
    subtopic: &str,
    prompts: &PromptSet,
    gateway: &Gateway,
    settings: &SynthSettings,
) -> Result<Document, SynthError> {
    if title.trim().is_empty() {
        return Err(SynthError::EmptyInput("title"));
    }
    if subtopic.trim().is_empty() {
        return Err(SynthError::EmptyInput("subtopic"));
    }
    let req = settings.request(
        chapter_prompt(prompts, title, subtopic),
        settings.chapter_max_tokens,
        "synth:chapter",
    );
    chapter_document(title, subtopic, &gateway.complete(&req)?.text)
}

/// Subtopics then chapters for every topic, each stage fanned out through
/// the gateway. The topic doubles as the manuscript title.
pub fn generate_baseline(
    topics: &[String],
    prompts: &PromptSet,
    gateway: &Gateway,
    settings: &SynthSettings,
) -> Result<(Vec<SyntheticTopic>, Vec<Document>), SynthError> {
    if topics.iter().any(|t| t.trim().is_empty()) {
        return Err(SynthError::EmptyInput("topic"));
    }
    let reqs: Vec<_> = topics
        .iter()
        .map(|t| {
            settings.request(
                subtopics_prompt(prompts, t),
                settings.subtopic_max_tokens,
                "synth:subtopics",
            )
        })
        .collect();
    let mut parsed = Vec::with_capacity(topics.len());
    for (topic, reply) in topics.iter().zip(gateway.complete_all(&reqs)) {
        parsed.push(parse_subtopics(topic, &reply?.text)?);
    }

    let pairs: Vec<(&str, &str)> = parsed
        .iter()
        .flat_map(|t| {
            t.subtopics
                .iter()
                .map(move |s| (t.topic.as_str(), s.as_str()))
        })
        .collect();
    let reqs: Vec<_> = pairs
        .iter()
        .map(|(t, s)| {
            settings.request(
                chapter_prompt(prompts, t, s),
                settings.chapter_max_tokens,
                "synth:chapter",
            )
        })
        .collect();
    let mut docs = Vec::with_capacity(pairs.len());
    for ((t, s), reply) in pairs.iter().zip(gateway.complete_all(&reqs)) {
        docs.push(chapter_document(t, s, &reply?.text)?);
    }
    info!(
        topics = topics.len(),
        chapters = docs.len(),
        "synthetic baseline generated"
    );
    Ok((parsed, docs))
}

/// One topic per line; blank lines and `#` comments are skipped.
pub fn read_topics(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Writes `docs/<doc_id>.txt` plus a `manifest.jsonl` under `dir` and
/// returns the manifest path. The result loads like any other corpus.
pub fn write_corpus(docs: &[Document], dir: &Path) -> Result<PathBuf, SynthError> {
    let doc_dir = dir.join("docs");
    std::fs::create_dir_all(&doc_dir).map_err(|source| SynthError::Io {
        path: doc_dir.clone(),
        source,
    })?;
    let mut entries = Vec::with_capacity(docs.len());
    for d in docs {
        let rel = PathBuf::from("docs").join(format!("{}.txt", d.doc_id));
        write_atomic(&dir.join(&rel), d.text.as_bytes())?;
        entries.push(ManifestEntry {
            doc_id: d.doc_id.clone(),
            path: rel,
            title: d.title.clone(),
            synthetic: true,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_atomic(&manifest, render_manifest(&entries).as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, word_count};
    use crate::llm_gateway::mock::{FnProvider, SimulatedModel, StaticEmbedder};
    use std::sync::Arc;

    const WELL_FORMED: &str = "1) Ice dynamics\n2) Mass balance\n3) Remote sensing\n4) Glacial hydrology\n5) Climate feedbacks\n<end>";

    fn simulated() -> Gateway {
        Gateway::new(Arc::new(SimulatedModel), Arc::new(SimulatedModel), "emb")
            .with_max_concurrency(4)
    }

    #[test]
    fn numbered_list_parses_in_order() {
        let t = parse_subtopics("Glaciers", WELL_FORMED).unwrap();
        assert_eq!(t.subtopics[0], "Ice dynamics");
        assert_eq!(t.subtopics[4], "Climate feedbacks");
    }

    #[test]
    fn terminator_is_optional() {
        let raw = WELL_FORMED.replace("\n<end>", "");
        assert_eq!(parse_subtopics("g", &raw).unwrap().subtopics.len(), 5);
        let quoted = format!("'{WELL_FORMED}'\nextra 6) ignored");
        assert_eq!(
            parse_subtopics("g", &quoted).unwrap().subtopics[0],
            "Ice dynamics"
        );
    }

    #[test]
    fn three_items_is_an_error_with_raw() {
        let raw = "1) a\n2) b\n3) c\n<end>";
        match parse_subtopics("g", raw) {
            Err(SynthError::SubtopicParse {
                found, raw: kept, ..
            }) => {
                assert_eq!(found, 3);
                assert_eq!(kept, raw);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_subtopics("g", "1) a\n2) a\n3) b\n4) c\n5) d").is_err());
    }

    #[test]
    fn chapter_document_is_synthetic() {
        let fixed: String = vec!["word"; 600].join(" ");
        let g = Gateway::new(
            Arc::new(FnProvider::new(move |_: &CompletionRequest| {
                Ok(fixed.clone().into())
            })),
            Arc::new(StaticEmbedder::default()),
            "emb",
        );
        let doc = generate_chapter(
            "Glaciers",
            "Ice dynamics",
            &PromptSet::builtin(),
            &g,
            &SynthSettings::new("m"),
        )
        .unwrap();
        assert!(doc.synthetic);
        assert_eq!(word_count(&doc.text), 600);

        let empty = Gateway::new(
            Arc::new(FnProvider::new(|_: &CompletionRequest| {
                Ok("   ".to_string().into())
            })),
            Arc::new(StaticEmbedder::default()),
            "emb",
        );
        // The gateway itself rejects blank bodies as content errors.
        assert!(generate_chapter(
            "t",
            "s",
            &PromptSet::builtin(),
            &empty,
            &SynthSettings::new("m")
        )
        .is_err());
        assert!(chapter_document("t", "s", "  \n").is_err());
        assert!(matches!(
            generate_chapter(
                "",
                "s",
                &PromptSet::builtin(),
                &empty,
                &SynthSettings::new("m")
            ),
            Err(SynthError::EmptyInput("title"))
        ));
    }

    #[test]
    fn baseline_round_trips_through_corpus() {
        let topics = vec!["Glaciers".to_string(), "Venetian glassmaking".to_string()];
        let (parsed, docs) = generate_baseline(
            &topics,
            &PromptSet::builtin(),
            &simulated(),
            &SynthSettings::new("m"),
        )
        .unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(docs.len(), 10);
        let ids: HashSet<_> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids.len(), 10);

        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&docs, dir.path()).unwrap();
        let loaded = load_corpus(&manifest).unwrap();
        assert!(loaded.errors.is_empty());
        assert_eq!(loaded.documents.len(), 10);
        assert!(loaded.documents.iter().all(|d| d.synthetic));
        assert_eq!(loaded.documents[0].text, docs[0].text);
    }
}
