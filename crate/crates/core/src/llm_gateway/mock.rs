//! Offline providers.
//!
//! * [`ScriptedProvider`] replays responses keyed by request hash (or by a
//!   prompt substring) from a replay file, falling back to another provider.
//! * [`SimulatedModel`] is a deterministic stand-in that understands the
//!   built-in prompt templates well enough to drive a full pipeline run.
//! * [`FnProvider`], [`StaticEmbedder`] and [`HashingEmbedder`] are small
//!   building blocks for tests.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    CompletionProvider, CompletionRequest, EmbeddingProvider, GatewayError, ProviderError,
    ProviderReply,
};
use crate::mcq::{render_mcq, Letter, Mcq};
use crate::quality_filter::tokenize;

pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub struct FnProvider<F>(F);

impl<F> FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<ProviderReply, ProviderError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> CompletionProvider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<ProviderReply, ProviderError> + Send + Sync,
{
    fn complete(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        (self.0)(req)
    }
}

/// Fixed text-to-vector table; unknown texts go to [`HashingEmbedder`].
#[derive(Debug, Clone, Default)]
pub struct StaticEmbedder {
    table: HashMap<String, Vec<f64>>,
}

impl StaticEmbedder {
    pub fn with(mut self, text: &str, values: Vec<f64>) -> Self {
        self.table.insert(text.to_string(), values);
        self
    }
}

impl EmbeddingProvider for StaticEmbedder {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, ProviderError> {
        let dim = self
            .table
            .values()
            .next()
            .map_or(HashingEmbedder::DEFAULT_DIM, Vec::len);
        Ok(texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| HashingEmbedder { dim }.vector(model_id, t))
            })
            .collect())
    }
}

/// Signed feature hashing of word tokens. Texts sharing words get high
/// cosine; a text without word tokens maps to the zero vector.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl HashingEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn vector(&self, model_id: &str, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let h = stable_hash(&[model_id, &tok]);
            let bucket = (h % self.dim as u64) as usize;
            v[bucket] += if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        }
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dim: Self::DEFAULT_DIM,
        }
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector(model_id, t)).collect())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayFile {
    #[serde(default)]
    completions: Vec<ReplayCompletion>,
    #[serde(default)]
    embeddings: Vec<ReplayEmbedding>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayCompletion {
    #[serde(default)]
    request_hash: Option<String>,
    #[serde(default)]
    prompt_contains: Option<String>,
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayEmbedding {
    text: String,
    values: Vec<f64>,
}

/// Replays scripted responses.
///
/// Replay file (JSON):
///
/// ```json
/// {
///   "completions": [
///     {"request_hash": "<sha256 of the canonical request>", "text": "..."},
///     {"prompt_contains": "substring", "text": "..."}
///   ],
///   "embeddings": [{"text": "...", "values": [0.1, 0.2]}]
/// }
/// ```
///
/// Hash matches win over substring rules; rules are tried in file order.
#[derive(Default, Clone)]
pub struct ScriptedProvider {
    by_hash: HashMap<String, String>,
    by_substring: Vec<(String, String)>,
    embeddings: HashMap<String, Vec<f64>>,
    fallback_completion: Option<Arc<dyn CompletionProvider>>,
    fallback_embedding: Option<Arc<dyn EmbeddingProvider>>,
}

impl ScriptedProvider {
    pub fn from_replay_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("replay file {}: {e}", path.display())))?;
        let file: ReplayFile = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::Config(format!("replay file {}: {e}", path.display())))?;
        let mut p = Self::default();
        for c in file.completions {
            match (c.request_hash, c.prompt_contains) {
                (Some(h), _) => {
                    p.by_hash.insert(h, c.text);
                }
                (None, Some(s)) => p.by_substring.push((s, c.text)),
                (None, None) => {
                    return Err(GatewayError::Config(format!(
                        "replay file {}: completion needs request_hash or prompt_contains",
                        path.display()
                    )))
                }
            }
        }
        for e in file.embeddings {
            p.embeddings.insert(e.text, e.values);
        }
        Ok(p)
    }

    pub fn with_response(
        mut self,
        request_hash: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        self.by_hash.insert(request_hash.into(), text.into());
        self
    }

    pub fn with_rule(
        mut self,
        prompt_contains: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        self.by_substring
            .push((prompt_contains.into(), text.into()));
        self
    }

    pub fn with_fallback<P>(mut self, p: P) -> Self
    where
        P: CompletionProvider + EmbeddingProvider + Clone + 'static,
    {
        self.fallback_completion = Some(Arc::new(p.clone()));
        self.fallback_embedding = Some(Arc::new(p));
        self
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        if let Some(text) = self.by_hash.get(&req.request_hash()) {
            return Ok(text.clone().into());
        }
        if let Some((_, text)) = self
            .by_substring
            .iter()
            .find(|(s, _)| req.prompt.contains(s.as_str()))
        {
            return Ok(text.clone().into());
        }
        match &self.fallback_completion {
            Some(f) => f.complete(req),
            None => Err(ProviderError::Content(format!(
                "no scripted response for request {}",
                req.request_hash()
            ))),
        }
    }
}

impl EmbeddingProvider for ScriptedProvider {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, ProviderError> {
        let fallback = self
            .fallback_embedding
            .clone()
            .unwrap_or_else(|| Arc::new(HashingEmbedder::default()));
        texts
            .iter()
            .map(|t| match self.embeddings.get(t) {
                Some(v) => Ok(v.clone()),
                None => fallback
                    .embed_batch(model_id, std::slice::from_ref(t))
                    .map(|mut v| v.remove(0)),
            })
            .collect()
    }
}

/// Deterministic simulated language model for offline runs.
///
/// * Question generation: each question quotes three consecutive words of
///   the chunk and asks which three words follow; distractors are other
///   windows of the chunk. Correct placement is skewed towards B and C.
/// * With a passage, it answers by locating the quoted words in it.
/// * Without one, it commits to the option with the highest hash of
///   (model, stem, option text), so its choice is stable under reordering.
/// * Subtopic lists and chapters are produced from fixed frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedModel;

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let to = from + s[from..].rfind(end)?;
    Some(&s[from..to])
}

fn clean_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty() && w.chars().all(|c| c.is_alphanumeric() || c == '-'))
        .collect()
}

impl SimulatedModel {
    fn generate(&self, req: &CompletionRequest, chunk: &str) -> String {
        let n: usize = regex::Regex::new(r"a total of (\d+) MCQs")
            .unwrap()
            .captures(&req.prompt)
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(10);
        let words = clean_words(chunk);
        if words.len() < 12 {
            return "The passage is too short to write questions about.".into();
        }
        let span = words.len() - 6;
        let window = |i: usize| words[i..i + 3].join(" ");
        let mut out = Vec::new();
        for q in 0..n {
            let start = q * span / n.max(1);
            let cue = window(start);
            let answer = window(start + 3);
            let followers: Vec<String> = (0..=span)
                .filter(|&i| window(i).eq_ignore_ascii_case(&cue))
                .map(|i| window(i + 3))
                .collect();
            let mut distractors: Vec<String> = Vec::new();
            for k in 0..64u32 {
                if distractors.len() == 3 {
                    break;
                }
                let h = stable_hash(&[&req.model_id, &cue, &k.to_string()]);
                let cand = window((h % (words.len() as u64 - 2)) as usize);
                let clash = followers.iter().any(|f| f.eq_ignore_ascii_case(&cand))
                    || distractors.iter().any(|d| d.eq_ignore_ascii_case(&cand));
                if !clash {
                    distractors.push(cand);
                }
            }
            if distractors.len() < 3 {
                continue;
            }
            let h = stable_hash(&[&req.model_id, "placement", &cue]) % 1000;
            let gen_letter = match h {
                0..=57 => Letter::A,
                58..=453 => Letter::B,
                454..=926 => Letter::C,
                _ => Letter::D,
            };
            let mut options: Vec<String> = distractors;
            options.insert(gen_letter.index(), answer);
            let m = Mcq {
                mcq_id: String::new(),
                chunk_id: String::new(),
                question: format!("Which words directly follow \"{cue}\"?"),
                options: options.try_into().unwrap(),
                correct_index: gen_letter.index(),
                gen_letter,
            };
            out.push(render_mcq(&m));
        }
        out.join("\n")
    }

    fn answer(&self, req: &CompletionRequest, question: &str, passage: Option<&str>) -> String {
        let mut lines = question.lines();
        let stem = lines.next().unwrap_or_default();
        let options: Vec<(char, &str)> = lines
            .filter_map(|l| {
                let mut cs = l.chars();
                let c = cs.next()?;
                cs.as_str().strip_prefix(") ").map(|rest| (c, rest.trim()))
            })
            .collect();
        if options.is_empty() {
            return "I am not sure.".into();
        }
        if let (Some(passage), Some(cue)) = (passage, between(stem, "\"", "\"")) {
            let words = clean_words(passage);
            let cue_words = clean_words(cue);
            let k = cue_words.len();
            if k > 0 && words.len() >= k + 3 {
                for i in 0..=words.len() - k - 3 {
                    if words[i..i + k] == cue_words[..] {
                        let follow = words[i + k..i + k + 3].join(" ");
                        if let Some((c, _)) = options
                            .iter()
                            .find(|(_, o)| o.eq_ignore_ascii_case(&follow))
                        {
                            return format!("Correct answer: {c}.");
                        }
                    }
                }
            }
        }
        let (c, _) = options
            .iter()
            .max_by_key(|(_, o)| stable_hash(&[&req.model_id, stem, o]))
            .unwrap();
        format!("Correct answer: {c}.")
    }

    fn subtopics(&self, topic: &str) -> String {
        let frames = [
            "Foundations of",
            "Measurement methods in",
            "Quantitative results on",
            "Applications of",
            "Open problems in",
        ];
        let mut out: String = frames
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{}) {f} {topic}\n", i + 1))
            .collect();
        out.push_str("<end>");
        out
    }

    fn chapter(&self, title: &str, subtopic: &str) -> String {
        const NOUNS: [&str; 8] = [
            "sample",
            "model",
            "measurement",
            "protocol",
            "dataset",
            "device",
            "survey",
            "archive",
        ];
        const VERBS: [&str; 6] = [
            "reached",
            "exceeded",
            "averaged",
            "dropped to",
            "stabilized at",
            "peaked at",
        ];
        const UNITS: [&str; 5] = ["percent", "kelvin", "samples", "kilometres", "hours"];
        let topic_words = clean_words(&format!("{title} {subtopic}"));
        let mut words: Vec<String> = Vec::new();
        let mut i = 0u64;
        while words.len() < 600 {
            let h = stable_hash(&[title, subtopic, &i.to_string()]);
            let noun = NOUNS[(h % 8) as usize];
            let verb = VERBS[((h >> 8) % 6) as usize];
            let unit = UNITS[((h >> 16) % 5) as usize];
            let subject = topic_words
                .get(((h >> 24) as usize) % topic_words.len().max(1))
                .cloned()
                .unwrap_or_else(|| "study".into());
            let sentence = format!(
                "In {} the {noun} of {subject} {verb} {} {unit} across {} trials.",
                1900 + (h >> 32) % 125,
                (h >> 40) % 1000,
                2 + (h >> 50) % 40,
            );
            words.extend(sentence.split_whitespace().map(String::from));
            i += 1;
        }
        words.truncate(600);
        words.join(" ")
    }
}

impl CompletionProvider for SimulatedModel {
    fn complete(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        let p = req.prompt.as_str();
        let text = if let Some(chunk) = between(p, "manuscript:\n'", "'\nDesign a multiple-choice")
        {
            self.generate(req, chunk)
        } else if let Some(passage) = between(p, "passage:\n'", "'\nAnswer the following") {
            let q = between(p, "multiple-choice question:\n'", "'\nPlease write which")
                .unwrap_or_default();
            self.answer(req, q, Some(passage))
        } else if let Some(q) = between(p, "multiple choice question:\n'", "'\nPlease write which")
        {
            self.answer(req, q, None)
        } else if let Some(topic) = between(p, "topic:\n'", "'\nPlease generate a list") {
            self.subtopics(topic)
        } else if let Some(title) = between(p, "title:\n'", "'\nPlease generate a comprehensive") {
            let sub = between(p, "subtopic: '", "'. Aim for").unwrap_or_default();
            self.chapter(title, sub)
        } else {
            return Err(ProviderError::Content(
                "simulated model does not recognise this prompt".into(),
            ));
        };
        Ok(text.into())
    }
}

impl EmbeddingProvider for SimulatedModel {
    fn embed_batch(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, ProviderError> {
        HashingEmbedder::default().embed_batch(model_id, texts)
    }
}
