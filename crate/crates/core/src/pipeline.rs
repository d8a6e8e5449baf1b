//! Resumable stage runner behind the CLI.
//!
//! A run lives in `<output_dir>/<run_id>/`. Each stage reads its
//! predecessors' artifacts, writes its own atomically, and records their
//! hashes in `manifest.json` together with a hash of everything it consumed.
//! A stage whose inputs and outputs are unchanged is skipped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::{info, warn};

use crate::artifact::{
    file_sha256, read_jsonl, sha256_hex, write_atomic, write_jsonl, ArtifactError,
};
use crate::baseline_synth::{
    generate_baseline, read_topics, write_corpus, SynthError, SynthSettings, SyntheticTopic,
};
use crate::corpus::{
    chunk_document, load_corpus, word_count, Chunk, CorpusError, DocumentError, DEFAULT_CHUNK_WORDS,
};
use crate::evaluator::{evaluate_many, EvalItem, EvalSettings, QuestionEvaluation};
use crate::llm_gateway::{CompletionRequest, Gateway, GatewayError, ProviderConfig, ProviderKind};
use crate::mcq::{
    build_generation_prompt, parse_generation_output, Mcq, Reject, DEFAULT_MCQS_PER_CHUNK,
};
use crate::prompts::{PromptSet, TemplateError, TEMPLATE_VERSION};
use crate::quality_filter::{
    apply_filter, plausibility_from_vectors, score_alignment_tokens, tokenize, FilterError,
    FilterOutcome, FilterScores, ThresholdPolicy, TokenSet,
};
use crate::scoring::{
    build_report, sweep_to_csv, threshold_sweep, IpReport, ScoringError, SweepFamily, SweepRow,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const CHUNKS: &str = "chunks.jsonl";
const DOCUMENTS: &str = "documents.jsonl";
const CORPUS_ERRORS: &str = "corpus_errors.jsonl";
const MCQS: &str = "mcqs.jsonl";
const GENERATION_LOG: &str = "generation_log.jsonl";
const FILTER_SCORES: &str = "filter_scores.jsonl";
const FILTER_OUTCOME: &str = "filter.json";
const EVALUATIONS: &str = "evaluations.jsonl";
const IP_REPORTS: &str = "reports/ip_reports.json";
const SUMMARY: &str = "reports/summary.txt";
const SWEEP_JSONL: &str = "reports/sweep.jsonl";
const SWEEP_CSV: &str = "reports/sweep.csv";
const BUNDLE: &str = "reports/bundle.json";
const BASELINE_DIR: &str = "baseline";
const BASELINE_SUBTOPICS: &str = "baseline/subtopics.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read config {path}: {message}")]
    ConfigRead { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("stage `{stage}` needs the output of `{needs}`; run `infopot {needs}` first")]
    MissingStage { stage: Stage, needs: Stage },
    #[error("artifact {path} changed since stage `{stage}` wrote it; rerun `infopot {stage}`")]
    StaleArtifact { stage: Stage, path: PathBuf },
    #[error("unknown run `{run_id}`: no manifest at {path}")]
    UnknownRun { run_id: String, path: PathBuf },
    #[error("no usable documents in the corpus ({0} failed to load)")]
    EmptyCorpus(usize),
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::ConfigRead { .. } | PipelineError::InvalidConfig(_) => "config",
            PipelineError::MissingStage { .. } => "missing_stage",
            PipelineError::StaleArtifact { .. } => "stale_artifact",
            PipelineError::UnknownRun { .. } => "unknown_run",
            PipelineError::EmptyCorpus(_) | PipelineError::Corpus(_) => "corpus",
            PipelineError::Stage { .. } => "stage",
            PipelineError::Artifact(_) => "artifact",
            PipelineError::Gateway(_) => "gateway",
            PipelineError::Template(_) => "template",
            PipelineError::Filter(_) => "filter",
            PipelineError::Scoring(_) => "scoring",
            PipelineError::Synth(_) => "synth",
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SynthBaseline,
    Chunk,
    Generate,
    Filter,
    Evaluate,
    Score,
    Sweep,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::SynthBaseline,
        Stage::Chunk,
        Stage::Generate,
        Stage::Filter,
        Stage::Evaluate,
        Stage::Score,
        Stage::Sweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SynthBaseline => "synth-baseline",
            Stage::Chunk => "chunk",
            Stage::Generate => "generate",
            Stage::Filter => "filter",
            Stage::Evaluate => "evaluate",
            Stage::Score => "score",
            Stage::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// One seed topic per line.
    pub topics_file: PathBuf,
    /// Defaults to the generator model.
    #[serde(default)]
    pub model: Option<String>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_chunk_words() -> usize {
    DEFAULT_CHUNK_WORDS
}
fn default_mcqs_per_chunk() -> usize {
    DEFAULT_MCQS_PER_CHUNK
}
fn default_generation_max_tokens() -> u32 {
    4096
}
fn default_eval_max_tokens() -> u32 {
    64
}
pub fn default_percentiles() -> Vec<u32> {
    (0..=60).step_by(10).collect()
}

/// Everything a run needs. Relative paths are resolved against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset_id: Option<String>,
    /// JSONL corpus manifest. Without it the synthetic baseline is used.
    #[serde(default)]
    pub corpus_manifest: Option<PathBuf>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    #[serde(default = "default_chunk_words")]
    pub chunk_words: usize,
    #[serde(default = "default_mcqs_per_chunk")]
    pub mcqs_per_chunk: usize,
    pub generator_model: String,
    pub evaluator_models: Vec<String>,
    pub embedding_model: String,
    #[serde(default)]
    pub generation_temperature: Option<f64>,
    #[serde(default = "default_generation_max_tokens")]
    pub generation_max_tokens: u32,
    #[serde(default = "default_eval_max_tokens")]
    pub eval_max_tokens: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: ThresholdPolicy,
    #[serde(default = "default_percentiles")]
    pub sweep_percentiles: Vec<u32>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Shared response cache; defaults to `<run dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub provider: ProviderConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run_id: Option<String>,
    pub seed: Option<u64>,
    pub percentiles: Option<Vec<u32>>,
    pub provider: Option<ProviderKind>,
    pub output_dir: Option<PathBuf>,
    pub force: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::ConfigRead {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            self.corpus_manifest.as_mut(),
            self.templates_dir.as_mut(),
            self.cache_dir.as_mut(),
            self.provider.replay_file.as_mut(),
            self.baseline.as_mut().map(|b| &mut b.topics_file),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(id) = &o.run_id {
            self.run_id = Some(id.clone());
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(ps) = &o.percentiles {
            self.sweep_percentiles = ps.clone();
        }
        if let Some(kind) = o.provider {
            self.provider.kind = kind;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.chunk_words == 0 {
            return bad("chunk_words must be positive".into());
        }
        if self.mcqs_per_chunk == 0 {
            return bad("mcqs_per_chunk must be positive".into());
        }
        if self.evaluator_models.is_empty() {
            return bad("evaluator_models needs at least one model".into());
        }
        let mut seen = HashSet::new();
        for m in &self.evaluator_models {
            if !seen.insert(m) {
                return bad(format!("evaluator model `{m}` listed twice"));
            }
        }
        for (name, v) in [
            ("generator_model", &self.generator_model),
            ("embedding_model", &self.embedding_model),
        ] {
            if v.trim().is_empty() {
                return bad(format!("{name} must not be empty"));
            }
        }
        if let Some(p) = self.sweep_percentiles.iter().find(|p| **p > 100) {
            return bad(format!("sweep percentile {p} is above 100"));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty()
                || !id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                || id.starts_with('.')
            {
                return bad(format!(
                    "run_id `{id}` may only use letters, digits, `-`, `_` and `.`"
                ));
            }
        }
        self.policy.validate()?;
        self.provider.validate()?;
        if self.corpus_manifest.is_none() && self.baseline.is_none() {
            return bad("set corpus_manifest or a [baseline] section".into());
        }
        let must_exist = [
            ("corpus_manifest", self.corpus_manifest.as_ref()),
            ("templates_dir", self.templates_dir.as_ref()),
            ("provider.replay_file", self.provider.replay_file.as_ref()),
            (
                "baseline.topics_file",
                self.baseline.as_ref().map(|b| &b.topics_file),
            ),
        ];
        for (name, path) in must_exist {
            if let Some(p) = path {
                if !p.exists() {
                    return bad(format!("{name} {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    fn uses_baseline_corpus(&self) -> bool {
        self.corpus_manifest.is_none()
    }

    /// Hash of the settings that define a run, used for the default run id.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.run_id = None;
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        sha256_hex(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn effective_run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("run-{}", &self.fingerprint()[..12]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs_hash: String,
    /// Run-relative path to SHA-256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub counts: BTreeMap<String, u64>,
    pub started_at: String,
    pub completed_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub template_version: String,
    pub config: RunConfig,
    pub stages: BTreeMap<Stage, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentInfo {
    pub doc_id: String,
    pub title: Option<String>,
    pub synthetic: bool,
    pub word_count: usize,
    pub n_chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLogEntry {
    pub chunk_id: String,
    pub n_parsed: usize,
    pub rejects: Vec<Reject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unscorable {
    pub mcq_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterArtifact {
    pub outcome: FilterOutcome,
    pub unscorable: Vec<Unscorable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSweepRow {
    pub model_id: String,
    #[serde(flatten)]
    pub row: SweepRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub synthetic_baseline: bool,
    pub n_documents: usize,
    pub n_chunks: usize,
    pub n_mcqs: usize,
    pub n_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreArtifact {
    pub dataset: DatasetInfo,
    pub reports: Vec<IpReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub generated_at: String,
    pub run_id: String,
    pub tool_version: String,
    pub dataset: DatasetInfo,
    pub reports: Vec<IpReport>,
    pub sweep: Option<Vec<ModelSweepRow>>,
    pub artifacts: BTreeMap<Stage, BTreeMap<String, String>>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn hash_json(v: &serde_json::Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

pub struct Pipeline {
    cfg: RunConfig,
    run_dir: PathBuf,
    prompts: PromptSet,
    gateway: Option<Gateway>,
    manifest: RunManifest,
    force: bool,
}

impl Pipeline {
    /// Loads, overrides and validates the config, then opens (or starts) the
    /// run directory.
    pub fn open(config_path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg = RunConfig::load(config_path)?;
        cfg.apply(overrides);
        Self::from_config(cfg, overrides.force)
    }

    pub fn from_config(cfg: RunConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        let prompts = PromptSet::load(cfg.templates_dir.as_deref())?;
        let run_id = cfg.effective_run_id();
        let run_dir = cfg.output_dir.join(&run_id);
        std::fs::create_dir_all(run_dir.join("reports")).map_err(|e| {
            PipelineError::InvalidConfig(format!(
                "cannot create run directory {}: {e}",
                run_dir.display()
            ))
        })?;
        let manifest_path = run_dir.join("manifest.json");
        let stages = match std::fs::read(&manifest_path) {
            Ok(bytes) => match serde_json::from_slice::<RunManifest>(&bytes) {
                Ok(m) => m.stages,
                Err(e) => {
                    warn!(error = %e, "ignoring unreadable run manifest");
                    BTreeMap::new()
                }
            },
            Err(_) => BTreeMap::new(),
        };
        let manifest = RunManifest {
            run_id,
            tool_version: TOOL_VERSION.into(),
            template_version: TEMPLATE_VERSION.into(),
            config: cfg.clone(),
            stages,
        };
        Ok(Self {
            cfg,
            run_dir,
            prompts,
            gateway: None,
            manifest,
            force,
        })
    }

    /// Use a caller-built gateway instead of one from the provider config.
    pub fn with_gateway(mut self, gateway: Gateway) -> Self {
        self.gateway = Some(gateway);
        self
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn gateway(&mut self) -> Result<&Gateway> {
        if self.gateway.is_none() {
            let cache = self
                .cfg
                .cache_dir
                .clone()
                .unwrap_or_else(|| self.run_dir.join("cache"));
            self.gateway = Some(Gateway::from_config(
                &self.cfg.provider,
                &self.cfg.embedding_model,
                Some(cache),
            )?);
        }
        Ok(self.gateway.as_ref().unwrap())
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn save_manifest(&self) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.path("manifest.json"), &bytes)?;
        Ok(())
    }

    /// Predecessor outputs after checking they are still on disk unchanged.
    fn require(&self, stage: Stage, needs: Stage) -> Result<BTreeMap<String, String>> {
        let rec = self
            .manifest
            .stages
            .get(&needs)
            .ok_or(PipelineError::MissingStage { stage, needs })?;
        for (rel, hash) in &rec.outputs {
            let path = self.path(rel);
            if !path.exists() {
                return Err(PipelineError::MissingStage { stage, needs });
            }
            if &file_sha256(&path)? != hash {
                return Err(PipelineError::StaleArtifact { stage: needs, path });
            }
        }
        Ok(rec.outputs.clone())
    }

    fn up_to_date(&self, stage: Stage, inputs_hash: &str) -> bool {
        if self.force {
            return false;
        }
        let Some(rec) = self.manifest.stages.get(&stage) else {
            return false;
        };
        rec.inputs_hash == inputs_hash
            && rec
                .outputs
                .iter()
                .all(|(rel, h)| file_sha256(&self.path(rel)).is_ok_and(|cur| &cur == h))
    }

    fn skipped(&self, stage: Stage) -> StageOutcome {
        info!(%stage, "up to date");
        let rec = &self.manifest.stages[&stage];
        StageOutcome {
            stage,
            skipped: true,
            outputs: rec.outputs.clone(),
            counts: rec.counts.clone(),
        }
    }

    fn finish(
        &mut self,
        stage: Stage,
        inputs_hash: String,
        started_at: String,
        outputs: BTreeMap<String, String>,
        counts: BTreeMap<String, u64>,
    ) -> Result<StageOutcome> {
        self.manifest.stages.insert(
            stage,
            StageRecord {
                inputs_hash,
                outputs: outputs.clone(),
                counts: counts.clone(),
                started_at,
                completed_at: now(),
            },
        );
        self.save_manifest()?;
        info!(%stage, ?counts, "stage complete");
        Ok(StageOutcome {
            stage,
            skipped: false,
            outputs,
            counts,
        })
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<StageOutcome> {
        match stage {
            Stage::SynthBaseline => self.synth_baseline(),
            Stage::Chunk => self.chunk(),
            Stage::Generate => self.generate(),
            Stage::Filter => self.filter(),
            Stage::Evaluate => self.evaluate(),
            Stage::Score => self.score(),
            Stage::Sweep => self.sweep(),
        }
    }

    /// Every stage in order. The baseline stage runs only when the config
    /// has a `[baseline]` section.
    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::SynthBaseline && self.cfg.baseline.is_none() {
                continue;
            }
            out.push(self.run_stage(stage)?);
        }
        Ok(out)
    }

    fn synth_baseline(&mut self) -> Result<StageOutcome> {
        let stage = Stage::SynthBaseline;
        let baseline = self.cfg.baseline.clone().ok_or_else(|| {
            PipelineError::InvalidConfig(
                "synth-baseline needs a [baseline] section with topics_file".into(),
            )
        })?;
        let topics = read_topics(&baseline.topics_file).map_err(|e| PipelineError::ConfigRead {
            path: baseline.topics_file.clone(),
            message: e.to_string(),
        })?;
        if topics.is_empty() {
            return Err(PipelineError::InvalidConfig(
                "topics file lists no topics".into(),
            ));
        }
        let model = baseline
            .model
            .unwrap_or_else(|| self.cfg.generator_model.clone());
        let inputs_hash = hash_json(&json!({
            "stage": stage,
            "topics": topics,
            "model": model,
            "subtopics_template": self.prompts.subtopics.body(),
            "chapter_template": self.prompts.chapter.body(),
        }));
        if self.up_to_date(stage, &inputs_hash) {
            return Ok(self.skipped(stage));
        }
        let started = now();
        let settings = SynthSettings::new(model);
        let prompts = self.prompts.clone();
        let (parsed, docs) = generate_baseline(&topics, &prompts, self.gateway()?, &settings)?;
        let dir = self.path(BASELINE_DIR);
        write_corpus(&docs, &dir)?;
        let mut outputs = BTreeMap::new();
        outputs.insert(
            BASELINE_SUBTOPICS.to_string(),
            write_jsonl::<SyntheticTopic>(&self.path(BASELINE_SUBTOPICS), "subtopics/v1", &parsed)?,
        );
        let manifest_rel = format!("{BASELINE_DIR}/manifest.jsonl");
        outputs.insert(
            manifest_rel.clone(),
            file_sha256(&self.path(&manifest_rel))?,
        );
        for d in &docs {
            let rel = format!("{BASELINE_DIR}/docs/{}.txt", d.doc_id);
            outputs.insert(rel.clone(), file_sha256(&self.path(&rel))?);
        }
        let counts = BTreeMap::from([
            ("topics".into(), parsed.len() as u64),
            ("documents".into(), docs.len() as u64),
        ]);
        self.finish(stage, inputs_hash, started, outputs, counts)
    }

    fn corpus_source(&self) -> Result<PathBuf> {
        match &self.cfg.corpus_manifest {
            Some(p) => Ok(p.clone()),
            None => {
                self.require(Stage::Chunk, Stage::SynthBaseline)?;
                Ok(self.path(&format!("{BASELINE_DIR}/manifest.jsonl")))
            }
        }
    }

    fn chunk(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Chunk;
        let source = self.corpus_source()?;
        let corpus = load_corpus(&source)?;
        for e in &corpus.errors {
            warn!(doc_id = %e.doc_id, error = %e.message, "document skipped");
        }
        if corpus.documents.is_empty() {
            return Err(PipelineError::EmptyCorpus(corpus.errors.len()));
        }
        let doc_hashes: Vec<(String, String, bool)> = corpus
            .documents
            .iter()
            .map(|d| (d.doc_id.clone(), sha256_hex(d.text.as_bytes()), d.synthetic))
            .collect();
        let inputs_hash = hash_json(&json!({
            "stage": stage,
            "documents": doc_hashes,
            "errors": corpus.errors.iter().map(|e| &e.doc_id).collect::<Vec<_>>(),
            "chunk_words": self.cfg.chunk_words,
        }));
        if self.up_to_date(stage, &inputs_hash) {
            return Ok(self.skipped(stage));
        }
        let started = now();
        let mut chunks = Vec::new();
        let mut docs = Vec::with_capacity(corpus.documents.len());
        for d in &corpus.documents {
            let cs = chunk_document(d, self.cfg.chunk_words);
            docs.push(DocumentInfo {
                doc_id: d.doc_id.clone(),
                title: d.title.clone(),
                synthetic: d.synthetic,
                word_count: word_count(&d.text),
                n_chunks: cs.len(),
            });
            chunks.extend(cs);
        }
        let outputs = BTreeMap::from([
            (
                CHUNKS.to_string(),
                write_jsonl(&self.path(CHUNKS), "chunks/v1", &chunks)?,
            ),
            (
                DOCUMENTS.to_string(),
                write_jsonl(&self.path(DOCUMENTS), "documents/v1", &docs)?,
            ),
            (
                CORPUS_ERRORS.to_string(),
                write_jsonl::<DocumentError>(
                    &self.path(CORPUS_ERRORS),
                    "corpus_errors/v1",
                    &corpus.errors,
                )?,
            ),
        ]);
        let counts = BTreeMap::from([
            ("documents".into(), docs.len() as u64),
            ("document_errors".into(), corpus.errors.len() as u64),
            ("chunks".into(), chunks.len() as u64),
        ]);
        self.finish(stage, inputs_hash, started, outputs, counts)
    }

    fn load_chunks(&self) -> Result<Vec<Chunk>> {
        Ok(read_jsonl(&self.path(CHUNKS), "chunks/v1")?)
    }

    fn load_mcqs(&self) -> Result<Vec<Mcq>> {
        Ok(read_jsonl(&self.path(MCQS), "mcqs/v1")?)
    }

    fn generate(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Generate;
        let upstream = self.require(stage, Stage::Chunk)?;
        let inputs_hash = hash_json(&json!({
            "stage": stage,
            "chunks": upstream.get(CHUNKS),
            "model": self.cfg.generator_model,
            "n": self.cfg.mcqs_per_chunk,
            "temperature": self.cfg.generation_temperature,
            "max_tokens": self.cfg.generation_max_tokens,
            "template": self.prompts.generation.body(),
        }));
        if self.up_to_date(stage, &inputs_hash) {
            return Ok(self.skipped(stage));
        }
        let started = now();
        let chunks = self.load_chunks()?;
        let requests: Vec<CompletionRequest> = chunks
            .iter()
            .map(|c| CompletionRequest {
                model_id: self.cfg.generator_model.clone(),
                prompt: build_generation_prompt(&self.prompts, c, self.cfg.mcqs_per_chunk),
                temperature: self.cfg.generation_temperature,
                max_tokens: self.cfg.generation_max_tokens,
                request_tag: "generate".into(),
            })
            .collect();
        let replies = self.gateway()?.complete_all(&requests);

        let mut mcqs = Vec::new();
        let mut log = Vec::with_capacity(chunks.len());
        let (mut rejected, mut failed) = (0u64, 0u64);
        for (chunk, reply) in chunks.iter().zip(replies) {
            let entry = match reply {
                Ok(c) => match parse_generation_output(&chunk.chunk_id, &c.text) {
                    Ok(batch) => {
                        rejected += batch.rejects.len() as u64;
                        let n_parsed = batch.parsed.len();
                        mcqs.extend(batch.parsed);
                        GenerationLogEntry {
                            chunk_id: chunk.chunk_id.clone(),
                            n_parsed,
                            rejects: batch.rejects,
                            error: None,
                            raw_text: c.text,
                        }
                    }
                    Err(e) => {
                        failed += 1;
                        warn!(chunk_id = %chunk.chunk_id, "generator output has no question blocks");
                        GenerationLogEntry {
                            chunk_id: chunk.chunk_id.clone(),
                            n_parsed: 0,
                            rejects: Vec::new(),
                            error: Some(e.to_string()),
                            raw_text: e.raw,
                        }
                    }
                },
                Err(e) => {
                    failed += 1;
                    warn!(chunk_id = %chunk.chunk_id, error = %e, "generation failed");
                    GenerationLogEntry {
                        chunk_id: chunk.chunk_id.clone(),
                        n_parsed: 0,
                        rejects: Vec::new(),
                        error: Some(e.to_string()),
                        raw_text: String::new(),
                    }
                }
            };
            log.push(entry);
        }
        if mcqs.is_empty() {
            return Err(PipelineError::Stage {
                stage,
                message: format!("no questions were generated from {} chunks", chunks.len()),
            });
        }
        let outputs = BTreeMap::from([
            (
                MCQS.to_string(),
                write_jsonl(&self.path(MCQS), "mcqs/v1", &mcqs)?,
            ),
            (
                GENERATION_LOG.to_string(),
                write_jsonl(&self.path(GENERATION_LOG), "generation_log/v1", &log)?,
            ),
        ]);
        let counts = BTreeMap::from([
            ("chunks".into(), chunks.len() as u64),
            ("mcqs".into(), mcqs.len() as u64),
            ("rejected_blocks".into(), rejected),
            ("failed_chunks".into(), failed),
        ]);
        self.finish(stage, inputs_hash, started, outputs, counts)
    }

    fn chunk_texts(chunks: &[Chunk]) -> HashMap<&str, &str> {
        chunks
            .iter()
            .map(|c| (c.chunk_id.as_str(), c.text.as_str()))
            .collect()
    }

    fn missing_chunk(stage: Stage, m: &Mcq) -> PipelineError {
        PipelineError::Stage {
            stage,
            message: format!(
                "question {} refers to unknown chunk {}",
                m.mcq_id, m.chunk_id
            ),
        }
    }

    fn filter(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Filter;
        let chunks_up = self.require(stage, Stage::Chunk)?;
        let gen_up = self.require(stage, Stage::Generate)?;
        let inputs_hash = hash_json(&json!({
            "stage": stage,
            "chunks": chunks_up.get(CHUNKS),
            "mcqs": gen_up.get(MCQS),
            "embedding_model": self.cfg.embedding_model,
            "policy": self.cfg.policy,
        }));
        if self.up_to_date(stage, &inputs_hash) {
            return Ok(self.skipped(stage));
        }
        let started = now();
        let chunks = self.load_chunks()?;
        let mcqs = self.load_mcqs()?;
        let texts = Self::chunk_texts(&chunks);
        let tokens: HashMap<&str, (Vec<String>, TokenSet)> = chunks
            .iter()
            .map(|c| {
                let t = tokenize(&c.text);
                let set = t.iter().cloned().collect();
                (c.chunk_id.as_str(), (t, set))
            })
            .collect();

        // One embedding call over every distinct option text in the pool.
        let option_texts: Vec<String> = mcqs
            .iter()
            .flat_map(|m| m.options.iter().cloned())
            .collect();
        let vectors = self.gateway()?.embed(&option_texts)?;

        let mut scores = Vec::with_capacity(mcqs.len());
        let mut unscorable = Vec::new();
        for (i, m) in mcqs.iter().enumerate() {
            if !texts.contains_key(m.chunk_id.as_str()) {
                return Err(Self::missing_chunk(stage, m));
            }
            let (toks, set) = &tokens[m.chunk_id.as_str()];
            let align = score_alignment_tokens(toks, set, m);
            let vs: Vec<Vec<f64>> = vectors[i * 4..i * 4 + 4]
                .iter()
                .map(|v| v.values.clone())
                .collect();
            match plausibility_from_vectors(m, &vs) {
                Ok(cos) => scores.push(FilterScores {
                    mcq_id: m.mcq_id.clone(),
                    jaccard_margin: align.jaccard,
                    rouge_l_margin: align.rouge_l,
                    cosine_plausibility: cos,
                }),
                Err(e) => {
                    warn!(mcq_id = %m.mcq_id, error = %e, "question cannot be scored");
                    unscorable.push(Unscorable {
                        mcq_id: m.mcq_id.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
        let outcome = apply_filter(&scores, &self.cfg.policy)?;
        let n_kept = outcome.n_kept() as u64;
        let artifact = FilterArtifact {
            outcome,
            unscorable,
        };
        let filter_bytes = serde_json::to_vec_pretty(&artifact).expect("filter outcome serializes");
        write_atomic(&self.path(FILTER_OUTCOME), &filter_bytes)?;
        let outputs = BTreeMap::from([
            (
                FILTER_SCORES.to_string(),
                write_jsonl(&self.path(FILTER_SCORES), "filter_scores/v1", &scores)?,
            ),
            (FILTER_OUTCOME.to_string(), sha256_hex(&filter_bytes)),
        ]);
        let counts = BTreeMap::from([
            ("pool".into(), scores.len() as u64),
            ("kept".into(), n_kept),
            ("unscorable".into(), artifact.unscorable.len() as u64),
        ]);
        self.finish(stage, inputs_hash, started, outputs, counts)
    }

    /// Evaluates the whole generated pool, so later filter changes and
    /// sweeps reuse the same verdicts.
    fn evaluate(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Evaluate;
        let chunks_up = self.require(stage, Stage::Chunk)?;
        let gen_up = self.require(stage, Stage::Generate)?;
        let inputs_hash = hash_json(&json!({
            "stage": stage,
            "chunks": chunks_up.get(CHUNKS),
            "mcqs": gen_up.get(MCQS),
            "models": self.cfg.evaluator_models,
            "seed": self.cfg.seed,
            "max_tokens": self.cfg.eval_max_tokens,
            "direct_template": self.prompts.answer_direct.body(),
            "context_template": self.prompts.answer_context.body(),
        }));
        if self.up_to_date(stage, &inputs_hash) {
            return Ok(self.skipped(stage));
        }
        let started = now();
        let chunks = self.load_chunks()?;
        let mcqs = self.load_mcqs()?;
        let texts = Self::chunk_texts(&chunks);
        let mut items = Vec::with_capacity(mcqs.len());
        for m in &mcqs {
            let chunk_text = texts
                .get(m.chunk_id.as_str())
                .ok_or_else(|| Self::missing_chunk(stage, m))?;
            items.push(EvalItem { mcq: m, chunk_text });
        }
        let models = self.cfg.evaluator_models.clone();
        let prompts = self.prompts.clone();
        let mut all = Vec::with_capacity(items.len() * models.len());
        let mut incomplete = 0u64;
        for model in &models {
            let mut settings = EvalSettings::new(model.clone(), self.cfg.seed);
            settings.max_tokens = self.cfg.eval_max_tokens;
            let evals = evaluate_many(&items, &prompts, self.gateway()?, &settings);
            incomplete += evals.iter().filter(|e| e.is_incomplete()).count() as u64;
            info!(model = %model, questions = evals.len(), "evaluated");
            all.extend(evals);
        }
        let outputs = BTreeMap::from([(
            EVALUATIONS.to_string(),
            write_jsonl(&self.path(EVALUATIONS), "evaluations/v1", &all)?,
        )]);
        let counts = BTreeMap::from([
            ("questions".into(), mcqs.len() as u64),
            ("models".into(), models.len() as u64),
            ("incomplete".into(), incomplete),
        ]);
        self.finish(stage, inputs_hash, started, outputs, counts)
    }

    fn load_filter(&self) -> Result<FilterArtifact> {
        let path = self.path(FILTER_OUTCOME);
        let bytes = std::fs::read(&path).map_err(|source| ArtifactError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| {
            PipelineError::Artifact(ArtifactError::Decode {
                path,
                line: e.line(),
                message: e.to_string(),
            })
        })
    }

    fn load_evaluations(&self) -> Result<Vec<QuestionEvaluation>> {
        Ok(read_jsonl(&self.path(EVALUATIONS), "evaluations/v1")?)
    }

    fn dataset_info(&self, n_mcqs: usize, n_kept: usize) -> Result<DatasetInfo> {
        let docs: Vec<DocumentInfo> = read_jsonl(&self.path(DOCUMENTS), "documents/v1")?;
        let synthetic = !docs.is_empty() && docs.iter().all(|d| d.synthetic);
        let dataset_id = self.cfg.dataset_id.clone().unwrap_or_else(|| {
            if self.cfg.uses_baseline_corpus() {
                "synthetic-baseline".into()
            } else {
                self.cfg
                    .corpus_manifest
                    .as_ref()
                    .and_then(|p| p.parent())
                    .and_then(|p| p.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "corpus".into())
            }
        });
        Ok(DatasetInfo {
            dataset_id,
            synthetic_baseline: synthetic,
            n_documents: docs.len(),
            n_chunks: docs.iter().map(|d| d.n_chunks).sum(),
            n_mcqs,
            n_kept,
        })
    }

    fn score(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Score;
        let chunk_up = self.require(stage, Stage::Chunk)?;
        let filter_up = self.require(stage, Stage::Filter)?;
        let eval_up = self.require(stage, Stage::Evaluate)?;
        let inputs_hash = hash_json(&json!({
            "stage": stage,
            "documents": chunk_up.get(DOCUMENTS),
            "filter": filter_up.get(FILTER_OUTCOME),
            "evaluations": eval_up.get(EVALUATIONS),
            "dataset_id": self.cfg.dataset_id,
        }));
        if self.up_to_date(stage, &inputs_hash) {
            return Ok(self.skipped(stage));
        }
        let started = now();
        let filter = self.load_filter()?;
        let mcqs = self.load_mcqs()?;
        let evals = self.load_evaluations()?;
        let kept: HashSet<&str> = filter.outcome.kept_ids().collect();
        let kept_mcqs: Vec<Mcq> = mcqs
            .iter()
            .filter(|m| kept.contains(m.mcq_id.as_str()))
            .cloned()
            .collect();
        let dataset = self.dataset_info(mcqs.len(), kept_mcqs.len())?;

        let mut reports = Vec::with_capacity(self.cfg.evaluator_models.len());
        for model in &self.cfg.evaluator_models {
            let model_evals: Vec<QuestionEvaluation> = evals
                .iter()
                .filter(|e| &e.model_id == model && kept.contains(e.mcq_id.as_str()))
                .cloned()
                .collect();
            reports.push(build_report(
                &dataset.dataset_id,
                model,
                filter.outcome.policy,
                &kept_mcqs,
                &model_evals,
            )?);
        }
        let artifact = ScoreArtifact { dataset, reports };
        let bytes = serde_json::to_vec_pretty(&artifact).expect("reports serialize");
        write_atomic(&self.path(IP_REPORTS), &bytes)?;
        let summary = render_summary(&artifact);
        write_atomic(&self.path(SUMMARY), summary.as_bytes())?;
        let outputs = BTreeMap::from([
            (IP_REPORTS.to_string(), sha256_hex(&bytes)),
            (SUMMARY.to_string(), sha256_hex(summary.as_bytes())),
        ]);
        let counts = BTreeMap::from([("reports".into(), artifact.reports.len() as u64)]);
        self.finish(stage, inputs_hash, started, outputs, counts)
    }

    fn sweep(&mut self) -> Result<StageOutcome> {
        let stage = Stage::Sweep;
        let filter_up = self.require(stage, Stage::Filter)?;
        let eval_up = self.require(stage, Stage::Evaluate)?;
        let inputs_hash = hash_json(&json!({
            "stage": stage,
            "scores": filter_up.get(FILTER_SCORES),
            "evaluations": eval_up.get(EVALUATIONS),
            "percentiles": self.cfg.sweep_percentiles,
            "cap": self.cfg.policy.cosine_upper_cap,
        }));
        if self.up_to_date(stage, &inputs_hash) {
            return Ok(self.skipped(stage));
        }
        let started = now();
        let scores: Vec<FilterScores> = read_jsonl(&self.path(FILTER_SCORES), "filter_scores/v1")?;
        let evals = self.load_evaluations()?;
        let mut rows = Vec::new();
        let mut csv = String::new();
        for model in &self.cfg.evaluator_models {
            let verdicts: Vec<_> = evals
                .iter()
                .filter(|e| &e.model_id == model)
                .filter_map(|e| e.verdict.clone())
                .collect();
            let model_rows = threshold_sweep(
                &scores,
                &verdicts,
                &SweepFamily::ALL,
                &self.cfg.sweep_percentiles,
                self.cfg.policy.cosine_upper_cap,
            )?;
            let table = sweep_to_csv(&model_rows);
            let mut lines = table.lines();
            let header = lines.next().unwrap_or_default();
            if csv.is_empty() {
                csv.push_str(&format!("model_id,{header}\n"));
            }
            for l in lines {
                csv.push_str(&format!("{model},{l}\n"));
            }
            rows.extend(model_rows.into_iter().map(|row| ModelSweepRow {
                model_id: model.clone(),
                row,
            }));
        }
        write_atomic(&self.path(SWEEP_CSV), csv.as_bytes())?;
        let outputs = BTreeMap::from([
            (
                SWEEP_JSONL.to_string(),
                write_jsonl(&self.path(SWEEP_JSONL), "sweep/v1", &rows)?,
            ),
            (SWEEP_CSV.to_string(), sha256_hex(csv.as_bytes())),
        ]);
        let counts = BTreeMap::from([
            ("rows".into(), rows.len() as u64),
            (
                "empty_rows".into(),
                rows.iter().filter(|r| r.row.empty).count() as u64,
            ),
        ]);
        self.finish(stage, inputs_hash, started, outputs, counts)
    }

    /// Writes `reports/bundle.json` and returns it with a printable summary.
    pub fn report(&self) -> Result<(ReportBundle, String)> {
        self.require(Stage::Score, Stage::Score)
            .map_err(|e| match e {
                PipelineError::MissingStage { .. } => PipelineError::Stage {
                    stage: Stage::Score,
                    message: "run has not been scored yet; run `infopot score` first".into(),
                },
                other => other,
            })?;
        let path = self.path(IP_REPORTS);
        let bytes = std::fs::read(&path).map_err(|source| ArtifactError::Io {
            path: path.clone(),
            source,
        })?;
        let score: ScoreArtifact = serde_json::from_slice(&bytes).map_err(|e| {
            PipelineError::Artifact(ArtifactError::Decode {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })
        })?;
        let sweep = match self.manifest.stages.contains_key(&Stage::Sweep) {
            true => Some(read_jsonl(&self.path(SWEEP_JSONL), "sweep/v1")?),
            false => None,
        };
        let summary = render_summary(&score);
        let bundle = ReportBundle {
            generated_at: now(),
            run_id: self.manifest.run_id.clone(),
            tool_version: TOOL_VERSION.into(),
            dataset: score.dataset,
            reports: score.reports,
            sweep,
            artifacts: self
                .manifest
                .stages
                .iter()
                .map(|(s, r)| (*s, r.outputs.clone()))
                .collect(),
        };
        write_atomic(
            &self.path(BUNDLE),
            &serde_json::to_vec_pretty(&bundle).expect("bundle serializes"),
        )?;
        Ok((bundle, summary))
    }
}

/// Opens an existing run for reporting without touching its stages.
pub fn open_run(config_path: &Path, overrides: &Overrides) -> Result<Pipeline> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply(overrides);
    let run_id = cfg.effective_run_id();
    let manifest = cfg.output_dir.join(&run_id).join("manifest.json");
    if !manifest.exists() {
        return Err(PipelineError::UnknownRun {
            run_id,
            path: manifest,
        });
    }
    Pipeline::from_config(cfg, false)
}

fn pct(x: u64, n: u64) -> String {
    if n == 0 {
        return "-".into();
    }
    format!("{:.3}", x as f64 / n as f64)
}

pub fn render_summary(s: &ScoreArtifact) -> String {
    use std::fmt::Write as _;
    let d = &s.dataset;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dataset {}{}: {} documents, {} chunks, {} questions generated, {} kept",
        d.dataset_id,
        if d.synthetic_baseline {
            " (synthetic baseline)"
        } else {
            ""
        },
        d.n_documents,
        d.n_chunks,
        d.n_mcqs,
        d.n_kept
    );
    for r in &s.reports {
        let t = &r.table;
        let ip =
            r.ip.map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "undefined".into());
        let _ = writeln!(out, "\nmodel {}  IP {ip}", r.model_id);
        let _ = writeln!(
            out,
            "  n {}  both_correct {}  context_only {}  direct_only {}  both_incorrect {}",
            t.n_total,
            pct(t.both_correct, t.n_total),
            pct(t.context_only, t.n_total),
            pct(t.direct_only, t.n_total),
            pct(t.both_incorrect, t.n_total)
        );
        if r.n_excluded_incomplete > 0 {
            let _ = writeln!(
                out,
                "  excluded (incomplete evaluation): {}",
                r.n_excluded_incomplete
            );
        }
        let b = &r.positional_bias;
        let row = |h: &crate::scoring::LetterHistogram| {
            h.fractions
                .iter()
                .map(|f| format!("{f:.3}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "  letter            A      B      C      D");
        let _ = writeln!(out, "  generated     {}", row(&b.generation));
        let _ = writeln!(out, "  asked         {}", row(&b.asked));
        for (cond, h) in &b.answered {
            let _ = writeln!(
                out,
                "  {:<13} {}  (unparsed {})",
                format!("{cond}"),
                row(&h.letters),
                h.unparsed
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(dir: &Path) -> RunConfig {
        let corpus = dir.join("corpus");
        std::fs::create_dir_all(&corpus).unwrap();
        let words: Vec<String> = (0..450).map(|i| format!("w{}", i % 97)).collect();
        std::fs::write(corpus.join("a.txt"), words.join(" ")).unwrap();
        std::fs::write(
            corpus.join("manifest.jsonl"),
            "{\"doc_id\":\"a\",\"path\":\"a.txt\"}\n",
        )
        .unwrap();
        let mut cfg = RunConfig::from_toml(
            r#"
            run_id = "t"
            corpus_manifest = "corpus/manifest.jsonl"
            chunk_words = 200
            mcqs_per_chunk = 4
            generator_model = "gen"
            evaluator_models = ["judge"]
            embedding_model = "emb"
            "#,
        )
        .unwrap();
        cfg.resolve_paths(dir);
        cfg
    }

    #[test]
    fn config_defaults_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy(dir.path());
        assert_eq!(cfg.sweep_percentiles, vec![0, 10, 20, 30, 40, 50, 60]);
        assert_eq!(cfg.policy, ThresholdPolicy::default());
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.evaluator_models.clear();
        assert!(matches!(
            bad.validate(),
            Err(PipelineError::InvalidConfig(_))
        ));
        let mut bad = cfg.clone();
        bad.corpus_manifest = Some(dir.path().join("nope.jsonl"));
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.run_id = Some("../escape".into());
        assert!(bad.validate().is_err());
        assert!(RunConfig::from_toml(
            "generator_model = 'g'\nevaluator_models=['e']\nembedding_model='x'\nbogus=1"
        )
        .is_err());
    }

    #[test]
    fn default_run_id_follows_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = toy(dir.path());
        a.run_id = None;
        let id = a.effective_run_id();
        assert!(id.starts_with("run-"));
        let mut moved = a.clone();
        moved.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(moved.effective_run_id(), id);
        let mut reseeded = a.clone();
        reseeded.seed = 9;
        assert_ne!(reseeded.effective_run_id(), id);
    }

    #[test]
    fn missing_predecessor_is_actionable() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Pipeline::from_config(toy(dir.path()), false).unwrap();
        let err = p.run_stage(Stage::Filter).unwrap_err();
        assert!(
            err.to_string().contains("run `infopot chunk` first"),
            "{err}"
        );
        p.run_stage(Stage::Chunk).unwrap();
        let err = p.run_stage(Stage::Filter).unwrap_err();
        assert_eq!(err.kind(), "missing_stage");
        assert!(
            err.to_string().contains("run `infopot generate` first"),
            "{err}"
        );
    }

    #[test]
    fn stages_resume_and_rerun_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy(dir.path());
        let mut p = Pipeline::from_config(cfg.clone(), false).unwrap();
        let first = p.run_all().unwrap();
        assert!(first.iter().all(|o| !o.skipped));
        let (bundle, summary) = p.report().unwrap();
        assert_eq!(bundle.reports.len(), 1);
        assert!(summary.contains("model judge"));

        let mut again = Pipeline::from_config(cfg.clone(), false).unwrap();
        assert!(again.run_all().unwrap().iter().all(|o| o.skipped));

        // A new policy refilters and rescores but keeps generation and evaluation.
        let mut changed = cfg.clone();
        changed.policy = ThresholdPolicy::uniform(20);
        let mut p = Pipeline::from_config(changed, false).unwrap();
        let skipped: BTreeMap<Stage, bool> = p
            .run_all()
            .unwrap()
            .into_iter()
            .map(|o| (o.stage, o.skipped))
            .collect();
        assert!(skipped[&Stage::Chunk] && skipped[&Stage::Generate] && skipped[&Stage::Evaluate]);
        assert!(!skipped[&Stage::Filter] && !skipped[&Stage::Score]);

        // Deleting a late artifact only reruns that stage.
        std::fs::remove_file(p.run_dir().join(SWEEP_CSV)).unwrap();
        let outcomes = p.run_all().unwrap();
        for o in outcomes {
            assert_eq!(o.skipped, o.stage != Stage::Sweep, "{}", o.stage);
        }
    }

    #[test]
    fn tampered_artifact_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Pipeline::from_config(toy(dir.path()), false).unwrap();
        p.run_stage(Stage::Chunk).unwrap();
        p.run_stage(Stage::Generate).unwrap();
        std::fs::write(p.run_dir().join(MCQS), "{\"schema\":\"mcqs/v1\"}\n").unwrap();
        assert_eq!(
            p.run_stage(Stage::Filter).unwrap_err().kind(),
            "stale_artifact"
        );
    }

    #[test]
    fn unknown_run_for_report() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        let cfg_path = dir.path().join("infopot.toml");
        std::fs::write(
            &cfg_path,
            "run_id='t'\ncorpus_manifest='corpus/manifest.jsonl'\ngenerator_model='g'\nevaluator_models=['e']\nembedding_model='x'\n",
        )
        .unwrap();
        let err = open_run(&cfg_path, &Overrides::default()).err().unwrap();
        assert_eq!(err.kind(), "unknown_run");
    }
}
