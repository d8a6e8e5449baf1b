//! Prompt templates with `{NAME}` placeholders.
//!
//! The default set is compiled in from `templates/`. A run may point at a
//! directory holding replacements; every file of the set must then exist.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use regex::Regex;
use thiserror::Error;

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template resource missing: {0}")]
    Missing(PathBuf),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template `{template}` lacks placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("template `{template}` uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder {
        template: String,
        placeholder: String,
    },
}

fn placeholder_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z_]*)\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    body: String,
}

impl Template {
    fn new(name: &str, body: &str, required: &[&str]) -> Result<Self, TemplateError> {
        let body = body.strip_suffix('\n').unwrap_or(body).to_string();
        let used: BTreeSet<&str> = placeholder_re()
            .captures_iter(&body)
            .map(|c| c.get(1).unwrap().as_str())
            .collect();
        for p in required {
            if !used.contains(p) {
                return Err(TemplateError::MissingPlaceholder {
                    template: name.into(),
                    placeholder: (*p).into(),
                });
            }
        }
        if let Some(extra) = used.iter().find(|u| !required.contains(u)) {
            return Err(TemplateError::UnknownPlaceholder {
                template: name.into(),
                placeholder: (*extra).into(),
            });
        }
        Ok(Self {
            name: name.into(),
            body,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Single-pass substitution: inserted values are never re-scanned, so
    /// text that happens to contain `{NAME}` is quoted verbatim.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        placeholder_re()
            .replace_all(&self.body, |caps: &regex::Captures<'_>| {
                let key = caps.get(1).unwrap().as_str();
                values
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| (*v).to_string())
                    .unwrap_or_else(|| panic!("no value for placeholder {key} in {}", self.name))
            })
            .into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub generation: Template,
    pub answer_direct: Template,
    pub answer_context: Template,
    pub subtopics: Template,
    pub chapter: Template,
}

struct Spec {
    file: &'static str,
    builtin: &'static str,
    required: &'static [&'static str],
}

const SPECS: [Spec; 5] = [
    Spec {
        file: "generation.txt",
        builtin: include_str!("../templates/generation.txt"),
        required: &["TEXT_HERE", "N_QUESTIONS"],
    },
    Spec {
        file: "answer_direct.txt",
        builtin: include_str!("../templates/answer_direct.txt"),
        required: &["QUESTION_TEXT_HERE"],
    },
    Spec {
        file: "answer_context.txt",
        builtin: include_str!("../templates/answer_context.txt"),
        required: &["PASSAGE_TEXT_HERE", "QUESTION_TEXT_HERE"],
    },
    Spec {
        file: "subtopics.txt",
        builtin: include_str!("../templates/subtopics.txt"),
        required: &["TOPIC_HERE"],
    },
    Spec {
        file: "chapter.txt",
        builtin: include_str!("../templates/chapter.txt"),
        required: &["MANUSCRIPT_TITLE_HERE", "SUBTOPIC_HERE"],
    },
];

impl PromptSet {
    pub fn builtin() -> Self {
        Self::assemble(|s| Ok(s.builtin.to_string())).expect("built-in templates are valid")
    }

    /// Loads every template from `dir`; a missing file is an error.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        Self::assemble(|s| {
            let path = dir.join(s.file);
            std::fs::read_to_string(&path).map_err(|source| {
                if source.kind() == std::io::ErrorKind::NotFound {
                    TemplateError::Missing(path)
                } else {
                    TemplateError::Io { path, source }
                }
            })
        })
    }

    pub fn load(dir: Option<&Path>) -> Result<Self, TemplateError> {
        match dir {
            Some(d) => Self::load_dir(d),
            None => Ok(Self::builtin()),
        }
    }

    fn assemble(
        read: impl Fn(&Spec) -> Result<String, TemplateError>,
    ) -> Result<Self, TemplateError> {
        let mut t = Vec::with_capacity(SPECS.len());
        for spec in &SPECS {
            let body = read(spec)?;
            t.push(Template::new(
                spec.file.trim_end_matches(".txt"),
                &body,
                spec.required,
            )?);
        }
        let mut it = t.into_iter();
        Ok(Self {
            generation: it.next().unwrap(),
            answer_direct: it.next().unwrap(),
            answer_context: it.next().unwrap(),
            subtopics: it.next().unwrap(),
            chapter: it.next().unwrap(),
        })
    }

    /// Writes the set into `dir` so it can be edited and reloaded.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (spec, t) in SPECS.iter().zip(self.all()) {
            std::fs::write(dir.join(spec.file), format!("{}\n", t.body))?;
        }
        Ok(())
    }

    pub fn all(&self) -> [&Template; 5] {
        [
            &self.generation,
            &self.answer_direct,
            &self.answer_context,
            &self.subtopics,
            &self.chapter,
        ]
    }
}
