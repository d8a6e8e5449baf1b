//! Generation prompts, parsing of generated question blocks, and structural
//! validation of multiple-choice questions.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::prompts::PromptSet;

pub const DEFAULT_MCQS_PER_CHUNK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::A, Letter::B, Letter::C, Letter::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Letter> {
        Self::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Letter> {
        match c.to_ascii_uppercase() {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            'D' => Some(Letter::D),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mcq {
    pub mcq_id: String,
    pub chunk_id: String,
    pub question: String,
    /// Options in the order the generator wrote them (A, B, C, D).
    pub options: [String; 4],
    pub correct_index: usize,
    /// Placement of the correct answer as emitted by the generator.
    pub gen_letter: Letter,
}

impl Mcq {
    pub fn correct(&self) -> &str {
        &self.options[self.correct_index]
    }

    pub fn distractors(&self) -> impl Iterator<Item = &str> {
        self.options
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.correct_index)
            .map(|(_, o)| o.as_str())
    }

    pub fn distractor_indices(&self) -> [usize; 3] {
        let mut out = [0; 3];
        let mut k = 0;
        for i in 0..4 {
            if i != self.correct_index {
                out[k] = i;
                k += 1;
            }
        }
        out
    }
}

/// Why a generated block or question was not accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "letter", rename_all = "snake_case")]
pub enum RejectReason {
    MissingOption(Letter),
    DuplicateLetter(Letter),
    NoCorrectAnswerLine,
    UnreadableCorrectAnswer,
    CorrectLetterOutOfRange(char),
    EmptyQuestion,
    EmptyOption(Letter),
    DuplicateOptions,
    OptionEqualsQuestion(Letter),
    CorrectIndexOutOfRange,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::MissingOption(_) => "missing_option",
            RejectReason::DuplicateLetter(_) => "duplicate_letter",
            RejectReason::NoCorrectAnswerLine => "no_correct_answer_line",
            RejectReason::UnreadableCorrectAnswer => "unreadable_correct_answer",
            RejectReason::CorrectLetterOutOfRange(_) => "correct_letter_out_of_range",
            RejectReason::EmptyQuestion => "empty_question",
            RejectReason::EmptyOption(_) => "empty_option",
            RejectReason::DuplicateOptions => "duplicate_options",
            RejectReason::OptionEqualsQuestion(_) => "option_equals_question",
            RejectReason::CorrectIndexOutOfRange => "correct_index_out_of_range",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::MissingOption(l) => write!(f, "missing option {l}"),
            RejectReason::DuplicateLetter(l) => write!(f, "duplicate letter {l}"),
            RejectReason::NoCorrectAnswerLine => write!(f, "no correct-answer line"),
            RejectReason::UnreadableCorrectAnswer => write!(f, "unreadable correct-answer line"),
            RejectReason::CorrectLetterOutOfRange(c) => write!(f, "correct letter {c} outside A-D"),
            RejectReason::EmptyQuestion => write!(f, "empty question"),
            RejectReason::EmptyOption(l) => write!(f, "empty option {l}"),
            RejectReason::DuplicateOptions => write!(f, "duplicate options"),
            RejectReason::OptionEqualsQuestion(l) => write!(f, "option {l} repeats the question"),
            RejectReason::CorrectIndexOutOfRange => write!(f, "correct index outside 0..3"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub fragment: String,
    pub reason: RejectReason,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationBatch {
    pub chunk_id: String,
    pub raw_text: String,
    pub parsed: Vec<Mcq>,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no [QUESTION] blocks found in generator output for chunk {chunk_id}")]
pub struct BatchParseError {
    pub chunk_id: String,
    pub raw: String,
}

pub fn build_generation_prompt(prompts: &PromptSet, chunk: &Chunk, n_questions: usize) -> String {
    prompts.generation.render(&[
        ("TEXT_HERE", chunk.text.as_str()),
        ("N_QUESTIONS", &n_questions.to_string()),
    ])
}

struct Patterns {
    marker: Regex,
    option: Regex,
    correct: Regex,
    letter: Regex,
}

fn patterns() -> &'static Patterns {
    static P: std::sync::OnceLock<Patterns> = std::sync::OnceLock::new();
    P.get_or_init(|| Patterns {
        marker: Regex::new(r"(?i)\[\s*'?\s*question\s*'?\s*\]").unwrap(),
        option: Regex::new(r"^[\s*_#\-]*\(?([A-Da-d])\s*[\).:]\s*(.*)$").unwrap(),
        correct: Regex::new(r"(?i)^[\s*_#\-]*correct\s+answer[\s*_]*:?(.*)$").unwrap(),
        letter: Regex::new(r"^[\s*_(\[']*([A-Za-z])(?:$|[^A-Za-z0-9])").unwrap(),
    })
}

/// Splits provider output on `[QUESTION]` markers and parses each block.
/// Every detected block ends up either in `parsed` or in `rejects`.
pub fn parse_generation_output(
    chunk_id: &str,
    raw: &str,
) -> Result<GenerationBatch, BatchParseError> {
    let p = patterns();
    let starts: Vec<(usize, usize)> = p
        .marker
        .find_iter(raw)
        .map(|m| (m.start(), m.end()))
        .collect();
    if starts.is_empty() {
        return Err(BatchParseError {
            chunk_id: chunk_id.to_string(),
            raw: raw.to_string(),
        });
    }
    let mut batch = GenerationBatch {
        chunk_id: chunk_id.to_string(),
        raw_text: raw.to_string(),
        parsed: Vec::new(),
        rejects: Vec::new(),
    };
    for (i, &(start, body_start)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(raw.len(), |s| s.0);
        let fragment = &raw[start..end];
        let mcq_id = format!("{chunk_id}/q{i:02}");
        match parse_block(&raw[body_start..end], chunk_id, mcq_id).and_then(validate_mcq) {
            Ok(m) => batch.parsed.push(m),
            Err(reason) => batch.rejects.push(Reject {
                fragment: fragment.trim().to_string(),
                message: reason.to_string(),
                reason,
            }),
        }
    }
    Ok(batch)
}

fn parse_block(body: &str, chunk_id: &str, mcq_id: String) -> Result<Mcq, RejectReason> {
    let p = patterns();
    let mut stem: Vec<&str> = Vec::new();
    let mut options: [Option<String>; 4] = Default::default();
    let mut last_option: Option<usize> = None;
    let mut correct: Option<Result<Letter, RejectReason>> = None;

    for line in body.lines() {
        if correct.is_some() {
            break;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(c) = p.correct.captures(trimmed) {
            let rest = c.get(1).unwrap().as_str();
            correct = Some(match p.letter.captures(rest) {
                Some(l) => {
                    let ch = l.get(1).unwrap().as_str().chars().next().unwrap();
                    Letter::from_char(ch).ok_or(RejectReason::CorrectLetterOutOfRange(
                        ch.to_ascii_uppercase(),
                    ))
                }
                None => Err(RejectReason::UnreadableCorrectAnswer),
            });
            continue;
        }
        if let Some(c) = p.option.captures(trimmed) {
            let ch = c.get(1).unwrap().as_str().chars().next().unwrap();
            let letter = Letter::from_char(ch).expect("pattern admits A-D only");
            let idx = letter.index();
            if options[idx].is_some() {
                return Err(RejectReason::DuplicateLetter(letter));
            }
            options[idx] = Some(c.get(2).unwrap().as_str().trim().to_string());
            last_option = Some(idx);
            continue;
        }
        match last_option {
            None => stem.push(trimmed),
            Some(idx) => {
                let o = options[idx].as_mut().unwrap();
                if !o.is_empty() {
                    o.push(' ');
                }
                o.push_str(trimmed);
            }
        }
    }

    let mut filled: Vec<String> = Vec::with_capacity(4);
    for (i, o) in options.into_iter().enumerate() {
        match o {
            Some(o) => filled.push(o),
            None => return Err(RejectReason::MissingOption(Letter::from_index(i).unwrap())),
        }
    }
    let gen_letter = correct.ok_or(RejectReason::NoCorrectAnswerLine)??;
    Ok(Mcq {
        mcq_id,
        chunk_id: chunk_id.to_string(),
        question: stem.join(" "),
        options: filled.try_into().expect("four options"),
        correct_index: gen_letter.index(),
        gen_letter,
    })
}

pub fn validate_mcq(m: Mcq) -> Result<Mcq, RejectReason> {
    let question = m.question.trim();
    if question.is_empty() {
        return Err(RejectReason::EmptyQuestion);
    }
    if m.correct_index > 3 {
        return Err(RejectReason::CorrectIndexOutOfRange);
    }
    for (i, o) in m.options.iter().enumerate() {
        let letter = Letter::from_index(i).unwrap();
        let t = o.trim();
        if t.is_empty() {
            return Err(RejectReason::EmptyOption(letter));
        }
        if t == question {
            return Err(RejectReason::OptionEqualsQuestion(letter));
        }
    }
    for i in 0..4 {
        for j in (i + 1)..4 {
            if m.options[i].trim() == m.options[j].trim() {
                return Err(RejectReason::DuplicateOptions);
            }
        }
    }
    Ok(m)
}

/// Renders one question in the generator's output format.
pub fn render_mcq(m: &Mcq) -> String {
    let mut out = format!("[QUESTION] {}\n", m.question);
    for (letter, o) in Letter::ALL.iter().zip(&m.options) {
        out.push_str(&format!("{letter}) {o}\n"));
    }
    let l = Letter::from_index(m.correct_index).unwrap();
    out.push_str(&format!("Correct answer: {l}) {}\n", m.correct()));
    out
}

/// Stem followed by `A) ..` through `D) ..`, options taken in `order`
/// (positions to original option indices).
pub fn render_question_block(m: &Mcq, order: &[usize; 4]) -> String {
    let mut out = m.question.clone();
    for (letter, &idx) in Letter::ALL.iter().zip(order) {
        out.push_str(&format!("\n{letter}) {}", m.options[idx]));
    }
    out
}
