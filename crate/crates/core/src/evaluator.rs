//! Position-debiased evaluation.
//!
//! Each question is asked four times per condition, with the correct option
//! rotated through A, B, C and D and the distractors shuffled around it. A
//! condition counts as answered only when all four rotations are correct.
//! The same four plans serve both conditions.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::mock::stable_hash;
use crate::llm_gateway::{Completion, CompletionRequest, Gateway, GatewayError};
use crate::mcq::{render_question_block, Letter, Mcq};
use crate::prompts::PromptSet;

pub const ROTATIONS: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("with-context prompt for {0} needs the source chunk")]
    MissingContext(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Direct,
    WithContext,
}

impl Condition {
    pub const BOTH: [Condition; 2] = [Condition::Direct, Condition::WithContext];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Direct => "direct",
            Condition::WithContext => "with_context",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationPlan {
    pub mcq_id: String,
    pub rotation_index: usize,
    pub letter_of_correct: Letter,
    /// `option_order[position]` is the canonical index of the option shown
    /// at that letter.
    pub option_order: [usize; 4],
    pub seed: u64,
}

/// Four plans; plan `r` puts the correct option at letter `r`. Distractor
/// order is shuffled from `(seed, mcq_id, r)`.
pub fn plan_rotations(m: &Mcq, seed: u64) -> [RotationPlan; ROTATIONS] {
    std::array::from_fn(|r| {
        let mut distractors = m.distractor_indices();
        let key = stable_hash(&["rotation", &seed.to_string(), &m.mcq_id, &r.to_string()]);
        distractors.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
        let mut rest = distractors.into_iter();
        let option_order = std::array::from_fn(|pos| {
            if pos == r {
                m.correct_index
            } else {
                rest.next().unwrap()
            }
        });
        RotationPlan {
            mcq_id: m.mcq_id.clone(),
            rotation_index: r,
            letter_of_correct: Letter::from_index(r).unwrap(),
            option_order,
            seed,
        }
    })
}

pub fn build_eval_prompt(
    prompts: &PromptSet,
    m: &Mcq,
    plan: &RotationPlan,
    condition: Condition,
    chunk_text: Option<&str>,
) -> Result<String, EvalError> {
    let question = render_question_block(m, &plan.option_order);
    match condition {
        Condition::Direct => Ok(prompts
            .answer_direct
            .render(&[("QUESTION_TEXT_HERE", &question)])),
        Condition::WithContext => {
            let passage = chunk_text.ok_or_else(|| EvalError::MissingContext(m.mcq_id.clone()))?;
            Ok(prompts.answer_context.render(&[
                ("PASSAGE_TEXT_HERE", passage),
                ("QUESTION_TEXT_HERE", &question),
            ]))
        }
    }
}

/// A model reply reduced to a letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Answer {
    Given(Letter),
    Unparsed,
}

impl From<Answer> for String {
    fn from(a: Answer) -> String {
        match a {
            Answer::Given(l) => l.to_string(),
            Answer::Unparsed => "unparsed".into(),
        }
    }
}

impl TryFrom<String> for Answer {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        if s == "unparsed" {
            return Ok(Answer::Unparsed);
        }
        let mut cs = s.chars();
        match (cs.next().and_then(Letter::from_char), cs.next()) {
            (Some(l), None) if s.chars().all(|c| c.is_ascii_uppercase()) => Ok(Answer::Given(l)),
            _ => Err(format!("invalid answer `{s}`")),
        }
    }
}

impl Answer {
    pub fn letter(self) -> Option<Letter> {
        match self {
            Answer::Given(l) => Some(l),
            Answer::Unparsed => None,
        }
    }
}

fn answer_res() -> &'static (Regex, Regex) {
    static R: std::sync::OnceLock<(Regex, Regex)> = std::sync::OnceLock::new();
    R.get_or_init(|| {
        (
            Regex::new(r"(?i)correct\s+answer[\s*_]*(?:is)?[\s*_]*:?[\s*_]*[\(\[']?\s*([a-d])(?:$|[^a-z0-9])").unwrap(),
            Regex::new(r"^[\s*_]*[\(\[']?([A-Da-d])(?:[\s*_]*$|[\)\].:,]|\s*-)").unwrap(),
        )
    })
}

/// Reads `Correct answer: <letter>` anywhere in the reply, otherwise a lone
/// leading letter such as `b`, `C)` or `D.`.
pub fn parse_answer_letter(raw: &str) -> Answer {
    let (declared, leading) = answer_res();
    let pick = |c: regex::Captures<'_>| {
        c.get(1)
            .and_then(|m| m.as_str().chars().next())
            .and_then(Letter::from_char)
    };
    if let Some(l) = declared.captures(raw).and_then(pick) {
        return Answer::Given(l);
    }
    match leading.captures(raw.trim()).and_then(pick) {
        Some(l) => Answer::Given(l),
        None => Answer::Unparsed,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationRecord {
    pub mcq_id: String,
    pub model_id: String,
    pub condition: Condition,
    pub rotation_index: usize,
    pub asked_letter_of_correct: Letter,
    pub answered_letter: Answer,
    pub is_correct: bool,
    pub raw_response: String,
    /// Gateway failure for this rotation, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RotationError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum RotationError {
    /// Retries exhausted; the question is excluded from scoring.
    Transport(String),
    /// Refusal or empty reply; scored as an incorrect answer.
    Content(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub direct_4x: bool,
    pub context_4x: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionVerdict {
    pub mcq_id: String,
    pub model_id: String,
    pub direct_4x: bool,
    pub context_4x: bool,
}

impl QuestionVerdict {
    pub fn verdict(&self) -> Verdict {
        Verdict {
            direct_4x: self.direct_4x,
            context_4x: self.context_4x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionEvaluation {
    pub mcq_id: String,
    pub model_id: String,
    pub records: Vec<RotationRecord>,
    /// `None` when a rotation hit a transport failure.
    pub verdict: Option<QuestionVerdict>,
}

impl QuestionEvaluation {
    pub fn is_incomplete(&self) -> bool {
        self.verdict.is_none()
    }
}

/// Folds records into a verdict. Requires exactly the four rotations of
/// each condition and no transport failure.
pub fn verdict_from_records(records: &[RotationRecord]) -> Option<QuestionVerdict> {
    let first = records.first()?;
    if records
        .iter()
        .any(|r| matches!(r.error, Some(RotationError::Transport(_))))
    {
        return None;
    }
    let all_correct = |cond: Condition| -> Option<bool> {
        let mut seen = [false; ROTATIONS];
        let mut ok = true;
        for r in records.iter().filter(|r| r.condition == cond) {
            if r.rotation_index >= ROTATIONS || std::mem::replace(&mut seen[r.rotation_index], true)
            {
                return None;
            }
            ok &= r.is_correct;
        }
        seen.iter().all(|s| *s).then_some(ok)
    };
    Some(QuestionVerdict {
        mcq_id: first.mcq_id.clone(),
        model_id: first.model_id.clone(),
        direct_4x: all_correct(Condition::Direct)?,
        context_4x: all_correct(Condition::WithContext)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub model_id: String,
    pub seed: u64,
    pub temperature: Option<f64>,
    pub max_tokens: u32,
}

impl EvalSettings {
    pub fn new(model_id: impl Into<String>, seed: u64) -> Self {
        Self {
            model_id: model_id.into(),
            seed,
            temperature: Some(0.0),
            max_tokens: 64,
        }
    }
}

pub struct EvalItem<'a> {
    pub mcq: &'a Mcq,
    pub chunk_text: &'a str,
}

struct Pending {
    item: usize,
    condition: Condition,
    plan: RotationPlan,
}

/// Evaluates every item under both conditions and all rotations, sending
/// all prompts through the gateway's bounded fan-out.
pub fn evaluate_many(
    items: &[EvalItem<'_>],
    prompts: &PromptSet,
    gateway: &Gateway,
    settings: &EvalSettings,
) -> Vec<QuestionEvaluation> {
    let mut pending = Vec::with_capacity(items.len() * 2 * ROTATIONS);
    let mut requests = Vec::with_capacity(items.len() * 2 * ROTATIONS);
    for (i, item) in items.iter().enumerate() {
        let plans = plan_rotations(item.mcq, settings.seed);
        for condition in Condition::BOTH {
            for plan in &plans {
                let prompt =
                    build_eval_prompt(prompts, item.mcq, plan, condition, Some(item.chunk_text))
                        .expect("context supplied");
                requests.push(CompletionRequest {
                    model_id: settings.model_id.clone(),
                    prompt,
                    temperature: settings.temperature,
                    max_tokens: settings.max_tokens,
                    request_tag: format!("evaluate:{condition}"),
                });
                pending.push(Pending {
                    item: i,
                    condition,
                    plan: plan.clone(),
                });
            }
        }
    }
    let replies = gateway.complete_all(&requests);

    let mut out: Vec<QuestionEvaluation> = items
        .iter()
        .map(|it| QuestionEvaluation {
            mcq_id: it.mcq.mcq_id.clone(),
            model_id: settings.model_id.clone(),
            records: Vec::with_capacity(2 * ROTATIONS),
            verdict: None,
        })
        .collect();
    for (p, reply) in pending.into_iter().zip(replies) {
        out[p.item]
            .records
            .push(to_record(&settings.model_id, &p, reply));
    }
    for q in &mut out {
        q.verdict = verdict_from_records(&q.records);
    }
    out
}

pub fn evaluate_question(
    m: &Mcq,
    chunk_text: &str,
    prompts: &PromptSet,
    gateway: &Gateway,
    settings: &EvalSettings,
) -> QuestionEvaluation {
    evaluate_many(
        &[EvalItem { mcq: m, chunk_text }],
        prompts,
        gateway,
        settings,
    )
    .pop()
    .unwrap()
}

fn to_record(
    model_id: &str,
    p: &Pending,
    reply: Result<Completion, GatewayError>,
) -> RotationRecord {
    let (raw_response, answered_letter, error) = match reply {
        Ok(c) => {
            let a = parse_answer_letter(&c.text);
            (c.text, a, None)
        }
        Err(e) if e.is_transport() => (
            String::new(),
            Answer::Unparsed,
            Some(RotationError::Transport(e.to_string())),
        ),
        Err(e) => (
            String::new(),
            Answer::Unparsed,
            Some(RotationError::Content(e.to_string())),
        ),
    };
    RotationRecord {
        mcq_id: p.plan.mcq_id.clone(),
        model_id: model_id.to_string(),
        condition: p.condition,
        rotation_index: p.plan.rotation_index,
        asked_letter_of_correct: p.plan.letter_of_correct,
        is_correct: answered_letter == Answer::Given(p.plan.letter_of_correct),
        answered_letter,
        raw_response,
        error,
    }
}
