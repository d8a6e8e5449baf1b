//! Two-stage question filter.
//!
//! Stage one checks that the correct answer is closer to its source chunk
//! than every distractor: for `sim` in {Jaccard, ROUGE-L} the alignment
//! margin is `min_i [sim(chunk, correct) - sim(chunk, distractor_i)]`.
//! Stage two measures distractor plausibility as
//! `max_i cos(embed(correct), embed(distractor_i))`.
//!
//! Cutoffs are nearest-rank percentiles over the whole scored pool, and an
//! item is kept only when it reaches every cutoff.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::{Gateway, GatewayError};
use crate::mcq::{Letter, Mcq};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("percentile pool is empty")]
    EmptyPool,
    #[error("percentile {0} outside 0..=100")]
    PercentileOutOfRange(u32),
    #[error("cosine upper cap {0} outside (0, 1]")]
    CapOutOfRange(f64),
    #[error("{mcq_id}: option {letter} embeds to a zero-norm vector")]
    ZeroNorm { mcq_id: String, letter: Letter },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSet(BTreeSet<String>);

impl TokenSet {
    pub fn from_text(text: &str) -> Self {
        Self(tokenize(text).into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

/// `|a ∩ b| / |a ∪ b|`; 1 when both are empty.
pub fn jaccard(a: &TokenSet, b: &TokenSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.0.intersection(&b.0).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// LCS-based F1. 1 when both sequences are empty, 0 when the LCS is empty.
pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T]) -> f64 {
    if reference.is_empty() && candidate.is_empty() {
        return 1.0;
    }
    let l = lcs_len(reference, candidate);
    if l == 0 {
        return 0.0;
    }
    let precision = l as f64 / candidate.len() as f64;
    let recall = l as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `min_i (correct - distractor_i)`.
pub fn margin(sim_correct: f64, sim_distractors: &[f64]) -> f64 {
    sim_distractors
        .iter()
        .map(|d| sim_correct - d)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMargins {
    pub jaccard: f64,
    pub rouge_l: f64,
}

pub fn score_alignment(chunk_text: &str, m: &Mcq) -> AlignmentMargins {
    let chunk_tokens = tokenize(chunk_text);
    let chunk_set: TokenSet = chunk_tokens.iter().cloned().collect();
    score_alignment_tokens(&chunk_tokens, &chunk_set, m)
}

/// Same as [`score_alignment`] with the chunk already tokenized.
pub fn score_alignment_tokens(
    chunk_tokens: &[String],
    chunk_set: &TokenSet,
    m: &Mcq,
) -> AlignmentMargins {
    let sims = |text: &str| {
        let toks = tokenize(text);
        let set: TokenSet = toks.iter().cloned().collect();
        (jaccard(chunk_set, &set), rouge_l(chunk_tokens, &toks))
    };
    let (jg, rg) = sims(m.correct());
    let (jd, rd): (Vec<f64>, Vec<f64>) = m.distractors().map(sims).unzip();
    AlignmentMargins {
        jaccard: margin(jg, &jd),
        rouge_l: margin(rg, &rd),
    }
}

/// `None` for a zero-norm input.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Maximum cosine between the correct option and each distractor, given
/// vectors for the four options in canonical order.
pub fn plausibility_from_vectors(m: &Mcq, vectors: &[Vec<f64>]) -> Result<f64, FilterError> {
    let zero = |i: usize| FilterError::ZeroNorm {
        mcq_id: m.mcq_id.clone(),
        letter: Letter::from_index(i).unwrap(),
    };
    let g = &vectors[m.correct_index];
    if g.iter().all(|x| *x == 0.0) {
        return Err(zero(m.correct_index));
    }
    let mut best = f64::NEG_INFINITY;
    for i in m.distractor_indices() {
        best = best.max(cosine(g, &vectors[i]).ok_or_else(|| zero(i))?);
    }
    Ok(best)
}

pub fn score_plausibility(m: &Mcq, gateway: &Gateway) -> Result<f64, FilterError> {
    let vectors = gateway.embed(&m.options)?;
    let values: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.values).collect();
    plausibility_from_vectors(m, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterScores {
    pub mcq_id: String,
    pub jaccard_margin: f64,
    #[serde(rename = "rougeL_margin")]
    pub rouge_l_margin: f64,
    pub cosine_plausibility: f64,
}

/// Value at rank `ceil(p/100 * n)` (1-based) of the ascending sort; the
/// minimum for `p = 0`.
pub fn nearest_rank_percentile(pool: &[f64], p: u32) -> Result<f64, FilterError> {
    if pool.is_empty() {
        return Err(FilterError::EmptyPool);
    }
    if p > 100 {
        return Err(FilterError::PercentileOutOfRange(p));
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicy {
    #[serde(default)]
    pub jaccard_percentile: u32,
    #[serde(default)]
    pub rouge_percentile: u32,
    #[serde(default)]
    pub cosine_percentile: u32,
    /// Items whose plausibility reaches this cosine are dropped as
    /// near-paraphrases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine_upper_cap: Option<f64>,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self::uniform(0)
    }
}

impl ThresholdPolicy {
    pub fn uniform(p: u32) -> Self {
        Self {
            jaccard_percentile: p,
            rouge_percentile: p,
            cosine_percentile: p,
            cosine_upper_cap: None,
        }
    }

    pub fn cosine_only(p: u32) -> Self {
        Self {
            cosine_percentile: p,
            ..Self::uniform(0)
        }
    }

    pub fn alignment_only(p: u32) -> Self {
        Self {
            jaccard_percentile: p,
            rouge_percentile: p,
            ..Self::uniform(0)
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        for p in [
            self.jaccard_percentile,
            self.rouge_percentile,
            self.cosine_percentile,
        ] {
            if p > 100 {
                return Err(FilterError::PercentileOutOfRange(p));
            }
        }
        if let Some(cap) = self.cosine_upper_cap {
            if !(cap > 0.0 && cap <= 1.0) {
                return Err(FilterError::CapOutOfRange(cap));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub jaccard: f64,
    pub rouge_l: f64,
    pub cosine: f64,
    pub cosine_upper_cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    JaccardBelowThreshold,
    RougeLBelowThreshold,
    CosineBelowThreshold,
    CosineAtOrAboveCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub mcq_id: String,
    pub kept: bool,
    pub reasons: Vec<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub policy: ThresholdPolicy,
    pub thresholds: Thresholds,
    pub decisions: Vec<FilterDecision>,
}

impl FilterOutcome {
    pub fn kept_ids(&self) -> impl Iterator<Item = &str> {
        self.decisions
            .iter()
            .filter(|d| d.kept)
            .map(|d| d.mcq_id.as_str())
    }

    pub fn dropped(&self) -> impl Iterator<Item = &FilterDecision> {
        self.decisions.iter().filter(|d| !d.kept)
    }

    pub fn n_kept(&self) -> usize {
        self.decisions.iter().filter(|d| d.kept).count()
    }
}

pub fn apply_filter(
    scores: &[FilterScores],
    policy: &ThresholdPolicy,
) -> Result<FilterOutcome, FilterError> {
    policy.validate()?;
    if scores.is_empty() {
        return Err(FilterError::EmptyPool);
    }
    let column = |f: fn(&FilterScores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
    let thresholds = Thresholds {
        jaccard: nearest_rank_percentile(&column(|s| s.jaccard_margin), policy.jaccard_percentile)?,
        rouge_l: nearest_rank_percentile(&column(|s| s.rouge_l_margin), policy.rouge_percentile)?,
        cosine: nearest_rank_percentile(
            &column(|s| s.cosine_plausibility),
            policy.cosine_percentile,
        )?,
        cosine_upper_cap: policy.cosine_upper_cap,
    };
    let decisions = scores
        .iter()
        .map(|s| {
            let mut reasons = Vec::new();
            if s.jaccard_margin < thresholds.jaccard {
                reasons.push(DropReason::JaccardBelowThreshold);
            }
            if s.rouge_l_margin < thresholds.rouge_l {
                reasons.push(DropReason::RougeLBelowThreshold);
            }
            if s.cosine_plausibility < thresholds.cosine {
                reasons.push(DropReason::CosineBelowThreshold);
            }
            if let Some(cap) = thresholds.cosine_upper_cap {
                if s.cosine_plausibility >= cap {
                    reasons.push(DropReason::CosineAtOrAboveCap);
                }
            }
            FilterDecision {
                mcq_id: s.mcq_id.clone(),
                kept: reasons.is_empty(),
                reasons,
            }
        })
        .collect();
    Ok(FilterOutcome {
        policy: *policy,
        thresholds,
        decisions,
    })
}
