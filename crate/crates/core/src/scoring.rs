//! Contingency tables, information potential, positional-bias histograms and
//! threshold sweeps. Everything here is a pure fold over stored verdicts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{Condition, QuestionEvaluation, QuestionVerdict, RotationRecord};
use crate::mcq::{Letter, Mcq};
use crate::quality_filter::{apply_filter, FilterError, FilterScores, ThresholdPolicy};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("duplicate verdict for {0}")]
    DuplicateMcq(String),
    #[error("information potential is undefined: every question was missed in both conditions")]
    UndefinedIp,
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n_total: u64,
    pub both_correct: u64,
    pub context_only: u64,
    pub direct_only: u64,
    pub both_incorrect: u64,
}

impl ContingencyTable {
    pub fn from_cells(
        both_correct: u64,
        context_only: u64,
        direct_only: u64,
        both_incorrect: u64,
    ) -> Self {
        Self {
            n_total: both_correct + context_only + direct_only + both_incorrect,
            both_correct,
            context_only,
            direct_only,
            both_incorrect,
        }
    }

    /// Questions answered correctly with the passage.
    pub fn c_context(&self) -> u64 {
        self.both_correct + self.context_only
    }

    /// Questions answered correctly without the passage.
    pub fn c_direct(&self) -> u64 {
        self.both_correct + self.direct_only
    }

    pub fn add(&mut self, direct_4x: bool, context_4x: bool) {
        self.n_total += 1;
        match (direct_4x, context_4x) {
            (true, true) => self.both_correct += 1,
            (false, true) => self.context_only += 1,
            (true, false) => self.direct_only += 1,
            (false, false) => self.both_incorrect += 1,
        }
    }

    /// Accuracy without the passage, as a fraction of `n_total`.
    pub fn direct_accuracy(&self) -> Option<f64> {
        (self.n_total > 0).then(|| self.c_direct() as f64 / self.n_total as f64)
    }

    pub fn context_accuracy(&self) -> Option<f64> {
        (self.n_total > 0).then(|| self.c_context() as f64 / self.n_total as f64)
    }
}

pub fn tabulate(verdicts: &[QuestionVerdict]) -> Result<ContingencyTable, ScoringError> {
    let mut seen = HashSet::with_capacity(verdicts.len());
    let mut t = ContingencyTable::default();
    for v in verdicts {
        if !seen.insert(v.mcq_id.as_str()) {
            return Err(ScoringError::DuplicateMcq(v.mcq_id.clone()));
        }
        t.add(v.direct_4x, v.context_4x);
    }
    Ok(t)
}

/// IP kept as an exact ratio next to its decimal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpValue {
    pub numerator: i64,
    pub denominator: u64,
    pub value: f64,
}

impl IpValue {
    pub fn rounded(&self) -> f64 {
        round3(self.value)
    }
}

/// `(C_context - C_direct) / (n_total - both_incorrect)`. Questions missed
/// in both conditions carry no signal and are left out of the denominator.
pub fn information_potential(t: &ContingencyTable) -> Result<IpValue, ScoringError> {
    let denominator = t.n_total - t.both_incorrect;
    if denominator == 0 {
        return Err(ScoringError::UndefinedIp);
    }
    let numerator = t.c_context() as i64 - t.c_direct() as i64;
    Ok(IpValue {
        numerator,
        denominator,
        value: numerator as f64 / denominator as f64,
    })
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Counts per letter, A through D.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LetterHistogram {
    pub counts: [u64; 4],
    pub fractions: [f64; 4],
}

impl LetterHistogram {
    pub fn from_letters(letters: impl IntoIterator<Item = Letter>) -> Self {
        let mut counts = [0u64; 4];
        for l in letters {
            counts[l.index()] += 1;
        }
        let total: u64 = counts.iter().sum();
        let fractions = counts.map(|c| {
            if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            }
        });
        Self { counts, fractions }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fraction(&self, l: Letter) -> f64 {
        self.fractions[l.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsweredHistogram {
    pub letters: LetterHistogram,
    pub unparsed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalBias {
    /// Where the generator put the correct answer.
    pub generation: LetterHistogram,
    /// Where the evaluator placed it; uniform by construction.
    pub asked: LetterHistogram,
    pub answered: BTreeMap<Condition, AnsweredHistogram>,
}

pub fn positional_bias_stats(mcqs: &[Mcq], records: &[RotationRecord]) -> PositionalBias {
    let answered = Condition::BOTH
        .into_iter()
        .map(|cond| {
            let rs: Vec<&RotationRecord> = records.iter().filter(|r| r.condition == cond).collect();
            let letters =
                LetterHistogram::from_letters(rs.iter().filter_map(|r| r.answered_letter.letter()));
            let unparsed = rs.len() as u64 - letters.total();
            (cond, AnsweredHistogram { letters, unparsed })
        })
        .collect();
    PositionalBias {
        generation: LetterHistogram::from_letters(mcqs.iter().map(|m| m.gen_letter)),
        // Each plan appears once per condition; count the direct copies.
        asked: LetterHistogram::from_letters(
            records
                .iter()
                .filter(|r| r.condition == Condition::Direct)
                .map(|r| r.asked_letter_of_correct),
        ),
        answered,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpReport {
    pub dataset_id: String,
    pub model_id: String,
    pub table: ContingencyTable,
    /// Rounded to three decimals; `None` when undefined.
    pub ip: Option<f64>,
    pub ip_exact: Option<IpValue>,
    pub policy: ThresholdPolicy,
    pub n_excluded_incomplete: u64,
    pub positional_bias: PositionalBias,
}

/// Scores the evaluations of the items in `mcqs`. Incomplete evaluations are
/// counted and left out of the table.
pub fn build_report(
    dataset_id: &str,
    model_id: &str,
    policy: ThresholdPolicy,
    mcqs: &[Mcq],
    evaluations: &[QuestionEvaluation],
) -> Result<IpReport, ScoringError> {
    let verdicts: Vec<QuestionVerdict> = evaluations
        .iter()
        .filter_map(|e| e.verdict.clone())
        .collect();
    let table = tabulate(&verdicts)?;
    let ip_exact = match information_potential(&table) {
        Ok(v) => Some(v),
        Err(ScoringError::UndefinedIp) => None,
        Err(e) => return Err(e),
    };
    let records: Vec<RotationRecord> = evaluations
        .iter()
        .flat_map(|e| e.records.iter().cloned())
        .collect();
    Ok(IpReport {
        dataset_id: dataset_id.into(),
        model_id: model_id.into(),
        table,
        ip: ip_exact.map(|v| v.rounded()),
        ip_exact,
        policy,
        n_excluded_incomplete: evaluations.iter().filter(|e| e.is_incomplete()).count() as u64,
        positional_bias: positional_bias_stats(mcqs, &records),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    Cosine,
    Alignment,
    Joint,
}

impl SweepFamily {
    pub const ALL: [SweepFamily; 3] = [
        SweepFamily::Cosine,
        SweepFamily::Alignment,
        SweepFamily::Joint,
    ];

    pub fn policy(self, percentile: u32, cosine_upper_cap: Option<f64>) -> ThresholdPolicy {
        let base = match self {
            SweepFamily::Cosine => ThresholdPolicy::cosine_only(percentile),
            SweepFamily::Alignment => ThresholdPolicy::alignment_only(percentile),
            SweepFamily::Joint => ThresholdPolicy::uniform(percentile),
        };
        ThresholdPolicy {
            cosine_upper_cap,
            ..base
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepFamily::Cosine => "cosine",
            SweepFamily::Alignment => "alignment",
            SweepFamily::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: SweepFamily,
    pub percentile: u32,
    pub n_pool: u64,
    pub n_kept: u64,
    pub fraction_remaining: f64,
    /// Kept items without a usable verdict.
    pub n_unscored: u64,
    pub table: ContingencyTable,
    pub nc_4x: Option<f64>,
    pub wc_4x: Option<f64>,
    pub ip: Option<f64>,
    /// Nothing left to score at this cutoff.
    pub empty: bool,
}

/// Re-filters the pool at each percentile and re-scores the survivors from
/// the stored verdicts. Thresholds always come from the full pool.
pub fn threshold_sweep(
    scores: &[FilterScores],
    verdicts: &[QuestionVerdict],
    families: &[SweepFamily],
    percentiles: &[u32],
    cosine_upper_cap: Option<f64>,
) -> Result<Vec<SweepRow>, ScoringError> {
    let mut by_id: HashMap<&str, &QuestionVerdict> = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        if by_id.insert(v.mcq_id.as_str(), v).is_some() {
            return Err(ScoringError::DuplicateMcq(v.mcq_id.clone()));
        }
    }
    let n_pool = scores.len() as u64;
    let mut rows = Vec::with_capacity(families.len() * percentiles.len());
    for &family in families {
        for &p in percentiles {
            let outcome = apply_filter(scores, &family.policy(p, cosine_upper_cap))?;
            let mut table = ContingencyTable::default();
            let mut n_kept = 0u64;
            let mut n_unscored = 0u64;
            for id in outcome.kept_ids() {
                n_kept += 1;
                match by_id.get(id) {
                    Some(v) => table.add(v.direct_4x, v.context_4x),
                    None => n_unscored += 1,
                }
            }
            let ip = information_potential(&table).ok().map(|v| v.rounded());
            rows.push(SweepRow {
                family,
                percentile: p,
                n_pool,
                n_kept,
                fraction_remaining: n_kept as f64 / n_pool as f64,
                n_unscored,
                nc_4x: table.direct_accuracy(),
                wc_4x: table.context_accuracy(),
                ip,
                empty: table.n_total == 0,
                table,
            });
        }
    }
    Ok(rows)
}

/// Sweep rows as CSV with a header line.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut out = String::from(
        "family,percentile,n_pool,n_kept,fraction_remaining,n_unscored,both_correct,context_only,direct_only,both_incorrect,nc_4x,wc_4x,ip,empty\n",
    );
    for r in rows {
        let t = &r.table;
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{},{},{},{},{},{},{},{},{}",
            r.family.as_str(),
            r.percentile,
            r.n_pool,
            r.n_kept,
            r.fraction_remaining,
            r.n_unscored,
            t.both_correct,
            t.context_only,
            t.direct_only,
            t.both_incorrect,
            opt(r.nc_4x),
            opt(r.wc_4x),
            opt(r.ip),
            r.empty
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::Answer;
    use proptest::prelude::*;

    fn v(id: &str, d: bool, c: bool) -> QuestionVerdict {
        QuestionVerdict {
            mcq_id: id.into(),
            model_id: "m".into(),
            direct_4x: d,
            context_4x: c,
        }
    }

    /// Scales Fig.-style fractions to 1000 questions.
    fn table_from_fractions(f: [f64; 4]) -> ContingencyTable {
        let c = f.map(|x| (x * 1000.0).round() as u64);
        ContingencyTable::from_cells(c[0], c[1], c[2], c[3])
    }

    #[test]
    fn one_per_cell() {
        let t = tabulate(&[
            v("a", true, true),
            v("b", false, true),
            v("c", true, false),
            v("d", false, false),
        ])
        .unwrap();
        assert_eq!(t, ContingencyTable::from_cells(1, 1, 1, 1));
        assert_eq!(t.n_total, 4);
        assert_eq!(tabulate(&[]).unwrap(), ContingencyTable::default());
        let all: Vec<_> = (0..10).map(|i| v(&i.to_string(), true, true)).collect();
        assert_eq!(tabulate(&all).unwrap().both_correct, 10);
        assert!(matches!(
            tabulate(&[v("a", true, true), v("a", false, false)]),
            Err(ScoringError::DuplicateMcq(id)) if id == "a"
        ));
    }

    #[test]
    fn reported_ip_values() {
        let cases = [
            ([0.734, 0.236, 0.012, 0.018], 0.229),
            ([0.706, 0.271, 0.009, 0.014], 0.265),
        ];
        for (f, expected) in cases {
            let ip = information_potential(&table_from_fractions(f)).unwrap();
            assert!(
                (ip.value - expected).abs() <= 0.002,
                "{} vs {expected}",
                ip.value
            );
        }
        let ip = information_potential(&ContingencyTable::from_cells(5, 0, 0, 0)).unwrap();
        assert_eq!(ip.value, 0.0);
        assert!(matches!(
            information_potential(&ContingencyTable::from_cells(0, 0, 0, 3)),
            Err(ScoringError::UndefinedIp)
        ));
    }

    #[test]
    fn exact_ratio_is_kept() {
        let ip = information_potential(&ContingencyTable::from_cells(1, 2, 1, 7)).unwrap();
        assert_eq!((ip.numerator, ip.denominator), (1, 4));
        assert_eq!(ip.rounded(), 0.25);
    }

    fn record(id: &str, cond: Condition, r: usize, answered: Letter) -> RotationRecord {
        let asked = Letter::from_index(r).unwrap();
        RotationRecord {
            mcq_id: id.into(),
            model_id: "m".into(),
            condition: cond,
            rotation_index: r,
            asked_letter_of_correct: asked,
            answered_letter: Answer::Given(answered),
            is_correct: asked == answered,
            raw_response: String::new(),
            error: None,
        }
    }

    #[test]
    fn always_a_histograms() {
        let records: Vec<_> = (0..5)
            .flat_map(|q| {
                Condition::BOTH.into_iter().flat_map(move |c| {
                    (0..4).map(move |r| record(&format!("q{q}"), c, r, Letter::A))
                })
            })
            .collect();
        let stats = positional_bias_stats(&[], &records);
        assert_eq!(stats.asked.fractions, [0.25; 4]);
        for cond in Condition::BOTH {
            assert_eq!(
                stats.answered[&cond].letters.fractions,
                [1.0, 0.0, 0.0, 0.0]
            );
        }
    }

    #[test]
    fn generation_histogram() {
        let letters = [
            (Letter::A, 58),
            (Letter::B, 396),
            (Letter::C, 473),
            (Letter::D, 73),
        ];
        let h = LetterHistogram::from_letters(
            letters
                .iter()
                .flat_map(|(l, n)| std::iter::repeat_n(*l, *n)),
        );
        assert_eq!(h.fractions, [0.058, 0.396, 0.473, 0.073]);
    }

    fn pool(n: usize) -> (Vec<FilterScores>, Vec<QuestionVerdict>) {
        let scores = (0..n)
            .map(|i| FilterScores {
                mcq_id: format!("q{i}"),
                jaccard_margin: (i % 7) as f64 / 7.0,
                rouge_l_margin: (i % 5) as f64 / 5.0,
                cosine_plausibility: i as f64 / n as f64,
            })
            .collect();
        let verdicts = (0..n)
            .map(|i| v(&format!("q{i}"), i % 3 == 0, i % 2 == 0))
            .collect();
        (scores, verdicts)
    }

    #[test]
    fn sweep_at_zero_matches_unfiltered() {
        let (scores, verdicts) = pool(50);
        let rows = threshold_sweep(&scores, &verdicts, &SweepFamily::ALL, &[0], None).unwrap();
        let full = tabulate(&verdicts).unwrap();
        for r in rows {
            assert_eq!(r.fraction_remaining, 1.0);
            assert_eq!(r.table, full);
            assert_eq!(r.ip, Some(information_potential(&full).unwrap().rounded()));
        }
    }

    #[test]
    fn cosine_sweep_coverage() {
        let n = 1000;
        let (scores, verdicts) = pool(n);
        let ps: Vec<u32> = (0..=90).step_by(10).collect();
        let rows = threshold_sweep(&scores, &verdicts, &[SweepFamily::Cosine], &ps, None).unwrap();
        for r in &rows {
            let expect = 1.0 - r.percentile as f64 / 100.0;
            assert!((r.fraction_remaining - expect).abs() <= 1.0 / n as f64 + 1e-12);
        }
        let again = threshold_sweep(&scores, &verdicts, &[SweepFamily::Cosine], &ps, None).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn sweep_flags_empty_rows() {
        let (scores, _) = pool(10);
        let rows = threshold_sweep(&scores, &[], &[SweepFamily::Joint], &[50], None).unwrap();
        assert!(rows[0].empty);
        assert_eq!(rows[0].ip, None);
        assert_eq!(rows[0].n_unscored, rows[0].n_kept);
        let csv = sweep_to_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("joint,50,10,"));
    }

    /// Recount straight from rotation records without going through verdicts.
    fn oracle(records: &[RotationRecord]) -> ContingencyTable {
        let mut per: BTreeMap<&str, [bool; 2]> = BTreeMap::new();
        for r in records {
            let slot = per.entry(&r.mcq_id).or_insert([true, true]);
            let k = if r.condition == Condition::Direct {
                0
            } else {
                1
            };
            slot[k] &= r.is_correct;
        }
        let mut t = ContingencyTable::default();
        for [d, c] in per.values() {
            t.add(*d, *c);
        }
        t
    }

    proptest! {
        #[test]
        fn ip_sign_bounds_and_scale(a in 0u64..200, b in 0u64..200, c in 0u64..200, d in 0u64..200, k in 1u64..20) {
            let t = ContingencyTable::from_cells(a, b, c, d);
            prop_assert_eq!(t.both_correct + t.context_only + t.direct_only + t.both_incorrect, t.n_total);
            match information_potential(&t) {
                Ok(ip) => {
                    prop_assert!((-1.0..=1.0).contains(&ip.value));
                    prop_assert_eq!(ip.value > 0.0, b > c);
                    let scaled = information_potential(&ContingencyTable::from_cells(a * k, b * k, c * k, d * k)).unwrap();
                    prop_assert!((scaled.value - ip.value).abs() < 1e-12);
                }
                Err(_) => prop_assert_eq!(a + b + c, 0),
            }
        }

        #[test]
        fn tabulate_agrees_with_record_fold(answers in proptest::collection::vec(proptest::array::uniform8(0usize..4), 1..40)) {
            let mut records = Vec::new();
            for (q, ans) in answers.iter().enumerate() {
                for (i, a) in ans.iter().enumerate() {
                    let cond = if i < 4 { Condition::Direct } else { Condition::WithContext };
                    records.push(record(&format!("q{q}"), cond, i % 4, Letter::from_index(*a).unwrap()));
                }
            }
            let verdicts: Vec<_> = records
                .chunks(8)
                .map(|rs| crate::evaluator::verdict_from_records(rs).unwrap())
                .collect();
            prop_assert_eq!(tabulate(&verdicts).unwrap(), oracle(&records));
        }

        #[test]
        fn coverage_non_increasing(n in 5usize..80, mut ps in proptest::collection::vec(0u32..=100, 1..8)) {
            ps.sort();
            let (scores, verdicts) = pool(n);
            for fam in SweepFamily::ALL {
                let rows = threshold_sweep(&scores, &verdicts, &[fam], &ps, None).unwrap();
                for w in rows.windows(2) {
                    prop_assert!(w[1].fraction_remaining <= w[0].fraction_remaining);
                }
            }
        }
    }
}
