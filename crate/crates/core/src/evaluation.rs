//! Span extraction and scoring.
//!
//! Spans are matched exactly on `(sentence, start, end)`. Long-tail analysis
//! bins every span by how often its normalized surface occurs among the
//! training spans: `low` [0, 4), `mid_low` [4, 7), `mid_high` [7, 10) and
//! `high` [10, ∞). Counts above 15 are merged into `high`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::model::LabelTag;

/// Discordant-pair count below which McNemar uses the exact binomial test.
pub const MCNEMAR_EXACT_BELOW: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("I tag at token {0} follows O; repair the sequence before extracting spans")]
    UnrepairedSequence(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub sentence_index: usize,
    /// Inclusive.
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub surface: String,
}

impl Span {
    pub fn key(&self) -> (usize, usize, usize) {
        (self.sentence_index, self.start, self.end)
    }
}

/// Lowercases and joins tokens with single spaces, collapsing inner whitespace.
pub fn normalize_surface<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for word in tokens.iter().flat_map(|t| t.as_ref().split_whitespace()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Inclusive `(start, end)` bounds of the maximal `B I*` runs.
pub fn span_bounds(tags: &[LabelTag]) -> Result<Vec<(usize, usize)>, EvalError> {
    let mut bounds = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            LabelTag::B => {
                if let Some(s) = open.replace(i) {
                    bounds.push((s, i - 1));
                }
            }
            LabelTag::I => {
                if open.is_none() {
                    return Err(EvalError::UnrepairedSequence(i));
                }
            }
            LabelTag::O => {
                if let Some(s) = open.take() {
                    bounds.push((s, i - 1));
                }
            }
        }
    }
    if let Some(s) = open {
        bounds.push((s, tags.len() - 1));
    }
    Ok(bounds)
}

/// Maximal `B I*` runs of an already repaired tag sequence.
pub fn extract_spans<S: AsRef<str>>(
    tags: &[LabelTag],
    texts: &[S],
    sentence_index: usize,
) -> Result<Vec<Span>, EvalError> {
    if tags.len() != texts.len() {
        return Err(EvalError::LengthMismatch(tags.len(), texts.len()));
    }
    Ok(span_bounds(tags)?
        .into_iter()
        .map(|(start, end)| Span {
            sentence_index,
            start,
            end,
            surface: normalize_surface(&texts[start..=end]),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpanCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SpanCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Exact-position span matching counts. Duplicate positions count once.
pub fn count_matches(gold: &[Span], pred: &[Span]) -> SpanCounts {
    let gold: BTreeSet<_> = gold.iter().map(Span::key).collect();
    let pred: BTreeSet<_> = pred.iter().map(Span::key).collect();
    let tp = gold.intersection(&pred).count();
    SpanCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrequencyBin {
    Low,
    MidLow,
    MidHigh,
    High,
}

impl FrequencyBin {
    pub const ALL: [FrequencyBin; 4] = [
        FrequencyBin::Low,
        FrequencyBin::MidLow,
        FrequencyBin::MidHigh,
        FrequencyBin::High,
    ];

    pub fn from_count(count: usize) -> Self {
        match count {
            0..=3 => FrequencyBin::Low,
            4..=6 => FrequencyBin::MidLow,
            7..=9 => FrequencyBin::MidHigh,
            _ => FrequencyBin::High,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrequencyBin::Low => "low",
            FrequencyBin::MidLow => "mid_low",
            FrequencyBin::MidHigh => "mid_high",
            FrequencyBin::High => "high",
        }
    }
}

impl fmt::Display for FrequencyBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrequencyBin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FrequencyBin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown frequency bin {s:?}"))
    }
}

/// Multiset of normalized training span surfaces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceCounts(HashMap<String, usize>);

impl SurfaceCounts {
    pub fn from_surfaces<I, S>(surfaces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut counts = HashMap::new();
        for s in surfaces {
            *counts.entry(s.into()).or_insert(0) += 1;
        }
        Self(counts)
    }

    pub fn from_spans<'a>(spans: impl IntoIterator<Item = &'a Span>) -> Self {
        Self::from_surfaces(spans.into_iter().map(|s| s.surface.clone()))
    }

    pub fn count(&self, surface: &str) -> usize {
        self.0.get(surface).copied().unwrap_or(0)
    }

    pub fn bin(&self, surface: &str) -> FrequencyBin {
        FrequencyBin::from_count(self.count(surface))
    }

    pub fn unique_surfaces(&self) -> BTreeSet<String> {
        self.0.keys().cloned().collect()
    }
}

pub fn frequency_bins(train: &SurfaceCounts, test_spans: &[Span]) -> BTreeMap<Span, FrequencyBin> {
    test_spans
        .iter()
        .map(|s| (s.clone(), train.bin(&s.surface)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinScore {
    pub counts: SpanCounts,
    pub gold_count: usize,
    pub predicted_count: usize,
}

impl BinScore {
    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }
}

/// Scores restricted to each frequency bin. Gold and predicted spans are each
/// binned by their own surface; every bin is reported, empty ones as zero.
pub fn per_bin_f1(gold: &[Span], pred: &[Span], train: &SurfaceCounts) -> BTreeMap<FrequencyBin, BinScore> {
    FrequencyBin::ALL
        .into_iter()
        .map(|bin| {
            let g: Vec<Span> = gold.iter().filter(|s| train.bin(&s.surface) == bin).cloned().collect();
            let p: Vec<Span> = pred.iter().filter(|s| train.bin(&s.surface) == bin).cloned().collect();
            let counts = count_matches(&g, &p);
            (
                bin,
                BinScore {
                    counts,
                    gold_count: counts.tp + counts.fn_,
                    predicted_count: counts.tp + counts.fp,
                },
            )
        })
        .collect()
}

/// `|A ∩ B| / |A ∪ B|`, with `J(∅, ∅) = 0`.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McNemarResult {
    /// Tokens system A got right and B got wrong.
    pub b: usize,
    /// Tokens system B got right and A got wrong.
    pub c: usize,
    /// Continuity-corrected `(|b - c| - 1)^2 / (b + c)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Whether the exact binomial path produced `p_value`.
    pub exact: bool,
    /// `b + c == 0`; the test is undefined and `p_value` is reported as 1.
    pub degenerate: bool,
}

/// Token-level McNemar test between two aligned tag sequences.
pub fn mcnemar_token(
    tags_a: &[LabelTag],
    tags_b: &[LabelTag],
    gold: &[LabelTag],
) -> Result<McNemarResult, EvalError> {
    if tags_a.len() != gold.len() {
        return Err(EvalError::LengthMismatch(tags_a.len(), gold.len()));
    }
    if tags_b.len() != gold.len() {
        return Err(EvalError::LengthMismatch(tags_b.len(), gold.len()));
    }
    let (mut b, mut c) = (0, 0);
    for ((a, bb), g) in tags_a.iter().zip(tags_b).zip(gold) {
        match (a == g, bb == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c))
}

pub fn mcnemar_from_counts(b: usize, c: usize) -> McNemarResult {
    let n = b + c;
    if n == 0 {
        return McNemarResult {
            b,
            c,
            statistic: 0.0,
            p_value: 1.0,
            exact: true,
            degenerate: true,
        };
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let statistic = diff * diff / n as f64;
    let (p_value, exact) = if n < MCNEMAR_EXACT_BELOW {
        (exact_binomial_two_sided(n, b.min(c)), true)
    } else {
        let chi2 = ChiSquared::new(1.0).expect("one degree of freedom");
        (chi2.sf(statistic), false)
    };
    McNemarResult {
        b,
        c,
        statistic,
        p_value,
        exact,
        degenerate: false,
    }
}

/// `min(1, 2 P(X <= m))` for `X ~ Binomial(n, 1/2)`.
fn exact_binomial_two_sided(n: usize, m: usize) -> f64 {
    let mut term = 0.5f64.powi(n as i32);
    let mut tail = term;
    for i in 0..m {
        term *= (n - i) as f64 / (i + 1) as f64;
        tail += term;
    }
    (2.0 * tail).min(1.0)
}

/// Span-level evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub per_bin: BTreeMap<FrequencyBin, BinScore>,
    pub provenance: Option<BTreeMap<String, usize>>,
    pub mcnemar: Option<McNemarResult>,
}

/// Exact-match precision, recall and F1 of `pred` against `gold`.
pub fn span_scores(gold: &[Span], pred: &[Span]) -> EvalReport {
    let counts = count_matches(gold, pred);
    EvalReport {
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        tp: counts.tp,
        fp: counts.fp,
        fn_: counts.fn_,
        per_bin: BTreeMap::new(),
        provenance: None,
        mcnemar: None,
    }
}

/// One line of the structured report: metric name, slice, value.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub slice: String,
    pub value: f64,
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.name, self.slice, format_value(self.value))
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

impl Record {
    pub fn new(name: impl Into<String>, slice: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            slice: slice.into(),
            value,
        }
    }
}

impl EvalReport {
    /// Stable, diff-friendly records in a fixed order.
    pub fn records(&self) -> Vec<Record> {
        let mut out = vec![
            Record::new("precision", "all", self.precision),
            Record::new("recall", "all", self.recall),
            Record::new("f1", "all", self.f1),
            Record::new("tp", "all", self.tp as f64),
            Record::new("fp", "all", self.fp as f64),
            Record::new("fn", "all", self.fn_ as f64),
        ];
        for (bin, score) in &self.per_bin {
            out.push(Record::new("f1", bin.name(), score.f1()));
            out.push(Record::new("gold_spans", bin.name(), score.gold_count as f64));
            out.push(Record::new("predicted_spans", bin.name(), score.predicted_count as f64));
        }
        if let Some(m) = &self.mcnemar {
            out.push(Record::new("mcnemar_b", "tokens", m.b as f64));
            out.push(Record::new("mcnemar_c", "tokens", m.c as f64));
            out.push(Record::new("mcnemar_statistic", "tokens", m.statistic));
            out.push(Record::new("mcnemar_p", "tokens", m.p_value));
            out.push(Record::new("mcnemar_degenerate", "tokens", f64::from(u8::from(m.degenerate))));
        }
        if let Some(prov) = &self.provenance {
            for (source, count) in prov {
                out.push(Record::new("retrieved", source.as_str(), *count as f64));
            }
        }
        out
    }

    pub fn to_records_string(&self) -> String {
        self.records().iter().map(|r| format!("{r}\n")).collect()
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "precision  {:>8.2}", 100.0 * self.precision);
        let _ = writeln!(s, "recall     {:>8.2}", 100.0 * self.recall);
        let _ = writeln!(s, "span-F1    {:>8.2}", 100.0 * self.f1);
        let _ = writeln!(s, "tp {}  fp {}  fn {}", self.tp, self.fp, self.fn_);
        if !self.per_bin.is_empty() {
            let _ = writeln!(s, "\n{:<10} {:>8} {:>6} {:>6}", "bin", "span-F1", "gold", "pred");
            for (bin, score) in &self.per_bin {
                let _ = writeln!(
                    s,
                    "{:<10} {:>8.2} {:>6} {:>6}",
                    bin.name(),
                    100.0 * score.f1(),
                    score.gold_count,
                    score.predicted_count
                );
            }
        }
        if let Some(m) = &self.mcnemar {
            let _ = writeln!(
                s,
                "\nmcnemar b={} c={} statistic={:.4} p={:.6}{}{}",
                m.b,
                m.c,
                m.statistic,
                m.p_value,
                if m.exact { " (exact)" } else { "" },
                if m.degenerate { " [degenerate]" } else { "" }
            );
        }
        if let Some(prov) = &self.provenance {
            let _ = writeln!(s, "\nretrieved from:");
            for (source, count) in prov {
                let _ = writeln!(s, "  {source:<16} {count}");
            }
        }
        s
    }
}
