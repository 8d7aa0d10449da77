//! Prediction files: one token per line,
//! `sentence<TAB>token<TAB>tag<TAB>pO<TAB>pB<TAB>pI`, probabilities with six
//! decimals.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::model::{Distribution3, LabelTag};

pub type SentencePrediction = Vec<(LabelTag, Distribution3)>;

pub fn format_predictions(predictions: &[SentencePrediction]) -> String {
    let mut out = String::new();
    for (s, sentence) in predictions.iter().enumerate() {
        for (t, (tag, p)) in sentence.iter().enumerate() {
            let [o, b, i] = *p.as_array();
            let _ = writeln!(out, "{s}\t{t}\t{tag}\t{o:.6}\t{b:.6}\t{i:.6}");
        }
    }
    out
}

pub fn write_predictions(predictions: &[SentencePrediction], path: &Path) -> Result<()> {
    std::fs::write(path, format_predictions(predictions))
        .with_context(|| format!("writing predictions to {}", path.display()))
}

/// Parses predicted tags back, grouped by sentence. Sentence and token
/// indices must be contiguous and in order.
pub fn parse_prediction_tags(text: &str) -> Result<Vec<Vec<LabelTag>>> {
    let mut out: Vec<Vec<LabelTag>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            bail!("line {}: expected at least 3 tab-separated fields", lineno + 1);
        }
        let s: usize = fields[0].parse().with_context(|| format!("line {}: sentence index", lineno + 1))?;
        let t: usize = fields[1].parse().with_context(|| format!("line {}: token index", lineno + 1))?;
        let tag: LabelTag = fields[2].parse().with_context(|| format!("line {}: tag", lineno + 1))?;
        if s == out.len() {
            out.push(Vec::new());
        } else if s + 1 != out.len() {
            bail!("line {}: sentence index {s} out of order", lineno + 1);
        }
        let sentence = out.last_mut().expect("pushed above");
        if t != sentence.len() {
            bail!("line {}: token index {t} out of order", lineno + 1);
        }
        sentence.push(tag);
    }
    Ok(out)
}

pub fn read_prediction_tags(path: &Path) -> Result<Vec<Vec<LabelTag>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_prediction_tags(&text)
}
