//! Corpus-level glue between inference and evaluation.

use anyhow::{bail, Result};
use rayon::prelude::*;

use super::predictions::SentencePrediction;
use crate::datastore::{Datastore, SearchMode};
use crate::evaluation::{self, EvalReport, Span, SurfaceCounts};
use crate::fusion::{self, FusionParams};
use crate::model::{LabelTag, Sentence};

/// Fused predictions for every sentence; order matches the input.
pub fn infer_corpus(
    store: &Datastore,
    sentences: &[Sentence],
    params: &FusionParams,
    mode: SearchMode,
) -> Result<Vec<SentencePrediction>> {
    params.validate()?;
    if let Some(s) = sentences.first() {
        if s.dim() != store.dim() {
            bail!("input dimension {} does not match store dimension {}", s.dim(), store.dim());
        }
    }
    let out: Result<Vec<_>, _> = sentences
        .par_iter()
        .map(|s| fusion::infer_sentence(store, s, params, mode))
        .collect();
    Ok(out?)
}

pub fn predicted_tags(predictions: &[SentencePrediction]) -> Vec<Vec<LabelTag>> {
    predictions
        .iter()
        .map(|s| s.iter().map(|(t, _)| *t).collect())
        .collect()
}

/// Argmax of the base distributions, i.e. the model without retrieval.
pub fn base_tags(sentences: &[Sentence]) -> Vec<Vec<LabelTag>> {
    sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.base.argmax()).collect())
        .collect()
}

pub fn gold_tags(sentences: &[Sentence]) -> Vec<Vec<LabelTag>> {
    sentences.iter().map(Sentence::gold_tags).collect()
}

/// Repairs each tag sequence and extracts its spans.
pub fn corpus_spans(sentences: &[Sentence], tags: &[Vec<LabelTag>]) -> Result<Vec<Span>> {
    if sentences.len() != tags.len() {
        bail!("{} sentences but {} tag sequences", sentences.len(), tags.len());
    }
    let mut spans = Vec::new();
    for (i, (s, t)) in sentences.iter().zip(tags).enumerate() {
        if s.len() != t.len() {
            bail!("sentence {i}: {} tokens but {} tags", s.len(), t.len());
        }
        let repaired = fusion::repair_bio(t);
        spans.extend(evaluation::extract_spans(&repaired, &s.texts(), i)?);
    }
    Ok(spans)
}

pub fn gold_spans(sentences: &[Sentence]) -> Result<Vec<Span>> {
    corpus_spans(sentences, &gold_tags(sentences))
}

pub fn training_surface_counts(train: &[Sentence]) -> Result<SurfaceCounts> {
    Ok(SurfaceCounts::from_spans(&gold_spans(train)?))
}

/// Full report: global scores, per-bin scores when training counts are
/// given, and a token-level McNemar test against `baseline` when given.
pub fn evaluate(
    gold: &[Sentence],
    pred: &[Vec<LabelTag>],
    train_counts: Option<&SurfaceCounts>,
    baseline: Option<&[Vec<LabelTag>]>,
) -> Result<EvalReport> {
    let gold_spans = gold_spans(gold)?;
    let pred_spans = corpus_spans(gold, pred)?;
    let mut report = evaluation::span_scores(&gold_spans, &pred_spans);
    if let Some(counts) = train_counts {
        report.per_bin = evaluation::per_bin_f1(&gold_spans, &pred_spans, counts);
    }
    if let Some(baseline) = baseline {
        // validates alignment
        corpus_spans(gold, baseline)?;
        let flat = |tags: &[Vec<LabelTag>]| -> Vec<LabelTag> {
            tags.iter().flat_map(|t| fusion::repair_bio(t)).collect()
        };
        report.mcnemar = Some(evaluation::mcnemar_token(
            &flat(pred),
            &flat(baseline),
            &flat(&gold_tags(gold)),
        )?);
    }
    Ok(report)
}
