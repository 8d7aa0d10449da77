//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Tolerance used when validating that a [`Distribution3`] sums to one.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown label ordinal {0}")]
    UnknownOrdinal(u8),
    #[error("unknown label tag {0:?}")]
    UnknownTag(String),
    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("embedding must have at least one dimension")]
    EmptyEmbedding,
    #[error("invalid distribution {0:?}: entries must lie in [0, 1] and sum to 1")]
    BadDistribution([f64; 3]),
    #[error("token text must not be empty")]
    EmptyText,
    #[error("sentence must contain at least one token")]
    EmptySentence,
}

/// A BIO label. The ordinal encoding is part of every file format and
/// must never change: O=0, B=1, I=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum LabelTag {
    O = 0,
    B = 1,
    I = 2,
}

impl LabelTag {
    pub const ALL: [LabelTag; 3] = [LabelTag::O, LabelTag::B, LabelTag::I];

    #[inline]
    pub fn ordinal(self) -> u8 {
        self as u8
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: u8) -> Result<Self, ModelError> {
        match ordinal {
            0 => Ok(LabelTag::O),
            1 => Ok(LabelTag::B),
            2 => Ok(LabelTag::I),
            other => Err(ModelError::UnknownOrdinal(other)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelTag::O => "O",
            LabelTag::B => "B",
            LabelTag::I => "I",
        }
    }
}

impl fmt::Display for LabelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelTag {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "O" => Ok(LabelTag::O),
            "B" => Ok(LabelTag::B),
            "I" => Ok(LabelTag::I),
            other => Err(ModelError::UnknownTag(other.to_string())),
        }
    }
}

/// A contextual token embedding. Values are kept in `f64`; files store `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyEmbedding);
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(pos));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, ModelError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Rounds every component to the nearest `f32`, as the file formats do.
    pub fn to_f32_precision(&self) -> Self {
        Self(self.0.iter().map(|&v| f64::from(v as f32)).collect())
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A probability distribution over the three BIO labels, indexed by ordinal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution3([f64; 3]);

impl Distribution3 {
    /// Builds a validated distribution from its (O, B, I) components.
    pub fn new(p_o: f64, p_b: f64, p_i: f64) -> Result<Self, ModelError> {
        Self::from_array([p_o, p_b, p_i])
    }

    pub fn from_array(p: [f64; 3]) -> Result<Self, ModelError> {
        let in_range = p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        let sum: f64 = p.iter().sum();
        if !in_range || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(ModelError::BadDistribution(p));
        }
        Ok(Self(p))
    }

    /// Wraps values the caller has already normalized.
    pub(crate) fn from_normalized(p: [f64; 3]) -> Self {
        debug_assert!(((p[0] + p[1] + p[2]) - 1.0).abs() < 1e-9, "{p:?}");
        Self(p)
    }

    pub fn one_hot(tag: LabelTag) -> Self {
        let mut p = [0.0; 3];
        p[tag.index()] = 1.0;
        Self(p)
    }

    #[inline]
    pub fn get(&self, tag: LabelTag) -> f64 {
        self.0[tag.index()]
    }

    #[inline]
    pub fn as_array(&self) -> &[f64; 3] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Most probable label; exact ties go to the lowest ordinal (O < B < I).
    pub fn argmax(&self) -> LabelTag {
        let mut best = LabelTag::O;
        for tag in [LabelTag::B, LabelTag::I] {
            if self.get(tag) > self.get(best) {
                best = tag;
            }
        }
        best
    }
}

/// One token of a labeled sentence together with everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub text: String,
    pub gold: LabelTag,
    pub embedding: Embedding,
    pub base: Distribution3,
}

impl TokenRecord {
    pub fn new(
        text: impl Into<String>,
        gold: LabelTag,
        embedding: Embedding,
        base: Distribution3,
    ) -> Result<Self, ModelError> {
        let text = text.into();
        if text.is_empty() {
            return Err(ModelError::EmptyText);
        }
        Ok(Self {
            text,
            gold,
            embedding,
            base,
        })
    }
}

/// A sentence from one dataset. The tag sequence is not required to be BIO-valid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<TokenRecord>,
    pub dataset_id: String,
}

impl Sentence {
    pub fn new(tokens: Vec<TokenRecord>, dataset_id: impl Into<String>) -> Result<Self, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        Ok(Self {
            tokens,
            dataset_id: dataset_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn gold_tags(&self) -> Vec<LabelTag> {
        self.tokens.iter().map(|t| t.gold).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].embedding.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinals_are_fixed() {
        assert_eq!(LabelTag::O.ordinal(), 0);
        assert_eq!(LabelTag::B.ordinal(), 1);
        assert_eq!(LabelTag::I.ordinal(), 2);
        for tag in LabelTag::ALL {
            assert_eq!(LabelTag::from_ordinal(tag.ordinal()).unwrap(), tag);
            assert_eq!(tag.as_str().parse::<LabelTag>().unwrap(), tag);
        }
        assert_eq!(LabelTag::from_ordinal(3), Err(ModelError::UnknownOrdinal(3)));
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution3::new(0.2, 0.3, 0.5).is_ok());
        assert!(Distribution3::new(0.2, 0.3, 0.6).is_err());
        assert!(Distribution3::new(-0.1, 0.6, 0.5).is_err());
        assert!(Distribution3::new(f64::NAN, 0.5, 0.5).is_err());
    }

    #[test]
    fn argmax_ties_prefer_lowest_ordinal() {
        let d = Distribution3::new(0.25, 0.375, 0.375).unwrap();
        assert_eq!(d.argmax(), LabelTag::B);
        let d = Distribution3::new(0.5, 0.5, 0.0).unwrap();
        assert_eq!(d.argmax(), LabelTag::O);
        let d = Distribution3::new(0.1, 0.2, 0.7).unwrap();
        assert_eq!(d.argmax(), LabelTag::I);
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert_eq!(Embedding::new(vec![1.0, f64::INFINITY]), Err(ModelError::NonFinite(1)));
        assert_eq!(Embedding::new(vec![]), Err(ModelError::EmptyEmbedding));
    }

    #[test]
    fn empty_text_and_sentence_rejected() {
        let e = Embedding::new(vec![0.0]).unwrap();
        let d = Distribution3::one_hot(LabelTag::O);
        assert_eq!(TokenRecord::new("", LabelTag::O, e, d), Err(ModelError::EmptyText));
        assert_eq!(Sentence::new(vec![], "ds"), Err(ModelError::EmptySentence));
    }
}
