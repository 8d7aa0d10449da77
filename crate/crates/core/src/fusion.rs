//! Turning retrieved neighbors into label distributions and tags.
//!
//! `p_knn(y) ∝ Σ_{retrieved n with label y} exp(-d_n / T)` over the `k`
//! retrieved neighbors only, then `p = λ p_knn + (1 - λ) p_base`.

use thiserror::Error;

use crate::datastore::{Datastore, DatastoreError, Neighbor, SearchMode};
use crate::model::{Distribution3, LabelTag, Sentence};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cannot build a label distribution from zero neighbors")]
    EmptyNeighborList,
    #[error("interpolation weight {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("neighbor count k must be at least 1")]
    BadK,
    #[error("non-finite neighbor distance {0}")]
    NonFiniteDistance(f64),
    #[error(transparent)]
    Search(#[from] DatastoreError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub k: usize,
    pub lambda: f64,
    pub temperature: f64,
}

impl FusionParams {
    pub fn new(k: usize, lambda: f64, temperature: f64) -> Result<Self, FusionError> {
        let p = Self { k, lambda, temperature };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.k == 0 {
            return Err(FusionError::BadK);
        }
        check_lambda(self.lambda)?;
        check_temperature(self.temperature)
    }
}

fn check_lambda(lambda: f64) -> Result<(), FusionError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(FusionError::LambdaOutOfRange(lambda))
    }
}

fn check_temperature(t: f64) -> Result<(), FusionError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(FusionError::BadTemperature(t))
    }
}

/// Label distribution of the retrieved neighbors, weighted by
/// `exp(-distance / T)`. Labels absent from `neighbors` get exactly zero.
pub fn knn_distribution(neighbors: &[Neighbor], temperature: f64) -> Result<Distribution3, FusionError> {
    knn_distribution_from(neighbors.iter().map(|n| (n.value, n.distance)), temperature)
}

/// Same as [`knn_distribution`] over bare `(label, distance)` pairs.
pub fn knn_distribution_from<I>(neighbors: I, temperature: f64) -> Result<Distribution3, FusionError>
where
    I: IntoIterator<Item = (LabelTag, f64)> + Clone,
{
    check_temperature(temperature)?;
    let mut min_d = f64::INFINITY;
    let mut any = false;
    for (_, d) in neighbors.clone() {
        if !d.is_finite() {
            return Err(FusionError::NonFiniteDistance(d));
        }
        min_d = min_d.min(d);
        any = true;
    }
    if !any {
        return Err(FusionError::EmptyNeighborList);
    }
    // shifting by the minimum distance cancels in the normalization and keeps
    // the largest weight at exactly 1
    let mut mass = [0.0f64; 3];
    for (tag, d) in neighbors {
        mass[tag.index()] += (-(d - min_d) / temperature).exp();
    }
    let total: f64 = mass.iter().sum();
    Ok(Distribution3::from_normalized(mass.map(|m| m / total)))
}

/// `λ p_knn + (1 - λ) p_se`.
pub fn interpolate(p_knn: &Distribution3, p_se: &Distribution3, lambda: f64) -> Result<Distribution3, FusionError> {
    check_lambda(lambda)?;
    let a = p_knn.as_array();
    let b = p_se.as_array();
    let mixed = [0, 1, 2].map(|i| lambda * a[i] + (1.0 - lambda) * b[i]);
    Ok(Distribution3::from_normalized(mixed))
}

/// Retrieves `k` neighbors for every token of `sentence` and returns the
/// fused distribution together with its argmax tag.
pub fn infer_sentence(
    store: &Datastore,
    sentence: &Sentence,
    params: &FusionParams,
    mode: SearchMode,
) -> Result<Vec<(LabelTag, Distribution3)>, FusionError> {
    params.validate()?;
    sentence
        .tokens
        .iter()
        .map(|token| {
            let neighbors = store.search(&token.embedding, params.k, mode)?;
            let p_knn = knn_distribution(&neighbors, params.temperature)?;
            let fused = interpolate(&p_knn, &token.base, params.lambda)?;
            Ok((fused.argmax(), fused))
        })
        .collect()
}

/// Rewrites every `I` that does not follow a `B` or `I` into `B`.
pub fn repair_bio(tags: &[LabelTag]) -> Vec<LabelTag> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev = LabelTag::O;
    for &tag in tags {
        let fixed = if tag == LabelTag::I && prev == LabelTag::O {
            LabelTag::B
        } else {
            tag
        };
        out.push(fixed);
        prev = fixed;
    }
    out
}
