//! Whitening transformation for token embeddings.
//!
//! Fitting computes the mean `mu` and the population covariance
//! `cov = (1/N) sum (x - mu)^T (x - mu)`, decomposes `cov = U diag(s) U^T`
//! by SVD and sets `W = U diag(s)^(-1/2)`. Applying maps a row vector `x` to
//! `(x - mu) W`, which gives the fitting set zero mean and identity
//! covariance. All columns of `W` are kept.

use nalgebra::{DMatrix, SVD};
use thiserror::Error;

use crate::model::Embedding;

/// Singular values below this fraction of the largest one are treated as zero.
pub const DEFAULT_RANK_EPS: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum WhiteningError {
    #[error("whitening needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("covariance is rank deficient: singular value {smallest:e} < {threshold:e}; reduce the dimension or add samples")]
    RankDeficient { smallest: f64, threshold: f64 },
    #[error("non-finite value in sample {0}")]
    NonFinite(usize),
    #[error("whitening matrix must be {dim}x{dim} with {dim}-dim mean")]
    BadShape { dim: usize },
}

/// A fitted whitening transform: mean vector plus a `dim x dim` matrix stored
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    mean: Vec<f64>,
    transform: Vec<f64>,
    dim: usize,
}

impl WhiteningModel {
    pub fn from_parts(mean: Vec<f64>, transform: Vec<f64>) -> Result<Self, WhiteningError> {
        let dim = mean.len();
        if dim == 0 || transform.len() != dim * dim {
            return Err(WhiteningError::BadShape { dim });
        }
        if mean.iter().chain(&transform).any(|v| !v.is_finite()) {
            return Err(WhiteningError::NonFinite(0));
        }
        Ok(Self { mean, transform, dim })
    }

    pub fn identity(dim: usize) -> Self {
        let mut transform = vec![0.0; dim * dim];
        for i in 0..dim {
            transform[i * dim + i] = 1.0;
        }
        Self {
            mean: vec![0.0; dim],
            transform,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `dim x dim` matrix.
    pub fn transform(&self) -> &[f64] {
        &self.transform
    }

    /// Copy with every parameter rounded to `f32`, the precision used on disk.
    pub fn to_f32_precision(&self) -> Self {
        let round = |v: &f64| f64::from(*v as f32);
        Self {
            mean: self.mean.iter().map(round).collect(),
            transform: self.transform.iter().map(round).collect(),
            dim: self.dim,
        }
    }

    /// `(x - mu) W` written into `out`. Both slices must have length `dim`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        for (i, (&xi, &mi)) in x.iter().zip(&self.mean).enumerate() {
            let centered = xi - mi;
            let row = &self.transform[i * self.dim..(i + 1) * self.dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += centered * w;
            }
        }
    }

    pub fn apply_slice(&self, x: &[f64]) -> Result<Vec<f64>, WhiteningError> {
        if x.len() != self.dim {
            return Err(WhiteningError::DimensionMismatch {
                index: 0,
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        Ok(out)
    }
}

pub fn fit_whitening(keys: &[Embedding]) -> Result<WhiteningModel, WhiteningError> {
    fit_whitening_with_eps(keys, DEFAULT_RANK_EPS)
}

pub fn fit_whitening_with_eps(keys: &[Embedding], rank_eps: f64) -> Result<WhiteningModel, WhiteningError> {
    fit_from_rows(keys.iter().map(Embedding::as_slice), keys.len(), rank_eps)
}

/// Fits from any sequence of equally sized rows.
pub(crate) fn fit_from_rows<'a, I>(rows: I, n: usize, rank_eps: f64) -> Result<WhiteningModel, WhiteningError>
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    if n < 2 {
        return Err(WhiteningError::TooFewSamples(n));
    }
    let dim = rows.clone().next().map_or(0, <[f64]>::len);
    for (index, row) in rows.clone().enumerate() {
        if row.len() != dim {
            return Err(WhiteningError::DimensionMismatch {
                index,
                expected: dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(WhiteningError::NonFinite(index));
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut mean = vec![0.0; dim];
    for row in rows.clone() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_n);

    // upper triangle of the scatter matrix, mirrored afterwards
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for row in rows {
        for (c, (&v, &m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] * inv_n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let svd = SVD::new(cov, true, false);
    let u = svd.u.expect("SVD computed with U");
    let singular = svd.singular_values;
    let largest = singular.max();
    let smallest = singular.min();
    let threshold = rank_eps * largest;
    if !(largest > 0.0) || smallest < threshold {
        return Err(WhiteningError::RankDeficient { smallest, threshold });
    }

    let mut transform = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            transform[i * dim + j] = u[(i, j)] / singular[j].sqrt();
        }
    }
    if transform.iter().any(|v| !v.is_finite()) {
        return Err(WhiteningError::RankDeficient { smallest, threshold });
    }
    Ok(WhiteningModel { mean, transform, dim })
}

pub fn apply_whitening(model: &WhiteningModel, x: &Embedding) -> Result<Embedding, WhiteningError> {
    let out = model.apply_slice(x.as_slice())?;
    Ok(Embedding::new(out).expect("whitening of finite input is finite"))
}
