//! Grid search of `(k, λ, T)` on a development set.
//!
//! Neighbors are retrieved once per token with exact search at the largest
//! `k` of the grid; smaller `k` values reuse the prefix, which is exactly the
//! exact-search answer for that `k`.

use std::collections::HashSet;

use anyhow::{bail, Result};
use rayon::prelude::*;

use crate::datastore::Datastore;
use crate::evaluation::{self, SpanCounts};
use crate::fusion::{self, FusionParams};
use crate::model::{Distribution3, LabelTag, Sentence};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpace {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub temperatures: Vec<f64>,
}

impl Default for SweepSpace {
    fn default() -> Self {
        Self {
            ks: vec![4, 8, 16, 32, 64, 128],
            // 0.10, 0.15, ..., 0.90
            lambdas: (0..=16).map(|i| f64::from(10 + 5 * i) / 100.0).collect(),
            temperatures: vec![0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0],
        }
    }
}

impl SweepSpace {
    /// Sorts and dedups each axis, then validates every value.
    pub fn normalized(mut self) -> Result<Self> {
        self.ks.sort_unstable();
        self.ks.dedup();
        self.lambdas.sort_by(f64::total_cmp);
        self.lambdas.dedup();
        self.temperatures.sort_by(f64::total_cmp);
        self.temperatures.dedup();
        if self.ks.is_empty() || self.lambdas.is_empty() || self.temperatures.is_empty() {
            bail!("sweep space axes must be non-empty");
        }
        for &k in &self.ks {
            for &l in &self.lambdas {
                for &t in &self.temperatures {
                    FusionParams::new(k, l, t)?;
                }
            }
        }
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.ks.len() * self.lambdas.len() * self.temperatures.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub params: FusionParams,
    pub counts: SpanCounts,
}

impl GridPoint {
    pub fn f1(&self) -> f64 {
        self.counts.f1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best: GridPoint,
    /// Every grid point, sorted by `(k, λ, T)`.
    pub grid: Vec<GridPoint>,
}

impl SweepResult {
    pub fn records(&self) -> String {
        let mut out = String::from("k\tlambda\ttemperature\tprecision\trecall\tf1\n");
        for p in &self.grid {
            out.push_str(&format!(
                "{}\t{:.2}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                p.params.k,
                p.params.lambda,
                p.params.temperature,
                p.counts.precision(),
                p.counts.recall(),
                p.f1()
            ));
        }
        out
    }
}

type TokenNeighbors = Vec<(LabelTag, f64)>;

struct DevSentence<'a> {
    sentence: &'a Sentence,
    neighbors: Vec<TokenNeighbors>,
    gold: HashSet<(usize, usize)>,
}

pub fn sweep(store: &Datastore, dev: &[Sentence], space: &SweepSpace) -> Result<SweepResult> {
    let space = space.clone().normalized()?;
    let k_max = *space.ks.last().expect("non-empty");

    let prepared: Result<Vec<DevSentence>> = dev
        .par_iter()
        .map(|sentence| {
            let neighbors = sentence
                .tokens
                .iter()
                .map(|t| {
                    let hits = store.exact_search(&t.embedding, k_max)?;
                    Ok(hits.into_iter().map(|n| (n.value, n.distance)).collect())
                })
                .collect::<Result<Vec<TokenNeighbors>>>()?;
            let gold = evaluation::span_bounds(&fusion::repair_bio(&sentence.gold_tags()))?
                .into_iter()
                .collect();
            Ok(DevSentence {
                sentence,
                neighbors,
                gold,
            })
        })
        .collect();
    let prepared = prepared?;

    let pairs: Vec<(usize, f64)> = space
        .ks
        .iter()
        .flat_map(|&k| space.temperatures.iter().map(move |&t| (k, t)))
        .collect();

    let mut grid: Vec<GridPoint> = pairs
        .par_iter()
        .map(|&(k, t)| score_pair(&prepared, k, t, &space.lambdas))
        .collect::<Result<Vec<Vec<GridPoint>>>>()?
        .into_iter()
        .flatten()
        .collect();

    grid.sort_by(|a, b| {
        a.params
            .k
            .cmp(&b.params.k)
            .then(a.params.lambda.total_cmp(&b.params.lambda))
            .then(a.params.temperature.total_cmp(&b.params.temperature))
    });
    // first maximum in (k, λ, T) order wins ties
    let mut best = grid[0];
    for p in &grid[1..] {
        if p.f1() > best.f1() {
            best = *p;
        }
    }
    Ok(SweepResult { best, grid })
}

fn score_pair(prepared: &[DevSentence], k: usize, temperature: f64, lambdas: &[f64]) -> Result<Vec<GridPoint>> {
    let knn: Vec<Vec<Distribution3>> = prepared
        .iter()
        .map(|d| {
            d.neighbors
                .iter()
                .map(|n| fusion::knn_distribution_from(n[..k.min(n.len())].iter().copied(), temperature))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    lambdas
        .iter()
        .map(|&lambda| {
            let mut counts = SpanCounts::default();
            for (d, p_knn) in prepared.iter().zip(&knn) {
                let tags: Vec<LabelTag> = d
                    .sentence
                    .tokens
                    .iter()
                    .zip(p_knn)
                    .map(|(t, p)| fusion::interpolate(p, &t.base, lambda).map(|f| f.argmax()))
                    .collect::<Result<_, _>>()?;
                let pred: HashSet<(usize, usize)> = evaluation::span_bounds(&fusion::repair_bio(&tags))?
                    .into_iter()
                    .collect();
                let tp = pred.intersection(&d.gold).count();
                counts.tp += tp;
                counts.fp += pred.len() - tp;
                counts.fn_ += d.gold.len() - tp;
            }
            Ok(GridPoint {
                params: FusionParams::new(k, lambda, temperature)?,
                counts,
            })
        })
        .collect()
}
