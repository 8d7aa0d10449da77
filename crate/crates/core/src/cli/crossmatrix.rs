//! Cross-dataset transfer matrix.
//!
//! Cell `(train, eval)` needs two files: the store `<stores>/<train>.nds`
//! and a token stream whose file stem is `<train>__<eval>`, holding the
//! `eval` test set as encoded by the model trained on `train`. Cells with
//! either file missing are reported as absent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use super::pipeline;
use crate::datastore::{load_datastore, SearchMode};
use crate::fusion::FusionParams;
use crate::stream::read_token_stream;

pub const CELL_SEPARATOR: &str = "__";

/// Fusion parameters plus search mode, read from `key=value` lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub fusion: FusionParams,
    pub mode: SearchMode,
}

impl RunParams {
    /// Keys: `k`, `lambda`, `temperature` (required) and `mode`
    /// (`exact` or `clustered`, default `clustered`). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut k = None;
        let mut lambda = None;
        let mut temperature = None;
        let mut mode = SearchMode::Clustered;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("params line {}: expected key=value", i + 1))?;
            let value = value.trim();
            match key.trim() {
                "k" => k = Some(value.parse::<usize>().with_context(|| format!("bad k {value:?}"))?),
                "lambda" => lambda = Some(value.parse::<f64>().with_context(|| format!("bad lambda {value:?}"))?),
                "temperature" => {
                    temperature = Some(value.parse::<f64>().with_context(|| format!("bad temperature {value:?}"))?)
                }
                "mode" => mode = value.parse().map_err(anyhow::Error::msg)?,
                other => bail!("params line {}: unknown key {other:?}", i + 1),
            }
        }
        let (Some(k), Some(lambda), Some(temperature)) = (k, lambda, temperature) else {
            bail!("params file must set k, lambda and temperature");
        };
        Ok(Self {
            fusion: FusionParams::new(k, lambda, temperature)?,
            mode,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }
}

/// Splits a `<train>__<eval>` stem.
pub fn cell_names(path: &Path) -> Option<(String, String)> {
    let stem = path.file_stem()?.to_str()?;
    let (train, eval) = stem.split_once(CELL_SEPARATOR)?;
    if train.is_empty() || eval.is_empty() {
        return None;
    }
    Some((train.to_string(), eval.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellScore {
    pub vanilla: f64,
    pub fused: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossMatrix {
    /// Sorted dataset names; rows are train sources, columns eval sets.
    pub names: Vec<String>,
    pub cells: Vec<Vec<Option<CellScore>>>,
}

impl CrossMatrix {
    pub fn get(&self, train: &str, eval: &str) -> Option<CellScore> {
        let r = self.names.iter().position(|n| n == train)?;
        let c = self.names.iter().position(|n| n == eval)?;
        self.cells[r][c]
    }

    /// Two blocks, `vanilla` then `+knn`; diagonal cells carry a `*`,
    /// absent cells print `-`.
    pub fn to_table(&self) -> String {
        let width = self.names.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut s = String::new();
        for (label, pick) in [("vanilla", false), ("+knn", true)] {
            let _ = write!(s, "{label:<width$}");
            for n in &self.names {
                let _ = write!(s, " {n:>width$}");
            }
            s.push('\n');
            for (r, train) in self.names.iter().enumerate() {
                let _ = write!(s, "{train:<width$}");
                for c in 0..self.names.len() {
                    let cell = match self.cells[r][c] {
                        Some(score) => {
                            let v = if pick { score.fused } else { score.vanilla };
                            format!("{:.2}{}", 100.0 * v, if r == c { "*" } else { "" })
                        }
                        None => "-".to_string(),
                    };
                    let _ = write!(s, " {cell:>width$}");
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }

    /// `block<TAB>train<TAB>eval<TAB>f1<TAB>diagonal`, absent cells as `absent`.
    pub fn records(&self) -> String {
        let mut s = String::new();
        for (label, pick) in [("vanilla", false), ("knn", true)] {
            for (r, train) in self.names.iter().enumerate() {
                for (c, eval) in self.names.iter().enumerate() {
                    let value = match self.cells[r][c] {
                        Some(score) => format!("{:.6}", if pick { score.fused } else { score.vanilla }),
                        None => "absent".to_string(),
                    };
                    let _ = writeln!(s, "{label}\t{train}\t{eval}\t{value}\t{}", u8::from(r == c));
                }
            }
        }
        s
    }
}

/// Runs every cell whose inputs exist; files whose stems do not follow the
/// `<train>__<eval>` pattern are an error.
pub fn cross_matrix(stores: &Path, datasets: &[PathBuf], params: &RunParams) -> Result<CrossMatrix> {
    let mut inputs: BTreeMap<(String, String), PathBuf> = BTreeMap::new();
    let mut names = BTreeSet::new();
    for path in datasets {
        let (train, eval) = cell_names(path)
            .with_context(|| format!("{}: file stem must be <train>{CELL_SEPARATOR}<eval>", path.display()))?;
        names.insert(train.clone());
        names.insert(eval.clone());
        if inputs.insert((train, eval), path.clone()).is_some() {
            bail!("duplicate cell input {}", path.display());
        }
    }
    let names: Vec<String> = names.into_iter().collect();

    let work: Vec<(usize, usize)> = (0..names.len())
        .flat_map(|r| (0..names.len()).map(move |c| (r, c)))
        .collect();
    let scores: Vec<Option<CellScore>> = work
        .par_iter()
        .map(|&(r, c)| {
            let Some(data) = inputs.get(&(names[r].clone(), names[c].clone())) else {
                return Ok(None);
            };
            let store_path = stores.join(format!("{}.nds", names[r]));
            if !store_path.is_file() || !data.is_file() {
                return Ok(None);
            }
            run_cell(&store_path, data, params).map(Some)
        })
        .collect::<Result<_>>()?;

    let cells = scores.chunks(names.len().max(1)).map(<[_]>::to_vec).collect();
    Ok(CrossMatrix { names, cells })
}

fn run_cell(store_path: &Path, data: &Path, params: &RunParams) -> Result<CellScore> {
    let store = load_datastore(store_path).with_context(|| format!("loading {}", store_path.display()))?;
    let sentences = read_token_stream(data).with_context(|| format!("reading {}", data.display()))?;
    let vanilla = pipeline::evaluate(&sentences, &pipeline::base_tags(&sentences), None, None)?;
    let predictions = pipeline::infer_corpus(&store, &sentences, &params.fusion, params.mode)?;
    let fused = pipeline::evaluate(&sentences, &pipeline::predicted_tags(&predictions), None, None)?;
    Ok(CellScore {
        vanilla: vanilla.f1,
        fused: fused.f1,
    })
}
