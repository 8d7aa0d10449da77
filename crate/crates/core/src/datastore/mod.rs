//! Key-value datastore of whitened token embeddings and their gold tags.
//!
//! Keys live in one flat `f32` buffer; distances are squared L2 computed in
//! `f64`. Two search paths share the same distance kernel and ordering rule
//! (ascending distance, then ascending entry index):
//!
//! * [`Datastore::exact_search`] scans every entry.
//! * [`Datastore::clustered_search`] scans only the member lists of the
//!   `nprobe` centroids nearest to the query (inverted-file search).
//!
//! Queries are always passed raw; the store applies its own whitening.

mod kmeans;
mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{Embedding, LabelTag, Sentence};
use crate::whitening::{self, WhiteningError, WhiteningModel};

pub use persist::{load_datastore, read_datastore, save_datastore, write_datastore, NDS_MAGIC, NDS_VERSION};

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("no tokens to build a datastore from")]
    EmptyInput,
    #[error("datastore is empty")]
    EmptyStore,
    #[error("embedding dimension {found} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Whitening(#[from] WhiteningError),
    #[error("datastore has no clustered index")]
    NoCentroids,
    #[error("invalid datastore config: {0}")]
    InvalidConfig(String),
    #[error("too many source datasets ({0}); at most 65535 are supported")]
    TooManySources(usize),
    #[error("not an NDS1 file (magic {0:?})")]
    MagicMismatch([u8; 4]),
    #[error("unsupported NDS version {0}")]
    VersionMismatch(u32),
    #[error("corrupt datastore file: {0}")]
    CorruptFile(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatastoreConfig {
    pub use_whitening: bool,
    /// Requested centroid count; clamped to `max(1, N / 4)` at build time.
    pub ncentroids: usize,
    /// Centroid lists scanned per query; clamped to `ncentroids`.
    pub nprobe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for DatastoreConfig {
    fn default() -> Self {
        Self {
            use_whitening: true,
            ncentroids: 4096,
            nprobe: 32,
            kmeans_iters: 25,
            seed: 0,
        }
    }
}

impl DatastoreConfig {
    fn validate(&self) -> Result<(), DatastoreError> {
        if self.ncentroids == 0 || self.nprobe == 0 || self.kmeans_iters == 0 {
            return Err(DatastoreError::InvalidConfig(
                "ncentroids, nprobe and kmeans_iters must be positive".into(),
            ));
        }
        if self.ncentroids > u32::MAX as usize || self.nprobe > u32::MAX as usize {
            return Err(DatastoreError::InvalidConfig("counts must fit in u32".into()));
        }
        Ok(())
    }

    /// The config actually used for a store of `n` entries.
    pub fn clamped(&self, n: usize) -> Self {
        let ncentroids = self.ncentroids.min((n / 4).max(1));
        Self {
            ncentroids,
            nprobe: self.nprobe.min(ncentroids),
            ..*self
        }
    }
}

/// Which search path to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Exact,
    Clustered,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(SearchMode::Exact),
            "clustered" => Ok(SearchMode::Clustered),
            other => Err(format!("unknown search mode {other:?} (expected exact or clustered)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub entry_index: usize,
    /// Squared L2 distance in whitened space.
    pub distance: f64,
    pub value: LabelTag,
    pub source: Arc<str>,
}

/// Borrowed view of one stored entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatastoreEntry<'a> {
    pub key: &'a [f32],
    pub value: LabelTag,
    pub source: &'a str,
    /// (sentence index, token index) within the source stream.
    pub position: (u32, u32),
}

/// Inverted-file index: centroids plus the entries assigned to each.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ClusterIndex {
    pub(crate) centroids: Vec<f32>,
    pub(crate) lists: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    pub(crate) dim: usize,
    pub(crate) keys: Vec<f32>,
    pub(crate) values: Vec<LabelTag>,
    pub(crate) source_ids: Vec<u16>,
    pub(crate) sources: Vec<Arc<str>>,
    pub(crate) positions: Vec<(u32, u32)>,
    pub(crate) whitening: Option<WhiteningModel>,
    pub(crate) index: Option<ClusterIndex>,
    pub(crate) config: DatastoreConfig,
}

/// Builds a store from every token of every stream, O tags included.
///
/// With whitening enabled, one model is fitted on the union of all incoming
/// keys; its parameters are rounded to `f32` before use so a saved store
/// reproduces query results exactly after loading.
pub fn build_datastore(
    streams: &[(String, Vec<Sentence>)],
    config: DatastoreConfig,
) -> Result<Datastore, DatastoreError> {
    config.validate()?;
    if streams.len() > u16::MAX as usize {
        return Err(DatastoreError::TooManySources(streams.len()));
    }
    let dim = streams
        .iter()
        .flat_map(|(_, s)| s.iter())
        .flat_map(|s| s.tokens.first())
        .map(|t| t.embedding.dim())
        .next()
        .ok_or(DatastoreError::EmptyInput)?;

    let mut raw: Vec<&[f64]> = Vec::new();
    let mut values = Vec::new();
    let mut source_ids = Vec::new();
    let mut positions = Vec::new();
    let mut sources: Vec<Arc<str>> = Vec::with_capacity(streams.len());
    for (source_idx, (id, sentences)) in streams.iter().enumerate() {
        sources.push(Arc::from(id.as_str()));
        for (s_idx, sentence) in sentences.iter().enumerate() {
            for (t_idx, token) in sentence.tokens.iter().enumerate() {
                if token.embedding.dim() != dim {
                    return Err(DatastoreError::DimensionMismatch {
                        expected: dim,
                        found: token.embedding.dim(),
                    });
                }
                raw.push(token.embedding.as_slice());
                values.push(token.gold);
                source_ids.push(source_idx as u16);
                positions.push((s_idx as u32, t_idx as u32));
            }
        }
    }
    let n = raw.len();
    if n == 0 {
        return Err(DatastoreError::EmptyInput);
    }

    let whitening = if config.use_whitening {
        let model = whitening::fit_from_rows(raw.iter().copied(), n, whitening::DEFAULT_RANK_EPS)?;
        Some(model.to_f32_precision())
    } else {
        None
    };

    let mut keys = Vec::with_capacity(n * dim);
    match &whitening {
        Some(model) => {
            let mut buf = vec![0.0; dim];
            for row in &raw {
                model.apply_into(row, &mut buf);
                keys.extend(buf.iter().map(|&v| v as f32));
            }
        }
        None => {
            for row in &raw {
                keys.extend(row.iter().map(|&v| v as f32));
            }
        }
    }

    let config = config.clamped(n);
    let index = build_index(&keys, dim, &config);
    Ok(Datastore {
        dim,
        keys,
        values,
        source_ids,
        sources,
        positions,
        whitening,
        index: Some(index),
        config,
    })
}

fn build_index(keys: &[f32], dim: usize, config: &DatastoreConfig) -> ClusterIndex {
    let trained = kmeans::train(keys, dim, config.ncentroids, config.kmeans_iters, config.seed);
    // assignment uses the f32 centroids that get persisted
    let centroids: Vec<f32> = trained.iter().map(|&v| v as f32).collect();
    let centroids_f64: Vec<f64> = centroids.iter().map(|&v| f64::from(v)).collect();
    let mut lists = vec![Vec::new(); config.ncentroids];
    for (i, (c, _)) in kmeans::assign(keys, dim, &centroids_f64).into_iter().enumerate() {
        lists[c as usize].push(i as u32);
    }
    ClusterIndex { centroids, lists }
}

#[inline]
pub(crate) fn sq_dist_f32(query: &[f64], key: &[f32]) -> f64 {
    query
        .iter()
        .zip(key)
        .map(|(&q, &k)| {
            let d = q - f64::from(k);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    index: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

/// Keeps the `k` smallest candidates seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

impl Datastore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &DatastoreConfig {
        &self.config
    }

    pub fn whitening(&self) -> Option<&WhiteningModel> {
        self.whitening.as_ref()
    }

    pub fn has_centroids(&self) -> bool {
        self.index.is_some()
    }

    pub fn ncentroids(&self) -> usize {
        self.index.as_ref().map_or(0, |ix| ix.lists.len())
    }

    /// Member lists of the clustered index, one per centroid.
    pub fn cluster_lists(&self) -> Option<&[Vec<u32>]> {
        self.index.as_ref().map(|ix| ix.lists.as_slice())
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().map(|s| s.as_ref())
    }

    pub fn entry(&self, i: usize) -> DatastoreEntry<'_> {
        DatastoreEntry {
            key: &self.keys[i * self.dim..(i + 1) * self.dim],
            value: self.values[i],
            source: &self.sources[self.source_ids[i] as usize],
            position: self.positions[i],
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = DatastoreEntry<'_>> {
        (0..self.len()).map(|i| self.entry(i))
    }

    /// Entry count per source dataset, in source order.
    pub fn source_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.sources.iter().map(|s| (s.to_string(), 0)).collect();
        for &sid in &self.source_ids {
            *counts.get_mut(self.sources[sid as usize].as_ref()).expect("source registered") += 1;
        }
        counts
    }

    /// Copy without the clustered index.
    pub fn without_index(&self) -> Self {
        Self {
            index: None,
            ..self.clone()
        }
    }

    /// Applies the store's whitening to a raw query.
    pub fn prepare_query(&self, query: &[f64]) -> Result<Vec<f64>, DatastoreError> {
        if query.len() != self.dim {
            return Err(DatastoreError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        Ok(match &self.whitening {
            Some(model) => {
                let mut out = vec![0.0; self.dim];
                model.apply_into(query, &mut out);
                out
            }
            None => query.to_vec(),
        })
    }

    #[inline]
    fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    fn to_neighbors(&self, found: Vec<Candidate>) -> Vec<Neighbor> {
        found
            .into_iter()
            .map(|c| {
                let i = c.index as usize;
                Neighbor {
                    entry_index: i,
                    distance: c.distance,
                    value: self.values[i],
                    source: Arc::clone(&self.sources[self.source_ids[i] as usize]),
                }
            })
            .collect()
    }

    /// The `min(k, N)` nearest entries to a raw query.
    pub fn exact_search(&self, query: &Embedding, k: usize) -> Result<Vec<Neighbor>, DatastoreError> {
        let q = self.prepare_query(query.as_slice())?;
        self.exact_search_prepared(&q, k)
    }

    /// Exact search for a query that is already in whitened space.
    pub fn exact_search_prepared(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor>, DatastoreError> {
        if self.is_empty() {
            return Err(DatastoreError::EmptyStore);
        }
        let mut top = TopK::new(k.min(self.len()));
        for i in 0..self.len() {
            top.offer(Candidate {
                distance: sq_dist_f32(q, self.key(i)),
                index: i as u32,
            });
        }
        Ok(self.to_neighbors(top.into_sorted()))
    }

    /// Up to `k` nearest entries among the `nprobe` closest centroid lists.
    pub fn clustered_search(&self, query: &Embedding, k: usize) -> Result<Vec<Neighbor>, DatastoreError> {
        let q = self.prepare_query(query.as_slice())?;
        self.clustered_search_prepared(&q, k)
    }

    pub fn clustered_search_prepared(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor>, DatastoreError> {
        let index = self.index.as_ref().ok_or(DatastoreError::NoCentroids)?;
        if self.is_empty() {
            return Err(DatastoreError::EmptyStore);
        }
        let nlist = index.lists.len();
        let nprobe = self.config.nprobe.min(nlist);
        let mut probes = TopK::new(nprobe);
        for c in 0..nlist {
            probes.offer(Candidate {
                distance: sq_dist_f32(q, &index.centroids[c * self.dim..(c + 1) * self.dim]),
                index: c as u32,
            });
        }
        let mut top = TopK::new(k.min(self.len()));
        for probe in probes.into_sorted() {
            for &i in &index.lists[probe.index as usize] {
                top.offer(Candidate {
                    distance: sq_dist_f32(q, self.key(i as usize)),
                    index: i,
                });
            }
        }
        Ok(self.to_neighbors(top.into_sorted()))
    }

    pub fn search(&self, query: &Embedding, k: usize, mode: SearchMode) -> Result<Vec<Neighbor>, DatastoreError> {
        match mode {
            SearchMode::Exact => self.exact_search(query, k),
            SearchMode::Clustered => self.clustered_search(query, k),
        }
    }

    pub fn search_prepared(&self, q: &[f64], k: usize, mode: SearchMode) -> Result<Vec<Neighbor>, DatastoreError> {
        match mode {
            SearchMode::Exact => self.exact_search_prepared(q, k),
            SearchMode::Clustered => self.clustered_search_prepared(q, k),
        }
    }

    /// Same store with a different probe count (clamped to the centroid count).
    pub fn with_nprobe(&self, nprobe: usize) -> Self {
        let mut store = self.clone();
        store.config.nprobe = nprobe.max(1).min(self.ncentroids().max(1));
        store
    }
}

/// Tallies the source dataset of every neighbor retrieved (clustered search)
/// for each query. Every source of the store appears in the map, possibly
/// with count zero.
pub fn provenance_counts(
    store: &Datastore,
    queries: &[Embedding],
    k: usize,
) -> Result<BTreeMap<String, usize>, DatastoreError> {
    provenance_counts_with_mode(store, queries, k, SearchMode::Clustered)
}

pub fn provenance_counts_with_mode(
    store: &Datastore,
    queries: &[Embedding],
    k: usize,
    mode: SearchMode,
) -> Result<BTreeMap<String, usize>, DatastoreError> {
    let mut counts: BTreeMap<String, usize> = store.sources().map(|s| (s.to_string(), 0)).collect();
    for q in queries {
        for n in store.search(q, k, mode)? {
            *counts.entry(n.source.to_string()).or_default() += 1;
        }
    }
    Ok(counts)
}
