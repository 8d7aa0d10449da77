//! Seeded synthetic corpora with a long-tailed skill vocabulary.
//!
//! Geometry:
//! * one shift vector per entity tag (B, I), norm `tag_separation`, drawn
//!   from `geometry_seed`;
//! * one centroid per skill type, `N(0, skill_scale^2 I)`, plus a small
//!   per-position offset for each token of the skill, drawn from
//!   `skill_seed`.
//!
//! Two configs that differ only in `skill_seed` describe datasets with the
//! same notion of what a skill looks like but different skill clusters.
//!
//! A token of skill `s` at position `j` is embedded at
//! `shift[tag] + centroid[s] + offset[s][j] + cluster_spread * N(0, I)`;
//! O tokens are drawn from `N(0, I)`. Skill types are sampled from a Zipf
//! law over `skill_vocab_size` ranks.
//!
//! Base distributions put a peak of mass `U(0.5, 0.95)` on the gold tag, or
//! with probability `base_noise` on a uniformly chosen wrong tag. Text,
//! embeddings and base noise use separate random streams, so changing
//! `base_noise` leaves the tokens and embeddings untouched.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use thiserror::Error;

use crate::model::{Distribution3, Embedding, LabelTag, Sentence, TokenRecord};

const FILLER: &[&str] = &[
    "the", "and", "with", "for", "our", "you", "will", "team", "role", "work", "in", "to", "of", "a", "we",
    "are", "looking", "strong", "candidate", "experience", "who", "can", "on", "as", "be", "an", "at",
    "company", "position", "join", "growing", "environment", "is", "offer", "daily", "new",
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_train_sentences: usize,
    pub n_dev_sentences: usize,
    pub n_test_sentences: usize,
    pub tokens_per_sentence: usize,
    pub cluster_spread: f64,
    /// Probability that a token's base distribution peaks on a wrong tag.
    pub base_noise: f64,
    pub skill_vocab_size: usize,
    pub zipf_exponent: f64,
    /// Chance of starting a skill at a free position.
    pub skill_rate: f64,
    pub max_skill_len: usize,
    pub tag_separation: f64,
    pub skill_scale: f64,
    pub seed: u64,
    pub geometry_seed: u64,
    pub skill_seed: u64,
    pub dataset_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            n_train_sentences: 2000,
            n_dev_sentences: 500,
            n_test_sentences: 500,
            tokens_per_sentence: 12,
            cluster_spread: 0.5,
            base_noise: 0.3,
            skill_vocab_size: 200,
            zipf_exponent: 1.5,
            skill_rate: 0.25,
            max_skill_len: 3,
            tag_separation: 10.0,
            skill_scale: 1.5,
            seed: 0,
            geometry_seed: 0,
            skill_seed: 0,
            dataset_id: "synth".into(),
        }
    }
}

macro_rules! kv_fields {
    ($($field:ident),* $(,)?) => {
        const KV_KEYS: &[&str] = &[$(stringify!($field)),*];

        fn set_kv(cfg: &mut SynthConfig, key: &str, value: &str) -> Result<(), String> {
            match key {
                $(stringify!($field) => {
                    cfg.$field = value
                        .parse()
                        .map_err(|e| format!("bad value {value:?} for {key}: {e}"))?;
                })*
                other => return Err(format!("unknown key {other:?}")),
            }
            Ok(())
        }

        fn kv_lines(cfg: &SynthConfig) -> String {
            let mut s = String::new();
            $(let _ = writeln!(s, "{}={}", stringify!($field), cfg.$field);)*
            s
        }
    };
}

kv_fields!(
    dim,
    n_train_sentences,
    n_dev_sentences,
    n_test_sentences,
    tokens_per_sentence,
    cluster_spread,
    base_noise,
    skill_vocab_size,
    zipf_exponent,
    skill_rate,
    max_skill_len,
    tag_separation,
    skill_scale,
    seed,
    geometry_seed,
    skill_seed,
    dataset_id,
);

impl SynthConfig {
    pub fn keys() -> &'static [&'static str] {
        KV_KEYS
    }

    /// Parses `key=value` lines on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self, SynthError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SynthError::Parse {
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|msg| SynthError::Parse { line: i + 1, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        set_kv(self, key, value)
    }

    pub fn to_kv_string(&self) -> String {
        kv_lines(self)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.dim == 0
            || self.n_train_sentences == 0
            || self.n_test_sentences == 0
            || self.tokens_per_sentence == 0
            || self.skill_vocab_size == 0
            || self.max_skill_len == 0
        {
            return bad("counts must be positive");
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster_spread must be a non-negative real");
        }
        if !(0.0..=1.0).contains(&self.base_noise) {
            return bad("base_noise must lie in [0, 1]");
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be positive");
        }
        if !(0.0..=1.0).contains(&self.skill_rate) {
            return bad("skill_rate must lie in [0, 1]");
        }
        if !(self.tag_separation.is_finite() && self.skill_scale.is_finite()) {
            return bad("geometry scales must be finite");
        }
        Ok(())
    }
}

/// A generated corpus split three ways.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

struct Geometry {
    tag_shift: [Vec<f64>; 2],
    centroids: Vec<Vec<f64>>,
    offsets: Vec<Vec<Vec<f64>>>,
    lengths: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

impl Geometry {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.geometry_seed);
        let mut shift = || {
            let v = gaussian(&mut rng, cfg.dim, 1.0);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * cfg.tag_separation / norm).collect::<Vec<_>>()
        };
        let tag_shift = [shift(), shift()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.skill_seed);
        let mut centroids = Vec::with_capacity(cfg.skill_vocab_size);
        let mut offsets = Vec::with_capacity(cfg.skill_vocab_size);
        let mut lengths = Vec::with_capacity(cfg.skill_vocab_size);
        for _ in 0..cfg.skill_vocab_size {
            let len = rng.random_range(1..=cfg.max_skill_len.min(cfg.tokens_per_sentence));
            centroids.push(gaussian(&mut rng, cfg.dim, cfg.skill_scale));
            offsets.push((0..len).map(|_| gaussian(&mut rng, cfg.dim, 0.3 * cfg.skill_scale)).collect());
            lengths.push(len);
        }
        Self {
            tag_shift,
            centroids,
            offsets,
            lengths,
        }
    }

    fn skill_token(&self, skill: usize, pos: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let tag_idx = usize::from(pos > 0);
        let noise = gaussian(rng, self.centroids[skill].len(), spread);
        (0..noise.len())
            .map(|d| self.tag_shift[tag_idx][d] + self.centroids[skill][d] + self.offsets[skill][pos][d] + noise[d])
            .collect()
    }
}

fn skill_text(skill: usize, pos: usize) -> String {
    format!("sk{skill}{}", (b'a' + (pos % 26) as u8) as char)
}

fn base_distribution(gold: LabelTag, noise: f64, rng: &mut ChaCha8Rng) -> Distribution3 {
    let peak_tag = if rng.random::<f64>() < noise {
        let wrong: Vec<LabelTag> = LabelTag::ALL.into_iter().filter(|&t| t != gold).collect();
        wrong[rng.random_range(0..wrong.len())]
    } else {
        gold
    };
    let peak = rng.random_range(0.5..0.95);
    let split = rng.random::<f64>();
    let rest = 1.0 - peak;
    let mut p = [0.0; 3];
    p[peak_tag.index()] = peak;
    let others: Vec<usize> = (0..3).filter(|&i| i != peak_tag.index()).collect();
    p[others[0]] = rest * split;
    p[others[1]] = rest - p[others[0]];
    let total: f64 = p.iter().sum();
    Distribution3::from_array(p.map(|v| v / total)).expect("constructed distribution is valid")
}

fn generate_split(
    cfg: &SynthConfig,
    geo: &Geometry,
    zipf: &Zipf<f64>,
    n_sentences: usize,
    stream: u64,
) -> Vec<Sentence> {
    let mut text_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    text_rng.set_stream(2 * stream);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2 * stream + 1);

    let mut out = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let mut tokens = Vec::with_capacity(cfg.tokens_per_sentence);
        while tokens.len() < cfg.tokens_per_sentence {
            let room = cfg.tokens_per_sentence - tokens.len();
            let start_skill = text_rng.random::<f64>() < cfg.skill_rate;
            let skill = zipf.sample(&mut text_rng) as usize - 1;
            if start_skill && geo.lengths[skill] <= room {
                for pos in 0..geo.lengths[skill] {
                    let gold = if pos == 0 { LabelTag::B } else { LabelTag::I };
                    let emb = geo.skill_token(skill, pos, cfg.cluster_spread, &mut text_rng);
                    tokens.push((skill_text(skill, pos), gold, emb));
                }
            } else {
                let word = FILLER[text_rng.random_range(0..FILLER.len())];
                tokens.push((word.to_string(), LabelTag::O, gaussian(&mut text_rng, cfg.dim, 1.0)));
            }
        }
        let records = tokens
            .into_iter()
            .map(|(text, gold, emb)| {
                let base = base_distribution(gold, cfg.base_noise, &mut noise_rng);
                TokenRecord::new(text, gold, Embedding::new(emb).expect("finite"), base).expect("non-empty text")
            })
            .collect();
        out.push(Sentence::new(records, cfg.dataset_id.clone()).expect("non-empty sentence"));
    }
    out
}

/// Train, dev and test splits. Train and test are identical to [`generate`].
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let geo = Geometry::new(cfg);
    let zipf = Zipf::new(cfg.skill_vocab_size as f64, cfg.zipf_exponent)
        .map_err(|e| SynthError::InvalidConfig(format!("zipf: {e}")))?;
    Ok(SynthCorpus {
        train: generate_split(cfg, &geo, &zipf, cfg.n_train_sentences, 0),
        test: generate_split(cfg, &geo, &zipf, cfg.n_test_sentences, 1),
        dev: generate_split(cfg, &geo, &zipf, cfg.n_dev_sentences, 2),
    })
}

/// Train and test splits of a seeded synthetic corpus.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<Sentence>, Vec<Sentence>), SynthError> {
    let corpus = generate_corpus(cfg)?;
    Ok((corpus.train, corpus.test))
}

/// Skill type id encoded in a synthetic token text, if any.
pub fn skill_id_of(text: &str) -> Option<usize> {
    let rest = text.strip_prefix("sk")?;
    rest[..rest.len().checked_sub(1)?].parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::repair_bio;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train_sentences: 50,
            n_dev_sentences: 10,
            n_test_sentences: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn tags_are_bio_valid_and_sizes_match() {
        let cfg = small();
        let (train, test) = generate(&cfg).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 20);
        for s in train.iter().chain(&test) {
            assert_eq!(s.len(), cfg.tokens_per_sentence);
            let tags = s.gold_tags();
            assert_eq!(repair_bio(&tags), tags);
            assert_eq!(s.dataset_id, "synth");
        }
    }

    #[test]
    fn zero_noise_means_gold_argmax() {
        let (train, _) = generate(&SynthConfig { base_noise: 0.0, ..small() }).unwrap();
        for t in train.iter().flat_map(|s| &s.tokens) {
            assert_eq!(t.base.argmax(), t.gold);
        }
    }

    #[test]
    fn full_noise_means_wrong_argmax() {
        let (train, _) = generate(&SynthConfig { base_noise: 1.0, ..small() }).unwrap();
        for t in train.iter().flat_map(|s| &s.tokens) {
            assert_ne!(t.base.argmax(), t.gold);
        }
    }

    #[test]
    fn noise_level_does_not_move_embeddings() {
        let (a, _) = generate(&SynthConfig { base_noise: 0.1, ..small() }).unwrap();
        let (b, _) = generate(&SynthConfig { base_noise: 0.6, ..small() }).unwrap();
        for (x, y) in a.iter().flat_map(|s| &s.tokens).zip(b.iter().flat_map(|s| &s.tokens)) {
            assert_eq!((&x.text, x.gold, &x.embedding), (&y.text, y.gold, &y.embedding));
        }
    }

    #[test]
    fn kv_round_trip_and_errors() {
        let cfg = SynthConfig {
            seed: 9,
            dataset_id: "green".into(),
            base_noise: 0.25,
            ..SynthConfig::default()
        };
        assert_eq!(SynthConfig::from_kv_str(&cfg.to_kv_string()).unwrap(), cfg);
        assert!(matches!(
            SynthConfig::from_kv_str("dim=4\nnope=1\n"),
            Err(SynthError::Parse { line: 2, .. })
        ));
        assert!(matches!(SynthConfig::from_kv_str("base_noise=2"), Err(SynthError::InvalidConfig(_))));
        assert_eq!(SynthConfig::keys().len(), 17);
    }

    #[test]
    fn skill_ids_parse() {
        assert_eq!(skill_id_of("sk12a"), Some(12));
        assert_eq!(skill_id_of("sk0c"), Some(0));
        assert_eq!(skill_id_of("team"), None);
    }
}
