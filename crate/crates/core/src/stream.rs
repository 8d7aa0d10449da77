//! The ETS1 ("embedded token stream") file format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header:   "ETS1" | version u32 = 1 | dim u32 | label count u32 = 3
//!           | dataset id (u16 length + UTF-8) | sentence count u64
//! sentence: token count u32, then per token:
//!           text (u16 length + UTF-8) | gold u8 | dim x f32 | 3 x f32 (O, B, I)
//! ```

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::binio;
use crate::model::{Distribution3, Embedding, LabelTag, Sentence, TokenRecord};

pub const ETS_MAGIC: [u8; 4] = *b"ETS1";
pub const ETS_VERSION: u32 = 1;
pub const ETS_LABEL_COUNT: u32 = 3;

/// Base distributions whose sum is within this of one are renormalized on read.
pub const READ_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("not an ETS1 stream (magic {0:?})")]
    MagicMismatch([u8; 4]),
    #[error("unsupported ETS version {0}")]
    VersionMismatch(u32),
    #[error("embedding dimension {found} does not match expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
    #[error("base distribution {values:?} in sentence {sentence}, token {token} does not sum to 1")]
    BadDistribution {
        sentence: usize,
        token: usize,
        values: [f32; 3],
    },
    #[error("sentences mix embedding dimensions {0} and {1}")]
    MixedDimensions(usize, usize),
    #[error("sentences mix dataset ids {0:?} and {1:?}")]
    MixedDatasetIds(String, String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
}

fn corrupt_on_eof(e: io::Error) -> StreamError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        StreamError::CorruptRecord("unexpected end of stream".into())
    } else {
        StreamError::IoFailure(e)
    }
}

/// Header fields of an ETS1 stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub dim: usize,
    pub dataset_id: String,
    pub sentence_count: u64,
}

pub fn read_token_stream(path: impl AsRef<Path>) -> Result<Vec<Sentence>, StreamError> {
    let file = File::open(path)?;
    let (_, sentences) = decode_token_stream(BufReader::new(file))?;
    Ok(sentences)
}

/// Reads a stream and also returns its header (useful for the dataset id of
/// an empty stream).
pub fn read_token_stream_with_header(
    path: impl AsRef<Path>,
) -> Result<(StreamHeader, Vec<Sentence>), StreamError> {
    let file = File::open(path)?;
    decode_token_stream(BufReader::new(file))
}

pub fn decode_token_stream<R: Read>(
    mut r: R,
) -> Result<(StreamHeader, Vec<Sentence>), StreamError> {
    let header = read_header(&mut r)?;
    let dim = header.dim;
    if dim == 0 && header.sentence_count > 0 {
        return Err(StreamError::CorruptRecord("dimension 0 with non-empty stream".into()));
    }

    let mut sentences = Vec::new();
    let mut floats = vec![0f32; dim];
    for s_idx in 0..header.sentence_count as usize {
        let n_tokens = r.read_u32::<LittleEndian>().map_err(corrupt_on_eof)? as usize;
        if n_tokens == 0 {
            return Err(StreamError::CorruptRecord(format!("sentence {s_idx} has no tokens")));
        }
        let mut tokens = Vec::with_capacity(n_tokens.min(4096));
        for t_idx in 0..n_tokens {
            let text = binio::read_string_u16(&mut r).map_err(corrupt_on_eof)?;
            let text = String::from_utf8(text).map_err(|_| {
                StreamError::CorruptRecord(format!("sentence {s_idx}, token {t_idx}: invalid UTF-8"))
            })?;
            let gold = r.read_u8().map_err(corrupt_on_eof)?;
            let gold = LabelTag::from_ordinal(gold).map_err(|e| {
                StreamError::CorruptRecord(format!("sentence {s_idx}, token {t_idx}: {e}"))
            })?;
            binio::read_f32_into(&mut r, &mut floats).map_err(corrupt_on_eof)?;
            let embedding = Embedding::from_f32(&floats).map_err(|e| {
                StreamError::CorruptRecord(format!("sentence {s_idx}, token {t_idx}: {e}"))
            })?;
            let mut dist = [0f32; 3];
            binio::read_f32_into(&mut r, &mut dist).map_err(corrupt_on_eof)?;
            let base = normalize_base(dist).ok_or(StreamError::BadDistribution {
                sentence: s_idx,
                token: t_idx,
                values: dist,
            })?;
            let token = TokenRecord::new(text, gold, embedding, base).map_err(|e| {
                StreamError::CorruptRecord(format!("sentence {s_idx}, token {t_idx}: {e}"))
            })?;
            tokens.push(token);
        }
        sentences.push(Sentence {
            tokens,
            dataset_id: header.dataset_id.clone(),
        });
    }
    if !binio::at_eof(&mut r)? {
        return Err(StreamError::CorruptRecord("trailing bytes after last sentence".into()));
    }
    Ok((header, sentences))
}

fn read_header<R: Read>(r: &mut R) -> Result<StreamHeader, StreamError> {
    let magic = binio::read_magic(r).map_err(corrupt_on_eof)?;
    if magic != ETS_MAGIC {
        return Err(StreamError::MagicMismatch(magic));
    }
    let version = r.read_u32::<LittleEndian>().map_err(corrupt_on_eof)?;
    if version != ETS_VERSION {
        return Err(StreamError::VersionMismatch(version));
    }
    let dim = r.read_u32::<LittleEndian>().map_err(corrupt_on_eof)? as usize;
    let labels = r.read_u32::<LittleEndian>().map_err(corrupt_on_eof)?;
    if labels != ETS_LABEL_COUNT {
        return Err(StreamError::CorruptRecord(format!("label count {labels}, expected 3")));
    }
    let dataset_id = binio::read_string_u16(r).map_err(corrupt_on_eof)?;
    let dataset_id = String::from_utf8(dataset_id)
        .map_err(|_| StreamError::CorruptRecord("dataset id is not UTF-8".into()))?;
    let sentence_count = r.read_u64::<LittleEndian>().map_err(corrupt_on_eof)?;
    Ok(StreamHeader {
        dim,
        dataset_id,
        sentence_count,
    })
}

fn normalize_base(raw: [f32; 3]) -> Option<Distribution3> {
    let p = raw.map(f64::from);
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return None;
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > READ_SUM_TOLERANCE {
        return None;
    }
    Distribution3::from_array(p.map(|v| v / sum)).ok()
}

/// Writes `sentences` as an ETS1 file. All sentences must share one embedding
/// dimension and one dataset id; an empty list yields a valid file with
/// count 0.
pub fn write_token_stream(sentences: &[Sentence], path: impl AsRef<Path>) -> Result<(), StreamError> {
    validate_for_write(sentences)?;
    binio::write_atomically(path.as_ref(), |w| encode_unchecked(sentences, w))?;
    Ok(())
}

/// Encodes into any writer; same preconditions as [`write_token_stream`].
pub fn encode_token_stream<W: Write>(sentences: &[Sentence], w: &mut W) -> Result<(), StreamError> {
    validate_for_write(sentences)?;
    encode_unchecked(sentences, w)?;
    Ok(())
}

fn validate_for_write(sentences: &[Sentence]) -> Result<(), StreamError> {
    let Some(first) = sentences.first() else {
        return Ok(());
    };
    let dim = first.dim();
    for s in sentences {
        if s.dataset_id != first.dataset_id {
            return Err(StreamError::MixedDatasetIds(first.dataset_id.clone(), s.dataset_id.clone()));
        }
        if s.tokens.is_empty() {
            return Err(StreamError::CorruptRecord("sentence without tokens".into()));
        }
        for t in &s.tokens {
            if t.embedding.dim() != dim {
                return Err(StreamError::MixedDimensions(dim, t.embedding.dim()));
            }
            if t.text.len() > u16::MAX as usize {
                return Err(StreamError::CorruptRecord(format!("token text of {} bytes", t.text.len())));
            }
        }
    }
    if first.dataset_id.len() > u16::MAX as usize {
        return Err(StreamError::CorruptRecord("dataset id longer than 65535 bytes".into()));
    }
    Ok(())
}

fn encode_unchecked<W: Write>(sentences: &[Sentence], w: &mut W) -> io::Result<()> {
    let (dim, dataset_id) = match sentences.first() {
        Some(s) => (s.dim(), s.dataset_id.as_str()),
        None => (0, ""),
    };
    w.write_all(&ETS_MAGIC)?;
    w.write_u32::<LittleEndian>(ETS_VERSION)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u32::<LittleEndian>(ETS_LABEL_COUNT)?;
    binio::write_string_u16(w, dataset_id)?;
    w.write_u64::<LittleEndian>(sentences.len() as u64)?;
    for s in sentences {
        w.write_u32::<LittleEndian>(s.tokens.len() as u32)?;
        for t in &s.tokens {
            binio::write_string_u16(w, &t.text)?;
            w.write_u8(t.gold.ordinal())?;
            binio::write_f32s(w, t.embedding.as_slice().iter().map(|&v| v as f32))?;
            binio::write_f32s(w, t.base.as_array().iter().map(|&v| v as f32))?;
        }
    }
    Ok(())
}
