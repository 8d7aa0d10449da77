//! NDS1 datastore files.
//!
//! ```text
//! "NDS1" | version u32 | flags u32 (bit 0 whitening, bit 1 centroids)
//! | dim u32 | entry count u64
//! config:    use_whitening u8 | ncentroids u32 | nprobe u32 | kmeans_iters u32 | seed u64
//! sources:   count u16, then (u16 length + UTF-8) each
//! whitening: dim x f32 mean, dim*dim x f32 row-major W        (if flag bit 0)
//! entries:   per entry: dim x f32 key | value u8 | source u16 | sentence u32 | token u32
//! centroids: count u32 | count*dim x f32 | per list: len u32 + len x u32   (if flag bit 1)
//! ```
//!
//! Little-endian throughout.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ClusterIndex, Datastore, DatastoreConfig, DatastoreError};
use crate::binio;
use crate::model::LabelTag;
use crate::whitening::WhiteningModel;

pub const NDS_MAGIC: [u8; 4] = *b"NDS1";
pub const NDS_VERSION: u32 = 1;

const FLAG_WHITENING: u32 = 1;
const FLAG_CENTROIDS: u32 = 1 << 1;

pub fn save_datastore(store: &Datastore, path: impl AsRef<Path>) -> Result<(), DatastoreError> {
    binio::write_atomically(path.as_ref(), |w| write_datastore(store, w))?;
    Ok(())
}

pub fn write_datastore<W: Write>(store: &Datastore, w: &mut W) -> io::Result<()> {
    let dim = store.dim;
    let mut flags = 0;
    if store.whitening.is_some() {
        flags |= FLAG_WHITENING;
    }
    if store.index.is_some() {
        flags |= FLAG_CENTROIDS;
    }
    w.write_all(&NDS_MAGIC)?;
    w.write_u32::<LittleEndian>(NDS_VERSION)?;
    w.write_u32::<LittleEndian>(flags)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u64::<LittleEndian>(store.len() as u64)?;

    let c = &store.config;
    w.write_u8(u8::from(c.use_whitening))?;
    w.write_u32::<LittleEndian>(c.ncentroids as u32)?;
    w.write_u32::<LittleEndian>(c.nprobe as u32)?;
    w.write_u32::<LittleEndian>(c.kmeans_iters as u32)?;
    w.write_u64::<LittleEndian>(c.seed)?;

    w.write_u16::<LittleEndian>(store.sources.len() as u16)?;
    for s in &store.sources {
        binio::write_string_u16(w, s)?;
    }

    if let Some(model) = &store.whitening {
        binio::write_f32s(w, model.mean().iter().map(|&v| v as f32))?;
        binio::write_f32s(w, model.transform().iter().map(|&v| v as f32))?;
    }

    for i in 0..store.len() {
        binio::write_f32s(w, store.keys[i * dim..(i + 1) * dim].iter().copied())?;
        w.write_u8(store.values[i].ordinal())?;
        w.write_u16::<LittleEndian>(store.source_ids[i])?;
        let (s, t) = store.positions[i];
        w.write_u32::<LittleEndian>(s)?;
        w.write_u32::<LittleEndian>(t)?;
    }

    if let Some(index) = &store.index {
        w.write_u32::<LittleEndian>(index.lists.len() as u32)?;
        binio::write_f32s(w, index.centroids.iter().copied())?;
        for list in &index.lists {
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for &m in list {
                w.write_u32::<LittleEndian>(m)?;
            }
        }
    }
    Ok(())
}

pub fn load_datastore(path: impl AsRef<Path>) -> Result<Datastore, DatastoreError> {
    let file = File::open(path)?;
    read_datastore(BufReader::new(file))
}

fn corrupt(e: io::Error) -> DatastoreError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        DatastoreError::CorruptFile("truncated".into())
    } else {
        DatastoreError::Io(e)
    }
}

fn bad(msg: impl Into<String>) -> DatastoreError {
    DatastoreError::CorruptFile(msg.into())
}

pub fn read_datastore<R: Read>(mut r: R) -> Result<Datastore, DatastoreError> {
    let magic = binio::read_magic(&mut r).map_err(corrupt)?;
    if magic != NDS_MAGIC {
        return Err(DatastoreError::MagicMismatch(magic));
    }
    let version = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if version != NDS_VERSION {
        return Err(DatastoreError::VersionMismatch(version));
    }
    let flags = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if flags & !(FLAG_WHITENING | FLAG_CENTROIDS) != 0 {
        return Err(bad(format!("unknown flags {flags:#x}")));
    }
    let dim = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
    let n = usize::try_from(r.read_u64::<LittleEndian>().map_err(corrupt)?).map_err(|_| bad("entry count"))?;
    if dim == 0 || n == 0 {
        return Err(bad("empty datastore"));
    }

    let use_whitening = match r.read_u8().map_err(corrupt)? {
        0 => false,
        1 => true,
        other => return Err(bad(format!("use_whitening byte {other}"))),
    };
    let config = DatastoreConfig {
        use_whitening,
        ncentroids: r.read_u32::<LittleEndian>().map_err(corrupt)? as usize,
        nprobe: r.read_u32::<LittleEndian>().map_err(corrupt)? as usize,
        kmeans_iters: r.read_u32::<LittleEndian>().map_err(corrupt)? as usize,
        seed: r.read_u64::<LittleEndian>().map_err(corrupt)?,
    };
    if config.ncentroids == 0 || config.nprobe == 0 || config.nprobe > config.ncentroids {
        return Err(bad("inconsistent index config"));
    }
    if use_whitening != (flags & FLAG_WHITENING != 0) {
        return Err(bad("whitening flag disagrees with config"));
    }

    let n_sources = r.read_u16::<LittleEndian>().map_err(corrupt)? as usize;
    let mut sources = Vec::with_capacity(n_sources);
    for _ in 0..n_sources {
        let bytes = binio::read_string_u16(&mut r).map_err(corrupt)?;
        let s = String::from_utf8(bytes).map_err(|_| bad("source id is not UTF-8"))?;
        sources.push(Arc::<str>::from(s));
    }

    let whitening = if flags & FLAG_WHITENING != 0 {
        let mut mean = vec![0f32; dim];
        binio::read_f32_into(&mut r, &mut mean).map_err(corrupt)?;
        let mut transform = vec![0f32; dim * dim];
        binio::read_f32_into(&mut r, &mut transform).map_err(corrupt)?;
        let model = WhiteningModel::from_parts(
            mean.into_iter().map(f64::from).collect(),
            transform.into_iter().map(f64::from).collect(),
        )
        .map_err(|e| bad(format!("whitening block: {e}")))?;
        Some(model)
    } else {
        None
    };

    // grow incrementally so a bogus count cannot force a huge allocation
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut source_ids = Vec::new();
    let mut positions = Vec::new();
    let mut key = vec![0f32; dim];
    for i in 0..n {
        binio::read_f32_into(&mut r, &mut key).map_err(corrupt)?;
        if key.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("entry {i} has a non-finite key")));
        }
        keys.extend_from_slice(&key);
        let value = LabelTag::from_ordinal(r.read_u8().map_err(corrupt)?).map_err(|e| bad(format!("entry {i}: {e}")))?;
        values.push(value);
        let sid = r.read_u16::<LittleEndian>().map_err(corrupt)?;
        if sid as usize >= sources.len() {
            return Err(bad(format!("entry {i} references unknown source {sid}")));
        }
        source_ids.push(sid);
        let s = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        let t = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        positions.push((s, t));
    }

    let index = if flags & FLAG_CENTROIDS != 0 {
        let nlist = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        if nlist != config.ncentroids || nlist > n {
            return Err(bad("centroid count disagrees with config"));
        }
        let mut centroids = vec![0f32; nlist * dim];
        binio::read_f32_into(&mut r, &mut centroids).map_err(corrupt)?;
        let mut seen = vec![false; n];
        let mut lists = Vec::with_capacity(nlist);
        for _ in 0..nlist {
            let len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
            if len > n {
                return Err(bad("list longer than the store"));
            }
            let mut list = vec![0u32; len];
            r.read_u32_into::<LittleEndian>(&mut list).map_err(corrupt)?;
            for &m in &list {
                let slot = seen.get_mut(m as usize).ok_or_else(|| bad("list member out of range"))?;
                if *slot {
                    return Err(bad(format!("entry {m} appears in two lists")));
                }
                *slot = true;
            }
            lists.push(list);
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("entry missing from every centroid list"));
        }
        Some(ClusterIndex { centroids, lists })
    } else {
        None
    };

    if !binio::at_eof(&mut r)? {
        return Err(bad("trailing bytes"));
    }
    Ok(Datastore {
        dim,
        keys,
        values,
        source_ids,
        sources,
        positions,
        whitening,
        index,
        config,
    })
}
