//! FEMB embedding file, the interchange format between the autoencoder,
//! external feature extractors, the classifier head and the service.
//!
//! ```text
//! "FEMB" | u32 version=1 | u32 dimension d | u64 count n
//! n × (u64 id | d × f32)
//! ```
//! Little-endian throughout.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::EmbeddingStore;
use crate::binio::{to_usize, OffsetReader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FEMB";
const VERSION: u32 = 1;

pub fn write_store<W: Write>(store: &EmbeddingStore, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(store.dimension().unwrap_or(0) as u32).to_le_bytes())?;
    out.write_all(&(store.len() as u64).to_le_bytes())?;
    for (id, v) in store.iter() {
        out.write_all(&id.to_le_bytes())?;
        for x in v {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parses a FEMB stream. Duplicate ids are rejected; when `expected_dim`
/// is given the file's dimension must equal it.
pub fn read_store<R: Read>(input: R, expected_dim: Option<usize>) -> Result<EmbeddingStore> {
    let mut r = OffsetReader::new(input);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let dim_offset = r.offset();
    let dim = r.u32("dimension")? as usize;
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(Error::Format {
                offset: dim_offset,
                message: format!("embeddings have dimension {dim}, expected {expected}"),
            });
        }
    }
    let count = r.u64("entry count")?;
    let count = to_usize(&r, count, "entry count")?;
    if dim == 0 && count > 0 {
        return r.fail("zero-dimensional embeddings");
    }
    let mut store = if dim == 0 {
        EmbeddingStore::new()
    } else {
        EmbeddingStore::with_dimension(dim)
    };
    let mut seen = HashSet::new();
    let mut buf = vec![0f32; dim];
    for _ in 0..count {
        let id_offset = r.offset();
        let id = r.u64("id")?;
        if !seen.insert(id) {
            return Err(Error::Format {
                offset: id_offset,
                message: format!("duplicate id {id}"),
            });
        }
        for v in buf.iter_mut() {
            *v = r.f32("embedding value")?;
            if !v.is_finite() {
                return r.fail(format!("non-finite value in embedding {id}"));
            }
        }
        store.add(id, &buf)?;
    }
    r.finish()?;
    Ok(store)
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    write_store(store, BufWriter::new(File::create(path)?))
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    import_embeddings(path, None)
}

/// Loads embeddings produced by any extractor.
pub fn import_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<EmbeddingStore> {
    read_store(BufReader::new(File::open(path)?), expected_dim)
}
