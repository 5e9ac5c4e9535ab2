//! On-disk index files and parallel batch search.

use std::fs;
use std::path::Path;

use mrag_core::index::{IndexError, UnitHit, VectorIndex};
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum IndexFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Format(#[from] IndexError),
}

pub fn save(index: &VectorIndex, path: &Path) -> Result<(), IndexFileError> {
    fs::write(path, index.to_bytes()).map_err(|source| IndexFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<VectorIndex, IndexFileError> {
    let bytes = fs::read(path).map_err(|source| IndexFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(VectorIndex::from_bytes(&bytes)?)
}

/// Search many queries, partitioning queries (never rows) across threads.
pub fn search_batch(
    index: &VectorIndex,
    queries: &[Vec<f32>],
    k: usize,
) -> Result<Vec<Vec<UnitHit>>, IndexError> {
    queries.par_iter().map(|q| index.top_k_units(q, k)).collect()
}
