//! Score fusion: each unimodal embedding is L2-normalized and the parts are
//! summed with equal weight. The sum itself is not re-normalized, so the dot
//! product of two fused vectors is the sum of the four cross-modal cosines.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FusionError {
    #[error("no embedding supplied")]
    BothAbsent,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector cannot be normalized")]
    ZeroVector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub visual: bool,
    pub textual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEmbedding {
    pub vector: Vec<f32>,
    pub components: Components,
}

/// L2-normalize in double precision.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>, FusionError> {
    let norm = libm::sqrt(v.iter().map(|&x| x as f64 * x as f64).sum::<f64>());
    if norm == 0.0 || !norm.is_finite() {
        return Err(FusionError::ZeroVector);
    }
    Ok(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

pub fn fuse(visual: Option<&[f32]>, textual: Option<&[f32]>) -> Result<FusedEmbedding, FusionError> {
    let components = Components {
        visual: visual.is_some(),
        textual: textual.is_some(),
    };
    let vector = match (visual, textual) {
        (None, None) => return Err(FusionError::BothAbsent),
        (Some(v), None) | (None, Some(v)) => normalize(v)?,
        (Some(v), Some(t)) => {
            if v.len() != t.len() {
                return Err(FusionError::DimMismatch(v.len(), t.len()));
            }
            let (v, t) = (normalize(v)?, normalize(t)?);
            v.iter().zip(&t).map(|(a, b)| a + b).collect()
        }
    };
    Ok(FusedEmbedding { vector, components })
}
