//! Dimensionality reduction ahead of clustering.

mod pca;
mod umap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pca::pca_reduce;
pub use umap::{
    calibrate_sigmas, fit_curve, fuzzy_union, knn_graph, neighbor_graph, umap_reduce, KnnGraph,
    NeighborGraph, SmoothKnn,
};

#[derive(Debug, Error, PartialEq)]
pub enum ReduceError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("rows have inconsistent dimensionality")]
    Ragged,
    #[error("invalid reducer parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducerChoice {
    #[default]
    Umap,
    Pca,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducerParams {
    pub out_dim: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub n_epochs: usize,
    pub seed: u64,
    /// Low-dimensional similarity curve; fitted from `min_dist` when absent.
    pub curve_a: Option<f64>,
    pub curve_b: Option<f64>,
}

impl Default for ReducerParams {
    fn default() -> Self {
        Self {
            out_dim: 20,
            n_neighbors: 100,
            min_dist: 0.0,
            n_epochs: 200,
            seed: 42,
            curve_a: None,
            curve_b: None,
        }
    }
}

impl ReducerParams {
    pub fn validate(&self) -> Result<(), ReduceError> {
        let bad = |m: &str| Err(ReduceError::InvalidParams(m.to_string()));
        if self.out_dim == 0 {
            return bad("out_dim must be positive");
        }
        if self.n_neighbors < 2 {
            return bad("n_neighbors must be at least 2");
        }
        if !(self.min_dist >= 0.0 && self.min_dist.is_finite()) {
            return bad("min_dist must be finite and >= 0");
        }
        if self.n_epochs == 0 {
            return bad("n_epochs must be positive");
        }
        for v in [self.curve_a, self.curve_b].into_iter().flatten() {
            if !(v > 0.0 && v.is_finite()) {
                return bad("curve_a and curve_b must be positive");
            }
        }
        Ok(())
    }
}

pub(crate) fn check_rows(x: &[Vec<f64>]) -> Result<usize, ReduceError> {
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) {
        return Err(ReduceError::Ragged);
    }
    Ok(d)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Applies the configured reducer. Dimensions are clamped to what the data
/// supports (with a warning) rather than rejected, so tiny categories still
/// flow through the pipeline.
pub fn reduce(x: &[Vec<f64>], choice: ReducerChoice, params: &ReducerParams) -> Result<Vec<Vec<f64>>, ReduceError> {
    let d = check_rows(x)?;
    match choice {
        ReducerChoice::None => Ok(x.to_vec()),
        ReducerChoice::Pca => {
            let out = params.out_dim.min(x.len()).min(d);
            if out < params.out_dim {
                log::warn!("pca: out_dim {} clamped to {out}", params.out_dim);
            }
            pca_reduce(x, out)
        }
        ReducerChoice::Umap => {
            if params.out_dim >= d {
                log::warn!("umap: out_dim {} >= input dim {d}; skipping reduction", params.out_dim);
                return Ok(x.to_vec());
            }
            umap_reduce(x, params)
        }
    }
}

/// Gaussian random projection to `out_dim` dimensions; a neighbor-preservation
/// baseline.
pub fn random_projection(x: &[Vec<f64>], out_dim: usize, seed: u64) -> Result<Vec<Vec<f64>>, ReduceError> {
    let d = check_rows(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (out_dim as f64).sqrt();
    let proj: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..out_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    Ok(x.iter()
        .map(|row| {
            (0..out_dim)
                .map(|c| scale * row.iter().zip(&proj).map(|(v, p)| v * p[c]).sum::<f64>())
                .collect()
        })
        .collect())
}

/// Mean fraction of each point's k nearest neighbors in `high` that are also
/// among its k nearest neighbors in `low`.
pub fn neighbor_preservation(high: &[Vec<f64>], low: &[Vec<f64>], k: usize) -> Result<f64, ReduceError> {
    if high.len() != low.len() || high.len() < 2 {
        return Err(ReduceError::TooFewPoints {
            need: 2,
            got: high.len().min(low.len()),
        });
    }
    let kh = knn_graph(high, k)?;
    let kl = knn_graph(low, k)?;
    let mut kept = 0usize;
    for (a, b) in kh.indices.iter().zip(&kl.indices) {
        kept += a.iter().filter(|i| b.contains(i)).count();
    }
    Ok(kept as f64 / (high.len() * kh.k) as f64)
}
