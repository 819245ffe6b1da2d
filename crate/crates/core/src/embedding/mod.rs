//! Unit-norm embedding batches, temperature-scaled score matrices and exact
//! nearest-neighbor ranking.
//!
//! Rankings are total orders: descending score, ties broken by ascending id.

pub mod gbem;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of a row norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Initial temperature, following the usual CLIP initialization.
pub const DEFAULT_TAU: f64 = 0.07;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("row {row} (id {id}) has norm {norm}, expected 1")]
    NonUnitRow { row: usize, id: u64, norm: f64 },
    #[error("duplicate id {0} in batch")]
    DuplicateId(u64),
    #[error("{ids} ids for a matrix with {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("k = {k} outside 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Drone,
    Panorama,
    Satellite,
    Text,
}

impl View {
    pub const IMAGE_VIEWS: [View; 3] = [View::Drone, View::Panorama, View::Satellite];

    pub fn tag(self) -> u8 {
        match self {
            View::Drone => 0,
            View::Panorama => 1,
            View::Satellite => 2,
            View::Text => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<View> {
        Some(match tag {
            0 => View::Drone,
            1 => View::Panorama,
            2 => View::Satellite,
            3 => View::Text,
            _ => return None,
        })
    }

    pub fn short(self) -> &'static str {
        match self {
            View::Drone => "d",
            View::Panorama => "p",
            View::Satellite => "s",
            View::Text => "t",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Drone => "drone",
            View::Panorama => "panorama",
            View::Satellite => "satellite",
            View::Text => "text",
        })
    }
}

/// A vector with unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Array1<f64>);

impl EmbeddingVector {
    pub fn as_view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice().expect("owned 1-d array is contiguous")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<EmbeddingVector, EmbeddingError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(EmbeddingVector(v.iter().map(|x| x / norm).collect()))
}

/// Row-wise unit-norm embeddings of one view, row `i` belonging to `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    view: View,
    ids: Vec<u64>,
    matrix: Array2<f64>,
}

impl EmbeddingBatch {
    /// Wraps already-normalized rows, validating every invariant.
    pub fn new(view: View, ids: Vec<u64>, matrix: Array2<f64>) -> Result<Self, EmbeddingError> {
        if ids.len() != matrix.nrows() {
            return Err(EmbeddingError::IdCountMismatch {
                ids: ids.len(),
                rows: matrix.nrows(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(EmbeddingError::DuplicateId(id));
            }
        }
        for (row, values) in matrix.axis_iter(Axis(0)).enumerate() {
            if values.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite);
            }
            let norm = values.dot(&values).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(EmbeddingError::NonUnitRow {
                    row,
                    id: ids[row],
                    norm,
                });
            }
        }
        Ok(Self { view, ids, matrix })
    }

    /// Normalizes each raw row before wrapping.
    pub fn from_raw(view: View, ids: Vec<u64>, raw: &Array2<f64>) -> Result<Self, EmbeddingError> {
        let mut matrix = raw.clone();
        for mut row in matrix.axis_iter_mut(Axis(0)) {
            let unit = l2_normalize(&row.to_vec())?;
            row.assign(&unit.0);
        }
        Self::new(view, ids, matrix)
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> EmbeddingVector {
        EmbeddingVector(self.matrix.row(i).to_owned())
    }

    /// Same rows reordered by `order` (indices into this batch).
    pub fn select(&self, order: &[usize]) -> Self {
        Self {
            view: self.view,
            ids: order.iter().map(|&i| self.ids[i]).collect(),
            matrix: self.matrix.select(Axis(0), order),
        }
    }
}

/// Softmax temperature stored in log space so it stays positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_tau: f64,
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Result<Self, EmbeddingError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(EmbeddingError::BadTemperature(tau));
        }
        Ok(Self { log_tau: tau.ln() })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self {
            log_tau: DEFAULT_TAU.ln(),
        }
    }
}

/// `S[i, j] = <query_i, gallery_j> / tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub values: Array2<f64>,
    pub query: View,
    pub gallery: View,
}

pub fn score_matrix(q: &EmbeddingBatch, g: &EmbeddingBatch, t: Temperature) -> Result<ScoreMatrix, EmbeddingError> {
    if q.dim() != g.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: q.dim(),
            right: g.dim(),
        });
    }
    let tau = t.tau();
    if !(tau.is_finite() && tau > 0.0) {
        return Err(EmbeddingError::BadTemperature(tau));
    }
    Ok(ScoreMatrix {
        values: q.matrix.dot(&g.matrix.t()) / tau,
        query: q.view,
        gallery: g.view,
    })
}

fn ranking_order(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` most similar gallery items, by descending cosine similarity.
pub fn top_k(q: &EmbeddingVector, g: &EmbeddingBatch, k: usize) -> Result<Vec<(u64, f64)>, EmbeddingError> {
    if k == 0 || k > g.len() {
        return Err(EmbeddingError::KOutOfRange { k, len: g.len() });
    }
    if q.dim() != g.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: q.dim(),
            right: g.dim(),
        });
    }
    let scores = g.matrix.dot(&q.0);
    let mut scored: Vec<(u64, f64)> = g.ids.iter().copied().zip(scores).collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, ranking_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(ranking_order);
    Ok(scored)
}

/// Full gallery ranking for every query row.
pub fn rank_all(q: &EmbeddingBatch, g: &EmbeddingBatch) -> Result<Vec<Vec<u64>>, EmbeddingError> {
    (0..q.len())
        .map(|i| Ok(top_k(&q.row(i), g, g.len())?.into_iter().map(|(id, _)| id).collect()))
        .collect()
}
