//! Semantic-anchor contrastive objective.
//!
//! Three image pairs and three text-to-image pairs each contribute one
//! InfoNCE term over a temperature-scaled score matrix with identity targets:
//!
//! ```text
//! L_img   = (L(S_ds) + L(S_sp) + L(S_pd)) / 3
//! L_text  = (L(S_td) + L(S_tp) + L(S_ts)) / 3
//! L_total = L_img + L_text
//! ```
//!
//! Rows are queries. With [`Objective::symmetric`] set, each pair instead
//! averages the row-wise and column-wise losses.
//!
//! [`loss_gradients`] backpropagates `L_total` through scoring, row
//! normalization and per-view linear encoders, including the log-temperature.

pub mod toy;

use std::collections::BTreeMap;
use std::ops::{Index, IndexMut};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;
use thiserror::Error;

use crate::embedding::{EmbeddingBatch, EmbeddingError, Temperature, View};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("target {target} for row {row} is not a column of a {rows}x{cols} score matrix")]
    BadTarget {
        row: usize,
        target: usize,
        rows: usize,
        cols: usize,
    },
    #[error("batches are not aligned: {0}")]
    BatchMisaligned(String),
    #[error("non-finite score in row {0}")]
    NonFiniteScore(usize),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// One value per view, indexable by [`View`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerView<T>(pub [T; 4]);

impl<T> PerView<T> {
    pub fn from_fn(mut f: impl FnMut(View) -> T) -> Self {
        PerView([f(View::Drone), f(View::Panorama), f(View::Satellite), f(View::Text)])
    }

    pub fn iter(&self) -> impl Iterator<Item = (View, &T)> {
        [View::Drone, View::Panorama, View::Satellite, View::Text]
            .into_iter()
            .zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(View, &T) -> U) -> PerView<U> {
        PerView::from_fn(|v| f(v, &self[v]))
    }
}

impl<T> Index<View> for PerView<T> {
    type Output = T;

    fn index(&self, v: View) -> &T {
        &self.0[v.tag() as usize]
    }
}

impl<T> IndexMut<View> for PerView<T> {
    fn index_mut(&mut self, v: View) -> &mut T {
        &mut self.0[v.tag() as usize]
    }
}

/// An ordered (query, gallery) view pair.
pub type Pair = (View, View);

pub const IMAGE_PAIRS: [Pair; 3] = [
    (View::Drone, View::Satellite),
    (View::Satellite, View::Panorama),
    (View::Panorama, View::Drone),
];

pub const TEXT_PAIRS: [Pair; 3] = [
    (View::Text, View::Drone),
    (View::Text, View::Panorama),
    (View::Text, View::Satellite),
];

/// One shared temperature with optional per-pair overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Temperatures {
    pub shared: Temperature,
    pub per_pair: BTreeMap<Pair, Temperature>,
}

impl Temperatures {
    pub fn shared(t: Temperature) -> Self {
        Self {
            shared: t,
            per_pair: BTreeMap::new(),
        }
    }

    pub fn for_pair(&self, pair: Pair) -> Temperature {
        self.per_pair.get(&pair).copied().unwrap_or(self.shared)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub temperatures: Temperatures,
    pub symmetric: bool,
}

impl Objective {
    pub fn new(t: Temperature) -> Self {
        Self {
            temperatures: Temperatures::shared(t),
            symmetric: false,
        }
    }
}

/// Per-term losses and their aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub drone_satellite: f64,
    pub satellite_panorama: f64,
    pub panorama_drone: f64,
    pub text_drone: f64,
    pub text_panorama: f64,
    pub text_satellite: f64,
    pub img: f64,
    pub text: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(image: [f64; 3], text: [f64; 3]) -> Self {
        let img = image.iter().sum::<f64>() / 3.0;
        let txt = text.iter().sum::<f64>() / 3.0;
        Self {
            drone_satellite: image[0],
            satellite_panorama: image[1],
            panorama_drone: image[2],
            text_drone: text[0],
            text_panorama: text[1],
            text_satellite: text[2],
            img,
            text: txt,
            total: img + txt,
        }
    }
}

fn check_targets(s: &ArrayView2<f64>, targets: &[usize]) -> Result<(), ObjectiveError> {
    let (rows, cols) = s.dim();
    if targets.len() != rows {
        return Err(ObjectiveError::Shape(format!(
            "{} targets for {rows} rows",
            targets.len()
        )));
    }
    for (row, &target) in targets.iter().enumerate() {
        if target >= cols {
            return Err(ObjectiveError::BadTarget {
                row,
                target,
                rows,
                cols,
            });
        }
    }
    Ok(())
}

/// Per-row `-log softmax(row)[target]` and, optionally, the softmax itself.
fn row_losses(
    s: &ArrayView2<f64>,
    targets: &[usize],
    mut softmax_out: Option<&mut Array2<f64>>,
) -> Result<Vec<f64>, ObjectiveError> {
    let mut losses = Vec::with_capacity(targets.len());
    for (i, row) in s.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(ObjectiveError::NonFiniteScore(i));
        }
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        losses.push(((max - row[targets[i]]) + sum.ln()).max(0.0));
        if let Some(p) = softmax_out.as_deref_mut() {
            for (j, &v) in row.iter().enumerate() {
                p[[i, j]] = (v - max).exp() / sum;
            }
        }
    }
    Ok(losses)
}

/// Mean InfoNCE loss of a score matrix against per-row target columns.
pub fn infonce(s: ArrayView2<f64>, targets: &[usize]) -> Result<f64, ObjectiveError> {
    check_targets(&s, targets)?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let losses = row_losses(&s, targets, None)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// InfoNCE value and `dL/dS`.
pub fn infonce_with_grad(s: ArrayView2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>), ObjectiveError> {
    check_targets(&s, targets)?;
    let b = targets.len();
    let mut grad = Array2::zeros(s.dim());
    if b == 0 {
        return Ok((0.0, grad));
    }
    let losses = row_losses(&s, targets, Some(&mut grad))?;
    for (i, &t) in targets.iter().enumerate() {
        grad[[i, t]] -= 1.0;
    }
    grad /= b as f64;
    Ok((losses.iter().sum::<f64>() / b as f64, grad))
}

fn identity_targets(b: usize) -> Vec<usize> {
    (0..b).collect()
}

fn check_aligned(batches: &[&EmbeddingBatch]) -> Result<(), ObjectiveError> {
    let first = batches[0];
    for b in &batches[1..] {
        if b.ids() != first.ids() {
            return Err(ObjectiveError::BatchMisaligned(format!(
                "{} ids differ from {} ids",
                b.view(),
                first.view()
            )));
        }
        if b.dim() != first.dim() {
            return Err(ObjectiveError::Shape(format!(
                "{} has dimension {}, {} has {}",
                b.view(),
                b.dim(),
                first.view(),
                first.dim()
            )));
        }
    }
    Ok(())
}

fn pair_loss(q: &Array2<f64>, g: &Array2<f64>, tau: f64, symmetric: bool) -> Result<f64, ObjectiveError> {
    let s = q.dot(&g.t()) / tau;
    let targets = identity_targets(q.nrows());
    let forward = infonce(s.view(), &targets)?;
    if symmetric {
        Ok(0.5 * (forward + infonce(s.t(), &targets)?))
    } else {
        Ok(forward)
    }
}

impl Objective {
    fn terms(&self, pairs: &[Pair; 3], batches: &PerView<Option<&EmbeddingBatch>>) -> Result<[f64; 3], ObjectiveError> {
        let mut out = [0.0; 3];
        for (slot, &(u, v)) in out.iter_mut().zip(pairs) {
            let (q, g) = (batches[u].expect("view supplied"), batches[v].expect("view supplied"));
            *slot = pair_loss(
                q.matrix(),
                g.matrix(),
                self.temperatures.for_pair((u, v)).tau(),
                self.symmetric,
            )?;
        }
        Ok(out)
    }

    pub fn image_loss(
        &self,
        d: &EmbeddingBatch,
        p: &EmbeddingBatch,
        s: &EmbeddingBatch,
    ) -> Result<f64, ObjectiveError> {
        check_aligned(&[d, p, s])?;
        let batches = PerView([Some(d), Some(p), Some(s), None]);
        Ok(self.terms(&IMAGE_PAIRS, &batches)?.iter().sum::<f64>() / 3.0)
    }

    pub fn text_loss(
        &self,
        t: &EmbeddingBatch,
        d: &EmbeddingBatch,
        p: &EmbeddingBatch,
        s: &EmbeddingBatch,
    ) -> Result<f64, ObjectiveError> {
        check_aligned(&[t, d, p, s])?;
        let batches = PerView([Some(d), Some(p), Some(s), Some(t)]);
        Ok(self.terms(&TEXT_PAIRS, &batches)?.iter().sum::<f64>() / 3.0)
    }

    pub fn total_loss(
        &self,
        d: &EmbeddingBatch,
        p: &EmbeddingBatch,
        s: &EmbeddingBatch,
        t: &EmbeddingBatch,
    ) -> Result<LossBreakdown, ObjectiveError> {
        check_aligned(&[d, p, s, t])?;
        let batches = PerView([Some(d), Some(p), Some(s), Some(t)]);
        Ok(LossBreakdown::from_terms(
            self.terms(&IMAGE_PAIRS, &batches)?,
            self.terms(&TEXT_PAIRS, &batches)?,
        ))
    }
}

pub fn image_loss(
    d: &EmbeddingBatch,
    p: &EmbeddingBatch,
    s: &EmbeddingBatch,
    t: Temperature,
) -> Result<f64, ObjectiveError> {
    Objective::new(t).image_loss(d, p, s)
}

pub fn text_loss(
    text: &EmbeddingBatch,
    d: &EmbeddingBatch,
    p: &EmbeddingBatch,
    s: &EmbeddingBatch,
    t: Temperature,
) -> Result<f64, ObjectiveError> {
    Objective::new(t).text_loss(text, d, p, s)
}

pub fn total_loss(
    d: &EmbeddingBatch,
    p: &EmbeddingBatch,
    s: &EmbeddingBatch,
    text: &EmbeddingBatch,
    t: Temperature,
) -> Result<LossBreakdown, ObjectiveError> {
    Objective::new(t).total_loss(d, p, s, text)
}

/// Linear map `D_in -> D_out` followed by row normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    weight: Array2<f64>,
}

impl LinearEncoder {
    /// `weight` is `D_out x D_in`.
    pub fn new(weight: Array2<f64>) -> Result<Self, ObjectiveError> {
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(ObjectiveError::Embedding(EmbeddingError::NonFinite));
        }
        if weight.is_empty() {
            return Err(ObjectiveError::Shape("empty encoder weight".into()));
        }
        Ok(Self { weight })
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weight
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Unnormalized outputs `X W^T`.
    fn project(&self, x: &Array2<f64>) -> Result<Array2<f64>, ObjectiveError> {
        if x.ncols() != self.input_dim() {
            return Err(ObjectiveError::Shape(format!(
                "features have {} columns, encoder expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(x.dot(&self.weight.t()))
    }

    /// Unit-norm embeddings of each feature row.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>, ObjectiveError> {
        Ok(normalize_rows(&self.project(x)?)?.0)
    }

    pub fn encode_batch(&self, view: View, ids: Vec<u64>, x: &Array2<f64>) -> Result<EmbeddingBatch, ObjectiveError> {
        Ok(EmbeddingBatch::new(view, ids, self.encode(x)?)?)
    }
}

/// Normalized rows and the original row norms.
fn normalize_rows(y: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>), EmbeddingError> {
    let norms: Array1<f64> = y.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|n| !n.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    if norms.iter().any(|&n| n == 0.0) {
        return Err(EmbeddingError::ZeroVector);
    }
    let z = y / &norms.view().insert_axis(Axis(1));
    Ok((z, norms))
}

/// Gradient of `L_total` for every encoder weight and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: PerView<Array2<f64>>,
    /// Derivative w.r.t. the shared `log_tau`, summed over pairs without an override.
    pub log_tau: f64,
    /// Derivatives w.r.t. overridden per-pair `log_tau` values.
    pub pair_log_tau: BTreeMap<Pair, f64>,
}

/// Analytic gradients of `L_total` with respect to encoder weights and
/// log-temperature(s), given raw per-view features `B x D_in(v)`.
pub fn loss_gradients(
    features: &PerView<Array2<f64>>,
    encoders: &PerView<LinearEncoder>,
    objective: &Objective,
) -> Result<(LossBreakdown, Gradients), ObjectiveError> {
    let b = features[View::Drone].nrows();
    let d_out = encoders[View::Drone].output_dim();
    for (v, x) in features.iter() {
        if x.nrows() != b {
            return Err(ObjectiveError::BatchMisaligned(format!(
                "{v} has {} rows, drone has {b}",
                x.nrows()
            )));
        }
        if encoders[v].output_dim() != d_out {
            return Err(ObjectiveError::Shape(format!(
                "{v} encoder outputs {} dims, drone encoder {d_out}",
                encoders[v].output_dim()
            )));
        }
    }

    let mut z = PerView::default();
    let mut norms = PerView::default();
    for (v, x) in features.iter() {
        let (zv, nv) = normalize_rows(&encoders[v].project(x)?)?;
        z[v] = zv;
        norms[v] = nv;
    }

    let targets = identity_targets(b);
    let mut dz: PerView<Array2<f64>> = PerView::from_fn(|_| Array2::zeros((b, d_out)));
    let mut log_tau = 0.0;
    let mut pair_log_tau = BTreeMap::new();
    let mut term_values = [[0.0; 3]; 2];

    for (group, pairs) in [IMAGE_PAIRS, TEXT_PAIRS].iter().enumerate() {
        for (slot, &(u, v)) in pairs.iter().enumerate() {
            let tau = objective.temperatures.for_pair((u, v)).tau();
            let s = z[u].dot(&z[v].t()) / tau;
            let (value, mut g) = if objective.symmetric {
                let (fwd, g_fwd) = infonce_with_grad(s.view(), &targets)?;
                let (bwd, g_bwd) = infonce_with_grad(s.t(), &targets)?;
                (0.5 * (fwd + bwd), 0.5 * (g_fwd + g_bwd.t()))
            } else {
                infonce_with_grad(s.view(), &targets)?
            };
            term_values[group][slot] = value;
            // Each term enters its group mean with weight 1/3.
            g /= 3.0;

            let dz_u = g.dot(&z[v]) / tau;
            let dz_v = g.t().dot(&z[u]) / tau;
            dz[u] += &dz_u;
            dz[v] += &dz_v;

            // S scales as exp(-log_tau).
            let d_log_tau = -(&g * &s).sum();
            if objective.temperatures.per_pair.contains_key(&(u, v)) {
                *pair_log_tau.entry((u, v)).or_insert(0.0) += d_log_tau;
            } else {
                log_tau += d_log_tau;
            }
        }
    }

    let mut weights = PerView::default();
    for (v, x) in features.iter() {
        // d(y/|y|) = (dz - z <z, dz>) / |y|
        let zv = &z[v];
        let radial: Array1<f64> = (zv * &dz[v]).sum_axis(Axis(1));
        let dy = (&dz[v] - &(zv * &radial.view().insert_axis(Axis(1)))) / norms[v].view().insert_axis(Axis(1));
        let dw = dy.t().dot(x);
        if dw.iter().any(|g| !g.is_finite()) {
            return Err(ObjectiveError::NonFiniteGradient(format!("{v} encoder weight")));
        }
        weights[v] = dw;
    }
    if !log_tau.is_finite() || pair_log_tau.values().any(|g: &f64| !g.is_finite()) {
        return Err(ObjectiveError::NonFiniteGradient("log_tau".into()));
    }

    let breakdown = LossBreakdown::from_terms(term_values[0], term_values[1]);
    Ok((
        breakdown,
        Gradients {
            weights,
            log_tau,
            pair_log_tau,
        },
    ))
}

/// `L_total` of raw features pushed through the encoders.
pub fn encoded_total_loss(
    features: &PerView<Array2<f64>>,
    encoders: &PerView<LinearEncoder>,
    objective: &Objective,
) -> Result<LossBreakdown, ObjectiveError> {
    let b = features[View::Drone].nrows() as u64;
    let batches = PerView::from_fn(|v| -> Result<EmbeddingBatch, ObjectiveError> {
        encoders[v].encode_batch(v, (0..b).collect(), &features[v])
    });
    let [d, p, s, t] = batches.0;
    objective.total_loss(&d?, &p?, &s?, &t?)
}
