//! Tri-view geo-localization toolkit.
//!
//! - [`geodesy`]: distances, affine pixel/world mapping, ground footprints.
//! - [`raster`]: decoding, cropping, sliding windows and pixel statistics.
//! - [`gates`]: the blur-haze, contrast and uniformity-noise quality cascade.
//! - [`pipeline`]: seed generation, harvesting, inverse cropping, dedup and
//!   tri-view alignment into a deterministic manifest.
//! - [`embedding`]: unit-norm batches, score matrices, exact top-k and the
//!   binary embedding file format.
//! - [`objective`]: the semantic-anchor InfoNCE objective, its analytic
//!   gradients and a toy linear-encoder trainer.
//! - [`evalmetrics`]: R@k, AP, R@1%, Hit and L@d.

pub mod embedding;
pub mod evalmetrics;
pub mod gates;
pub mod geodesy;
pub mod objective;
pub mod pipeline;
pub mod raster;
