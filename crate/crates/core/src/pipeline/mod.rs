//! Tri-view dataset construction.
//!
//! Stages, in order: sliding-window seeds over a georeferenced drone raster,
//! nearest-panorama harvesting restricted to the seed window, inverse crops at
//! every configured scale around the panorama, the black/white validity
//! screen, the quality-gate cascade, per-scale duplicate suppression, and
//! street/satellite fetches that complete each triple.
//!
//! Candidate ids are `seed_index * scales.len() + scale_index`; drops from the
//! harvest stage carry the seed index instead. Per-candidate stages run on a
//! rayon pool, but results are collected in id order so the output does not
//! depend on the number of threads.

pub mod provider;

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gates::{self, GateStage, GateThresholds};
use crate::geodesy::{self, AffineGeoTransform, BBox, GeoError, GeoPoint, GroundFootprint, METERS_PER_DEGREE};
use crate::raster::{self, GrayImage, PixelWindow, RasterError, RgbImage};

pub use provider::{FixtureProvider, PanoLocation, Provider, ProviderError, StreetViewParams};

/// Ground coverage scales in meters.
pub const SCALES_M: [u32; 5] = [80, 100, 120, 150, 180];
pub const DEFAULT_WINDOW: u32 = 80;
/// Largest tolerated fraction of pure black or pure white pixels.
pub const SATURATION_LIMIT: f64 = 0.01;
/// Overlap above which two crops are duplicates.
pub const DUPLICATE_OVERLAP: f64 = 0.5;
/// Coordinates closer than this (degrees, per axis) count as identical.
pub const SAME_LOCATION_DEG: f64 = 1e-9;
pub const PIPELINE_VERSION: &str = concat!("geobridge-pipeline/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("footprint of {scale_m} m around ({lat}, {lon}) leaves the raster")]
    OutOfCoverage { lat: f64, lon: f64, scale_m: f64 },
    #[error("scale {0} m is not one of 80, 100, 120, 150, 180")]
    BadScale(u32),
    #[error("scale {0} m listed twice")]
    DuplicateScale(u32),
    #[error("no scales configured")]
    NoScales,
    #[error("seed {index} belongs to raster {found:?}, expected {expected:?}")]
    SeedMismatch {
        index: usize,
        found: String,
        expected: String,
    },
    #[error("cannot start worker pool: {0}")]
    ThreadPool(String),
    #[error("{what} line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub source_image_id: String,
    /// Continuous `(col, row)` of the window center.
    pub pixel_center: (f64, f64),
    pub geo_center: GeoPoint,
}

/// One seed per sliding window, row-major.
pub fn generate_seeds(
    raster_id: &str,
    transform: &AffineGeoTransform,
    width: u32,
    height: u32,
    window: u32,
    stride: u32,
) -> Result<Vec<SeedRecord>, PipelineError> {
    transform.check_invertible()?;
    let windows = raster::sliding_windows(width, height, window, stride)?;
    Ok(windows
        .iter()
        .map(|w| {
            let (col, row) = w.center();
            SeedRecord {
                source_image_id: raster_id.to_string(),
                pixel_center: (col, row),
                geo_center: transform.pixel_to_geo(col, row),
            }
        })
        .collect())
}

/// Ground covered by the `window`-pixel square around a seed.
pub fn seed_coverage(
    transform: &AffineGeoTransform,
    seed: &SeedRecord,
    window: u32,
) -> Result<GroundFootprint, GeoError> {
    let (gx, gy) = transform.pixel_ground_size(&seed.geo_center);
    GroundFootprint::new(seed.geo_center, gx * window as f64, gy * window as f64)
}

/// The provider's nearest panorama, kept only if it lies inside `coverage`.
pub fn harvest_panorama(
    provider: &dyn Provider,
    seed: &SeedRecord,
    coverage: &GroundFootprint,
) -> Result<Option<PanoLocation>, ProviderError> {
    Ok(provider
        .nearest_panorama(&seed.geo_center)?
        .filter(|p| geodesy::contains(coverage, &p.location)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseCrop {
    pub image: RgbImage,
    pub window: PixelWindow,
    /// Ground actually covered by `window`; contains the requested footprint.
    pub footprint: GroundFootprint,
}

// Pixel coordinates this close to an integer are treated as that integer, so
// round-off in geo_to_pixel does not add a spurious row or column.
const PIXEL_SNAP: f64 = 1e-6;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < PIXEL_SNAP {
        r
    } else {
        v
    }
}

fn corners(b: &BBox) -> [(f64, f64); 4] {
    [
        (b.lat_min, b.lon_min),
        (b.lat_min, b.lon_max),
        (b.lat_max, b.lon_min),
        (b.lat_max, b.lon_max),
    ]
}

/// Crops the `scale_m` square around `anchor`, rounding the pixel window outward.
pub fn inverse_crop(
    raster: &RgbImage,
    transform: &AffineGeoTransform,
    anchor: &GeoPoint,
    scale_m: f64,
) -> Result<InverseCrop, PipelineError> {
    let bbox = geodesy::footprint_bbox(anchor, scale_m, scale_m)?;
    let (mut c0, mut c1, mut r0, mut r1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (lat, lon) in corners(&bbox) {
        let (c, r) = transform.geo_to_pixel(&GeoPoint::new(lat, lon)?)?;
        c0 = c0.min(c);
        c1 = c1.max(c);
        r0 = r0.min(r);
        r1 = r1.max(r);
    }
    let (c0, r0) = (snap(c0).floor(), snap(r0).floor());
    let (c1, r1) = (snap(c1).ceil(), snap(r1).ceil());
    if c0 < 0.0 || r0 < 0.0 || c1 > raster.width() as f64 || r1 > raster.height() as f64 {
        return Err(PipelineError::OutOfCoverage {
            lat: anchor.lat(),
            lon: anchor.lon(),
            scale_m,
        });
    }
    let window = PixelWindow {
        col0: c0 as u32,
        row0: r0 as u32,
        width: (c1 - c0) as u32,
        height: (r1 - r0) as u32,
    };
    let image = raster::crop(raster, &window)?;
    let footprint = window_footprint(transform, &window)?;
    Ok(InverseCrop {
        image,
        window,
        footprint,
    })
}

/// Ground footprint of the bounding box of a pixel window's corners.
pub fn window_footprint(transform: &AffineGeoTransform, w: &PixelWindow) -> Result<GroundFootprint, GeoError> {
    let (x0, y0) = (w.col0 as f64, w.row0 as f64);
    let (x1, y1) = (x0 + w.width as f64, y0 + w.height as f64);
    let pts = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].map(|(c, r)| transform.pixel_to_geo(c, r));
    let lat_min = pts.iter().map(|p| p.lat()).fold(f64::INFINITY, f64::min);
    let lat_max = pts.iter().map(|p| p.lat()).fold(f64::NEG_INFINITY, f64::max);
    let lon_min = pts.iter().map(|p| p.lon()).fold(f64::INFINITY, f64::min);
    let lon_max = pts.iter().map(|p| p.lon()).fold(f64::NEG_INFINITY, f64::max);
    let center = GeoPoint::new(0.5 * (lat_min + lat_max), 0.5 * (lon_min + lon_max))?;
    let width_m = (lon_max - lon_min) * METERS_PER_DEGREE * center.lat().to_radians().cos();
    let height_m = (lat_max - lat_min) * METERS_PER_DEGREE;
    GroundFootprint::new(center, width_m, height_m)
}

/// Rejects images with more than 1% pure black or more than 1% pure white pixels.
pub fn validity_screen(g: &GrayImage) -> bool {
    let (black, white) = raster::saturated_ratio(g);
    black <= SATURATION_LIMIT && white <= SATURATION_LIMIT
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DuplicateReason {
    SameLocation,
    Overlap(f64),
}

pub fn duplicate_reason(a: (&GroundFootprint, &GeoPoint), b: (&GroundFootprint, &GeoPoint)) -> Option<DuplicateReason> {
    let (pa, pb) = (a.1, b.1);
    if (pa.lat() - pb.lat()).abs() <= SAME_LOCATION_DEG && (pa.lon() - pb.lon()).abs() <= SAME_LOCATION_DEG {
        return Some(DuplicateReason::SameLocation);
    }
    let r = geodesy::overlap_ratio(a.0, b.0);
    (r > DUPLICATE_OVERLAP).then_some(DuplicateReason::Overlap(r))
}

/// For each candidate, the first retained candidate it duplicates, if any.
///
/// Greedy single pass in the given order; a candidate is compared only with
/// candidates already retained.
pub fn dedup_decisions(candidates: &[(u64, GroundFootprint, GeoPoint)]) -> Vec<Option<(u64, DuplicateReason)>> {
    let mut kept: Vec<usize> = Vec::new();
    candidates
        .iter()
        .enumerate()
        .map(|(i, (_, fp, pt))| {
            let hit = kept.iter().find_map(|&k| {
                let (kid, kfp, kpt) = &candidates[k];
                duplicate_reason((fp, pt), (kfp, kpt)).map(|r| (*kid, r))
            });
            if hit.is_none() {
                kept.push(i);
            }
            hit
        })
        .collect()
}

/// Ids retained by the greedy first-wins pass. Expects `candidates` sorted by id.
pub fn dedup(candidates: &[(u64, GroundFootprint, GeoPoint)]) -> Vec<u64> {
    candidates
        .iter()
        .zip(dedup_decisions(candidates))
        .filter(|(_, d)| d.is_none())
        .map(|((id, _, _), _)| *id)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriViewInstance {
    pub instance_id: u64,
    pub location: GeoPoint,
    pub country: String,
    pub scale_m: u32,
    pub drone_asset: String,
    pub street_asset: String,
    pub satellite_asset: String,
    pub description: String,
    pub split: Split,
}

impl TriViewInstance {
    /// Nominal ground coverage of the drone asset.
    pub fn footprint(&self) -> Result<GroundFootprint, GeoError> {
        GroundFootprint::square(self.location, self.scale_m as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: String,
    pub pipeline_version: String,
    pub provider: String,
    pub window: u32,
    pub scales: Vec<u32>,
    pub thresholds: GateThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub instances: Vec<TriViewInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropStage {
    #[serde(rename = "harvest")]
    Harvest,
    #[serde(rename = "crop")]
    Crop,
    #[serde(rename = "screen")]
    Screen,
    #[serde(rename = "BH")]
    BlurHaze,
    #[serde(rename = "C")]
    Contrast,
    #[serde(rename = "UN")]
    UniformityNoise,
    #[serde(rename = "dedup")]
    Dedup,
    #[serde(rename = "align")]
    Align,
}

impl From<GateStage> for DropStage {
    fn from(s: GateStage) -> Self {
        match s {
            GateStage::BlurHaze => DropStage::BlurHaze,
            GateStage::Contrast => DropStage::Contrast,
            GateStage::UniformityNoise => DropStage::UniformityNoise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub stage: DropStage,
    pub id: u64,
    pub reason: String,
}

/// Items that entered each stage successfully.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub seeds: usize,
    pub harvested: usize,
    pub cropped: usize,
    pub screened: usize,
    pub gated: usize,
    pub deduped: usize,
    pub manifest: usize,
    pub fetch_drops: usize,
}

pub struct SourceRaster {
    pub id: String,
    pub image: RgbImage,
    pub transform: AffineGeoTransform,
    pub country: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub window: u32,
    pub scales: Vec<u32>,
    pub thresholds: GateThresholds,
    pub street_params: StreetViewParams,
    /// Text descriptions keyed by panorama id.
    pub descriptions: BTreeMap<String, String>,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            scales: SCALES_M.to_vec(),
            thresholds: GateThresholds::default(),
            street_params: StreetViewParams::default(),
            descriptions: BTreeMap::new(),
            threads: 0,
        }
    }
}

pub fn validate_scales(scales: &[u32]) -> Result<(), PipelineError> {
    if scales.is_empty() {
        return Err(PipelineError::NoScales);
    }
    let mut seen = HashSet::new();
    for &s in scales {
        if !SCALES_M.contains(&s) {
            return Err(PipelineError::BadScale(s));
        }
        if !seen.insert(s) {
            return Err(PipelineError::DuplicateScale(s));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub manifest: Manifest,
    pub drops: Vec<DropRecord>,
    /// Encoded images keyed by their manifest reference.
    pub assets: BTreeMap<String, Vec<u8>>,
    pub counts: StageCounts,
}

/// `sha256:<hex>` reference of an encoded asset.
pub fn asset_ref(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// A retained candidate with its drone, street and satellite images.
type Fetched<'a> = (&'a Candidate, [Vec<u8>; 3]);

struct Candidate {
    id: u64,
    pano: PanoLocation,
    scale_m: u32,
    crop: InverseCrop,
}

fn drop(stage: DropStage, id: u64, reason: impl Into<String>) -> DropRecord {
    DropRecord {
        stage,
        id,
        reason: reason.into(),
    }
}

/// Runs every stage after seeding and assembles the manifest.
pub fn build(
    source: &SourceRaster,
    seeds: &[SeedRecord],
    provider: &dyn Provider,
    opts: &BuildOptions,
) -> Result<BuildOutput, PipelineError> {
    validate_scales(&opts.scales)?;
    opts.thresholds.validate().map_err(|e| PipelineError::Parse {
        what: "thresholds",
        line: 0,
        message: e.to_string(),
    })?;
    for (index, s) in seeds.iter().enumerate() {
        if s.source_image_id != source.id {
            return Err(PipelineError::SeedMismatch {
                index,
                found: s.source_image_id.clone(),
                expected: source.id.clone(),
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
    pool.install(|| build_stages(source, seeds, provider, opts))
}

fn build_stages(
    source: &SourceRaster,
    seeds: &[SeedRecord],
    provider: &dyn Provider,
    opts: &BuildOptions,
) -> Result<BuildOutput, PipelineError> {
    let mut drops = Vec::new();
    let mut counts = StageCounts {
        seeds: seeds.len(),
        ..StageCounts::default()
    };

    let harvested: Vec<Result<(usize, PanoLocation), DropRecord>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let fail = |reason: String| drop(DropStage::Harvest, i as u64, reason);
            let coverage =
                seed_coverage(&source.transform, seed, opts.window).map_err(|e| fail(format!("seed coverage: {e}")))?;
            match harvest_panorama(provider, seed, &coverage) {
                Ok(Some(p)) => Ok((i, p)),
                Ok(None) => Err(fail("no panorama inside seed coverage".into())),
                Err(e) => Err(fail(format!("provider error: {e}"))),
            }
        })
        .collect();
    let harvested = keep_ok(harvested, &mut drops);
    counts.harvested = harvested.len();

    let n_scales = opts.scales.len();
    let jobs: Vec<(u64, &PanoLocation, u32)> = harvested
        .iter()
        .flat_map(|(i, p)| {
            opts.scales
                .iter()
                .enumerate()
                .map(move |(k, &s)| ((i * n_scales + k) as u64, p, s))
        })
        .collect();

    // Crop, screen and gate one candidate; the stage tag says how far it got.
    let processed: Vec<Result<Candidate, (DropStage, DropRecord)>> = jobs
        .par_iter()
        .map(|&(id, pano, scale_m)| {
            let crop = inverse_crop(&source.image, &source.transform, &pano.location, scale_m as f64)
                .map_err(|e| (DropStage::Crop, drop(DropStage::Crop, id, e.to_string())))?;
            let gray = raster::to_grayscale(&crop.image);
            if !validity_screen(&gray) {
                let (b, w) = raster::saturated_ratio(&gray);
                let reason = format!("black ratio {b:.4}, white ratio {w:.4} (limit {SATURATION_LIMIT})");
                return Err((DropStage::Screen, drop(DropStage::Screen, id, reason)));
            }
            let report = gates::gate_cascade(&gray, &opts.thresholds)
                .map_err(|e| (DropStage::BlurHaze, drop(DropStage::BlurHaze, id, e.to_string())))?;
            if let Some(stage) = report.rejected_by {
                let stats = serde_json::to_string(&report.stats).expect("stats serialize");
                return Err((stage.into(), drop(stage.into(), id, stats)));
            }
            Ok(Candidate {
                id,
                pano: pano.clone(),
                scale_m,
                crop,
            })
        })
        .collect();
    let mut gated = Vec::new();
    for r in processed {
        match r {
            Ok(c) => {
                counts.cropped += 1;
                counts.screened += 1;
                counts.gated += 1;
                gated.push(c);
            }
            Err((stage, rec)) => {
                match stage {
                    DropStage::Crop => {}
                    DropStage::Screen => counts.cropped += 1,
                    _ => {
                        counts.cropped += 1;
                        counts.screened += 1;
                    }
                }
                drops.push(rec);
            }
        }
    }

    // Duplicates are suppressed within each scale: the nested crops around one
    // anchor share a center by construction and must not eliminate each other.
    let mut retained_ids = HashSet::new();
    for &scale in &opts.scales {
        let group: Vec<(u64, GroundFootprint, GeoPoint)> = gated
            .iter()
            .filter(|c| c.scale_m == scale)
            .map(|c| (c.id, c.crop.footprint, c.pano.location))
            .collect();
        for ((id, _, _), decision) in group.iter().zip(dedup_decisions(&group)) {
            match decision {
                None => {
                    retained_ids.insert(*id);
                }
                Some((other, DuplicateReason::SameLocation)) => {
                    drops.push(drop(DropStage::Dedup, *id, format!("same location as {other}")))
                }
                Some((other, DuplicateReason::Overlap(r))) => {
                    drops.push(drop(DropStage::Dedup, *id, format!("overlap {r:.4} with {other}")))
                }
            }
        }
    }
    let retained: Vec<&Candidate> = gated.iter().filter(|c| retained_ids.contains(&c.id)).collect();
    counts.deduped = retained.len();

    let fetched: Vec<Result<Fetched, DropRecord>> = retained
        .par_iter()
        .map(|&c| {
            let fail = |what: &str, e: String| drop(DropStage::Align, c.id, format!("{what}: {e}"));
            let drone = c.crop.image.to_png().map_err(|e| fail("drone", e.to_string()))?;
            let street = provider
                .street_view(&c.pano, &opts.street_params)
                .map_err(|e| fail("street", e.to_string()))?;
            let satellite = provider
                .satellite(&c.crop.footprint.bbox())
                .map_err(|e| fail("satellite", e.to_string()))?;
            Ok((c, [drone, street, satellite]))
        })
        .collect();

    let mut instances = Vec::new();
    let mut assets = BTreeMap::new();
    for r in fetched {
        match r {
            Ok((c, images)) => {
                let [drone, street, satellite] = images.map(|bytes| {
                    let key = asset_ref(&bytes);
                    assets.insert(key.clone(), bytes);
                    key
                });
                instances.push(TriViewInstance {
                    instance_id: instances.len() as u64,
                    location: c.pano.location,
                    country: source.country.clone(),
                    scale_m: c.scale_m,
                    drone_asset: drone,
                    street_asset: street,
                    satellite_asset: satellite,
                    description: opts.descriptions.get(&c.pano.pano_id).cloned().unwrap_or_default(),
                    split: source.split,
                });
            }
            Err(rec) => {
                counts.fetch_drops += 1;
                drops.push(rec);
            }
        }
    }
    counts.manifest = instances.len();
    drops.sort_by_key(|d| (stage_order(d.stage), d.id));

    Ok(BuildOutput {
        manifest: Manifest {
            header: ManifestHeader {
                kind: "manifest".into(),
                pipeline_version: PIPELINE_VERSION.into(),
                provider: provider.identity(),
                window: opts.window,
                scales: opts.scales.clone(),
                thresholds: opts.thresholds,
                config_hash: None,
            },
            instances,
        },
        drops,
        assets,
        counts,
    })
}

fn stage_order(s: DropStage) -> u8 {
    match s {
        DropStage::Harvest => 0,
        DropStage::Crop => 1,
        DropStage::Screen => 2,
        DropStage::BlurHaze | DropStage::Contrast | DropStage::UniformityNoise => 3,
        DropStage::Dedup => 4,
        DropStage::Align => 5,
    }
}

fn keep_ok<T>(items: Vec<Result<T, DropRecord>>, drops: &mut Vec<DropRecord>) -> Vec<T> {
    items
        .into_iter()
        .filter_map(|r| r.map_err(|d| drops.push(d)).ok())
        .collect()
}

/// Writes a header line followed by one JSON record per line.
pub fn write_jsonl<W: Write, H: Serialize, T: Serialize>(mut w: W, header: &H, records: &[T]) -> io::Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads a header line and the records after it. Blank lines are skipped.
pub fn read_jsonl<R: BufRead, H, T>(r: R, what: &'static str) -> Result<(H, Vec<T>), PipelineError>
where
    H: serde::de::DeserializeOwned,
    T: serde::de::DeserializeOwned,
{
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| PipelineError::Parse {
            what,
            line: i + 1,
            message: e.to_string(),
        };
        if header.is_none() {
            header = Some(serde_json::from_str(&line).map_err(parse_err)?);
        } else {
            records.push(serde_json::from_str(&line).map_err(parse_err)?);
        }
    }
    let header = header.ok_or(PipelineError::Parse {
        what,
        line: 0,
        message: "missing header line".into(),
    })?;
    Ok((header, records))
}

pub fn write_manifest<W: Write>(w: W, m: &Manifest) -> io::Result<()> {
    write_jsonl(w, &m.header, &m.instances)
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Manifest, PipelineError> {
    let (header, instances) = read_jsonl(r, "manifest")?;
    Ok(Manifest { header, instances })
}
