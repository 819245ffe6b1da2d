use std::collections::BTreeMap;

use geobridge_core::geodesy::{AffineGeoTransform, BBox, GeoPoint, METERS_PER_DEGREE};
use geobridge_core::pipeline::provider::{PanoLocation, Provider, ProviderError, StreetViewParams};
use geobridge_core::pipeline::{
    build, duplicate_reason, generate_seeds, BuildOptions, BuildOutput, DropStage, SourceRaster, Split,
};
use geobridge_core::raster::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const LAT0: f64 = 45.0;
const LON0: f64 = 7.0;

fn transform() -> AffineGeoTransform {
    let dlat = 1.0 / METERS_PER_DEGREE;
    let dlon = dlat / LAT0.to_radians().cos();
    AffineGeoTransform::from_gdal([LON0, dlon, 0.0, LAT0, 0.0, -dlat]).unwrap()
}

/// Random city blocks with mild pixel noise, about 1 m per pixel.
fn city(seed: u64, w: u32, h: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wu, hu) = (w as usize, h as usize);
    let mut tone = vec![120.0f64; wu * hu];
    for _ in 0..(wu * hu / 150) {
        let (c0, r0) = (rng.random_range(0..wu), rng.random_range(0..hu));
        let (bw, bh) = (rng.random_range(5..20), rng.random_range(5..20));
        let v = rng.random_range(40.0..215.0);
        for r in r0..(r0 + bh).min(hu) {
            for c in c0..(c0 + bw).min(wu) {
                tone[r * wu + c] = v;
            }
        }
    }
    RgbImage::from_fn(w, h, |c, r| {
        let v = (tone[(r * w + c) as usize] + rng.random_range(-8.0..8.0)).clamp(1.0, 254.0) as u8;
        [v, v, v]
    })
}

/// In-memory provider with a fixed panorama list. Panorama ids starting with
/// `fault-` fail street-view requests, and `near` points south of `fault_lat`
/// fail panorama lookups.
struct MemoryProvider {
    panos: Vec<PanoLocation>,
    fault_lat: f64,
}

impl Provider for MemoryProvider {
    fn identity(&self) -> String {
        format!("memory:{}", self.panos.len())
    }

    fn nearest_panorama(&self, near: &GeoPoint) -> Result<Option<PanoLocation>, ProviderError> {
        if near.lat() < self.fault_lat {
            return Err(ProviderError::Fault("lookup timed out".into()));
        }
        let d = |p: &PanoLocation| geobridge_core::geodesy::haversine_distance(near, &p.location);
        Ok(self.panos.iter().min_by(|a, b| d(a).total_cmp(&d(b))).cloned())
    }

    fn street_view(&self, pano: &PanoLocation, _: &StreetViewParams) -> Result<Vec<u8>, ProviderError> {
        if pano.pano_id.starts_with("fault-") {
            return Err(ProviderError::Fault("street quota exceeded".into()));
        }
        Ok(format!("street:{}", pano.pano_id).into_bytes())
    }

    fn satellite(&self, b: &BBox) -> Result<Vec<u8>, ProviderError> {
        Ok(format!(
            "sat:{:.7},{:.7},{:.7},{:.7}",
            b.lat_min, b.lon_min, b.lat_max, b.lon_max
        )
        .into_bytes())
    }
}

struct Scene {
    source: SourceRaster,
    seeds: Vec<geobridge_core::pipeline::SeedRecord>,
    provider: MemoryProvider,
}

fn scene() -> Scene {
    let (w, h) = (480, 400);
    let t = transform();
    let seeds = generate_seeds("city", &t, w, h, 80, 80).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut panos = Vec::new();
    // Roughly one panorama per seed window, jittered, some close enough to collide.
    for (i, s) in seeds.iter().enumerate() {
        let (c, r) = s.pixel_center;
        let (dc, dr) = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let id = if i % 7 == 3 {
            format!("fault-{i}")
        } else {
            format!("p{i}")
        };
        panos.push(PanoLocation {
            pano_id: id,
            location: t.pixel_to_geo(c + dc, r + dr),
        });
        if i % 5 == 0 {
            panos.push(PanoLocation {
                pano_id: format!("twin{i}"),
                location: t.pixel_to_geo(c + dc + 10.0, r + dr),
            });
        }
    }
    // The bottom row of seeds sees provider faults.
    let fault_lat = t.pixel_to_geo(0.0, h as f64 - 80.0).lat();
    Scene {
        source: SourceRaster {
            id: "city".into(),
            image: city(5, w, h),
            transform: t,
            country: "Italy".into(),
            split: Split::Train,
        },
        seeds,
        provider: MemoryProvider { panos, fault_lat },
    }
}

fn run(s: &Scene, threads: usize) -> BuildOutput {
    let opts = BuildOptions {
        threads,
        descriptions: BTreeMap::from([("p0".to_string(), "corner".to_string())]),
        ..BuildOptions::default()
    };
    build(&s.source, &s.seeds, &s.provider, &opts).unwrap()
}

fn fingerprint(o: &BuildOutput) -> String {
    serde_json::to_string(&(&o.manifest.instances, &o.drops, &o.counts_tuple())).unwrap()
}

trait CountsTuple {
    fn counts_tuple(&self) -> [usize; 8];
}

impl CountsTuple for BuildOutput {
    fn counts_tuple(&self) -> [usize; 8] {
        let c = &self.counts;
        [
            c.seeds,
            c.harvested,
            c.cropped,
            c.screened,
            c.gated,
            c.deduped,
            c.manifest,
            c.fetch_drops,
        ]
    }
}

#[test]
fn build_is_deterministic_across_thread_counts() {
    let s = scene();
    let one = run(&s, 1);
    assert_eq!(fingerprint(&one), fingerprint(&run(&s, 1)));
    assert_eq!(fingerprint(&one), fingerprint(&run(&s, 4)));
    assert_eq!(one.assets, run(&s, 3).assets);
}

#[test]
fn counts_balance_against_drops() {
    let s = scene();
    let out = run(&s, 2);
    let c = &out.counts;
    let n = |stage: &[DropStage]| out.drops.iter().filter(|d| stage.contains(&d.stage)).count();
    let scales = BuildOptions::default().scales.len();
    assert_eq!(c.seeds, c.harvested + n(&[DropStage::Harvest]));
    assert_eq!(c.harvested * scales, c.cropped + n(&[DropStage::Crop]));
    assert_eq!(c.cropped, c.screened + n(&[DropStage::Screen]));
    assert_eq!(
        c.screened,
        c.gated + n(&[DropStage::BlurHaze, DropStage::Contrast, DropStage::UniformityNoise])
    );
    assert_eq!(c.gated, c.deduped + n(&[DropStage::Dedup]));
    assert_eq!(c.deduped, c.manifest + c.fetch_drops);
    assert_eq!(c.fetch_drops, n(&[DropStage::Align]));
    assert_eq!(c.manifest, out.manifest.instances.len());

    // The scene is built so that faults, twins and border crops all occur.
    assert!(n(&[DropStage::Harvest]) > 0);
    assert!(n(&[DropStage::Crop]) > 0);
    assert!(n(&[DropStage::Align]) > 0);
    assert!(c.manifest > 0);
    assert!(out
        .drops
        .iter()
        .any(|d| d.stage == DropStage::Harvest && d.reason.contains("provider error")));
    assert!(out
        .drops
        .iter()
        .any(|d| d.stage == DropStage::Align && d.reason.contains("street")));
}

#[test]
fn manifest_has_no_duplicate_pairs() {
    let out = run(&scene(), 2);
    let items = &out.manifest.instances;
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            if a.scale_m != b.scale_m {
                continue;
            }
            let (fa, fb) = (a.footprint().unwrap(), b.footprint().unwrap());
            assert!(
                duplicate_reason((&fa, &a.location), (&fb, &b.location)).is_none(),
                "{} and {} at {} m",
                a.instance_id,
                b.instance_id,
                a.scale_m
            );
        }
    }
}

#[test]
fn assets_are_content_addressed() {
    let out = run(&scene(), 2);
    for inst in &out.manifest.instances {
        for key in [&inst.drone_asset, &inst.street_asset, &inst.satellite_asset] {
            let bytes = out.assets.get(key).expect("referenced asset stored");
            assert_eq!(*key, format!("sha256:{}", hex::encode(Sha256::digest(bytes))));
        }
        assert_eq!(inst.country, "Italy");
        assert_eq!(inst.split, Split::Train);
    }
    let ids: Vec<u64> = out.manifest.instances.iter().map(|i| i.instance_id).collect();
    assert_eq!(ids, (0..ids.len() as u64).collect::<Vec<_>>());
    // The three gates share one slot in the drop order.
    let rank = |s: DropStage| match s {
        DropStage::BlurHaze | DropStage::Contrast | DropStage::UniformityNoise => DropStage::BlurHaze,
        other => other,
    };
    assert!(out
        .drops
        .windows(2)
        .all(|w| (rank(w[0].stage), w[0].id) <= (rank(w[1].stage), w[1].id)));
}
