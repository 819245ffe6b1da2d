//! Sources of panoramas, street-view images and satellite tiles.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{self, BBox, GeoPoint};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no {kind} asset for {key}")]
    NotFound { kind: &'static str, key: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("provider fault: {0}")]
    Fault(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoLocation {
    /// Opaque provider token.
    pub pano_id: String,
    pub location: GeoPoint,
}

/// Street-view request parameters, forwarded to the provider unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreetViewParams {
    pub heading_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
}

impl Default for StreetViewParams {
    /// Facing north, level, 120 degree field of view.
    fn default() -> Self {
        Self {
            heading_deg: 0.0,
            pitch_deg: 0.0,
            fov_deg: 120.0,
        }
    }
}

pub trait Provider: Sync {
    /// Stable description recorded in manifest headers.
    fn identity(&self) -> String;

    /// Closest known panorama to `near`, or `None` when the provider has none.
    fn nearest_panorama(&self, near: &GeoPoint) -> Result<Option<PanoLocation>, ProviderError>;

    /// Encoded street-view image for a panorama.
    fn street_view(&self, pano: &PanoLocation, params: &StreetViewParams) -> Result<Vec<u8>, ProviderError>;

    /// Encoded satellite image covering `bounds`.
    fn satellite(&self, bounds: &BBox) -> Result<Vec<u8>, ProviderError>;
}

/// Coordinate in integer units of 1e-7 degree.
pub fn quantize(deg: f64) -> i64 {
    (deg * 1e7).round() as i64
}

/// `<lat7>_<lon7>` asset key.
pub fn asset_key(p: &GeoPoint) -> String {
    format!("{}_{}", quantize(p.lat()), quantize(p.lon()))
}

fn parse_key(stem: &str) -> Option<GeoPoint> {
    let (lat, lon) = stem.split_once('_')?;
    let lat: i64 = lat.parse().ok()?;
    let lon: i64 = lon.parse().ok()?;
    GeoPoint::new(lat as f64 / 1e7, lon as f64 / 1e7).ok()
}

/// Directory-backed provider.
///
/// ```text
/// <root>/panoramas.jsonl            {"pano_id": .., "location": {"lat": .., "lon": ..}} per line
/// <root>/street/<lat7>_<lon7>.png   keyed by panorama location
/// <root>/satellite/<lat7>_<lon7>.png keyed by tile center
/// ```
///
/// A satellite request is served by the tile whose center lies inside the
/// requested bounds and is nearest to their center.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    root: PathBuf,
    panoramas: Vec<PanoLocation>,
    satellite_tiles: BTreeMap<String, GeoPoint>,
}

impl FixtureProvider {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let root = root.as_ref().to_path_buf();
        let pano_path = root.join("panoramas.jsonl");
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ProviderError::Io { path, source }
        };
        let file = fs::File::open(&pano_path).map_err(io_err(&pano_path))?;
        let mut panoramas = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&pano_path))?;
            if line.trim().is_empty() {
                continue;
            }
            let pano: PanoLocation = serde_json::from_str(&line).map_err(|e| ProviderError::Parse {
                path: pano_path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            panoramas.push(pano);
        }

        let sat_dir = root.join("satellite");
        let mut satellite_tiles = BTreeMap::new();
        match fs::read_dir(&sat_dir) {
            Ok(entries) => {
                for entry in entries {
                    let path = entry.map_err(io_err(&sat_dir))?.path();
                    if path.extension().and_then(|e| e.to_str()) != Some("png") {
                        continue;
                    }
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                    if let Some(center) = parse_key(stem) {
                        satellite_tiles.insert(stem.to_string(), center);
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&sat_dir)(e)),
        }
        Ok(Self {
            root,
            panoramas,
            satellite_tiles,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn panoramas(&self) -> &[PanoLocation] {
        &self.panoramas
    }

    fn read_asset(&self, kind: &'static str, key: &str) -> Result<Vec<u8>, ProviderError> {
        let path = self.root.join(kind).join(format!("{key}.png"));
        fs::read(&path).map_err(|source| match source.kind() {
            io::ErrorKind::NotFound => ProviderError::NotFound {
                kind,
                key: key.to_string(),
            },
            _ => ProviderError::Io { path, source },
        })
    }
}

impl Provider for FixtureProvider {
    fn identity(&self) -> String {
        format!("fixture:{}-panoramas", self.panoramas.len())
    }

    fn nearest_panorama(&self, near: &GeoPoint) -> Result<Option<PanoLocation>, ProviderError> {
        let best = self
            .panoramas
            .iter()
            .map(|p| (geodesy::haversine_distance(near, &p.location), p))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.pano_id.cmp(&b.1.pano_id)));
        Ok(best.map(|(_, p)| p.clone()))
    }

    fn street_view(&self, pano: &PanoLocation, _params: &StreetViewParams) -> Result<Vec<u8>, ProviderError> {
        self.read_asset("street", &asset_key(&pano.location))
    }

    fn satellite(&self, bounds: &BBox) -> Result<Vec<u8>, ProviderError> {
        let center = bounds.center();
        let best = self
            .satellite_tiles
            .iter()
            .filter(|(_, c)| bounds.contains(c))
            .map(|(k, c)| (geodesy::haversine_distance(&center, c), k))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        match best {
            Some((_, key)) => self.read_asset("satellite", key),
            None => Err(ProviderError::NotFound {
                kind: "satellite",
                key: asset_key(&center),
            }),
        }
    }
}

#[cfg(feature = "http")]
pub use http::HttpProvider;

#[cfg(feature = "http")]
mod http {
    use super::*;

    const STREETVIEW_URL: &str = "https://maps.googleapis.com/maps/api/streetview";
    const STATIC_MAP_URL: &str = "https://maps.googleapis.com/maps/api/staticmap";

    /// Street View Static API and Maps Static API backend.
    pub struct HttpProvider {
        client: reqwest::blocking::Client,
        api_key: String,
        /// Panorama search radius in meters.
        pub search_radius_m: u32,
        /// Requested image size in pixels.
        pub image_size: u32,
    }

    #[derive(Deserialize)]
    struct Metadata {
        status: String,
        pano_id: Option<String>,
        location: Option<LatLng>,
    }

    #[derive(Deserialize)]
    struct LatLng {
        lat: f64,
        lng: f64,
    }

    impl HttpProvider {
        pub fn new(api_key: impl Into<String>) -> Result<Self, ProviderError> {
            let client = reqwest::blocking::Client::builder()
                .build()
                .map_err(|e| ProviderError::Fault(e.to_string()))?;
            Ok(Self {
                client,
                api_key: api_key.into(),
                search_radius_m: 50,
                image_size: 640,
            })
        }

        fn get(&self, url: &str, query: &[(&str, String)]) -> Result<Vec<u8>, ProviderError> {
            let resp = self
                .client
                .get(url)
                .query(query)
                .query(&[("key", &self.api_key)])
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| ProviderError::Fault(e.to_string()))?;
            let bytes = resp.bytes().map_err(|e| ProviderError::Fault(e.to_string()))?;
            Ok(bytes.to_vec())
        }
    }

    impl Provider for HttpProvider {
        fn identity(&self) -> String {
            "http:google-maps".into()
        }

        fn nearest_panorama(&self, near: &GeoPoint) -> Result<Option<PanoLocation>, ProviderError> {
            let body = self.get(
                &format!("{STREETVIEW_URL}/metadata"),
                &[
                    ("location", format!("{},{}", near.lat(), near.lon())),
                    ("radius", self.search_radius_m.to_string()),
                ],
            )?;
            let meta: Metadata = serde_json::from_slice(&body).map_err(|e| ProviderError::Fault(e.to_string()))?;
            match (meta.status.as_str(), meta.pano_id, meta.location) {
                ("OK", Some(pano_id), Some(loc)) => {
                    let location = GeoPoint::new(loc.lat, loc.lng).map_err(|e| ProviderError::Fault(e.to_string()))?;
                    Ok(Some(PanoLocation { pano_id, location }))
                }
                ("ZERO_RESULTS" | "NOT_FOUND", _, _) => Ok(None),
                (status, _, _) => Err(ProviderError::Fault(format!("metadata status {status}"))),
            }
        }

        fn street_view(&self, pano: &PanoLocation, params: &StreetViewParams) -> Result<Vec<u8>, ProviderError> {
            self.get(
                STREETVIEW_URL,
                &[
                    ("size", format!("{0}x{0}", self.image_size)),
                    ("pano", pano.pano_id.clone()),
                    ("heading", params.heading_deg.to_string()),
                    ("pitch", params.pitch_deg.to_string()),
                    ("fov", params.fov_deg.to_string()),
                ],
            )
        }

        fn satellite(&self, bounds: &BBox) -> Result<Vec<u8>, ProviderError> {
            self.get(
                STATIC_MAP_URL,
                &[
                    ("size", format!("{0}x{0}", self.image_size)),
                    ("maptype", "satellite".into()),
                    (
                        "visible",
                        format!(
                            "{},{}|{},{}",
                            bounds.lat_min, bounds.lon_min, bounds.lat_max, bounds.lon_max
                        ),
                    ),
                ],
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_fixed_point() {
        let p = GeoPoint::new(48.8566123, 2.3522219).unwrap();
        assert_eq!(asset_key(&p), "488566123_23522219");
        let neg = GeoPoint::new(-33.5, -70.25).unwrap();
        assert_eq!(asset_key(&neg), "-335000000_-702500000");
        assert_eq!(parse_key("-335000000_-702500000"), Some(neg));
        assert_eq!(parse_key("garbage"), None);
    }

    #[test]
    fn fixture_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let a = GeoPoint::new(10.0, 20.0).unwrap();
        let b = GeoPoint::new(10.001, 20.0).unwrap();
        fs::write(
            dir.path().join("panoramas.jsonl"),
            "{\"pano_id\":\"a\",\"location\":{\"lat\":10.0,\"lon\":20.0}}\n\
             {\"pano_id\":\"b\",\"location\":{\"lat\":10.001,\"lon\":20.0}}\n",
        )
        .unwrap();
        fs::create_dir(dir.path().join("street")).unwrap();
        fs::create_dir(dir.path().join("satellite")).unwrap();
        fs::write(dir.path().join("street").join(format!("{}.png", asset_key(&a))), b"A").unwrap();
        fs::write(
            dir.path().join("satellite").join(format!("{}.png", asset_key(&b))),
            b"S",
        )
        .unwrap();
        let p = FixtureProvider::open(dir.path()).unwrap();

        let near_b = GeoPoint::new(10.0009, 20.0).unwrap();
        assert_eq!(p.nearest_panorama(&near_b).unwrap().unwrap().pano_id, "b");
        let pa = p.nearest_panorama(&a).unwrap().unwrap();
        assert_eq!(p.street_view(&pa, &StreetViewParams::default()).unwrap(), b"A");
        let pb = p.nearest_panorama(&b).unwrap().unwrap();
        assert!(matches!(
            p.street_view(&pb, &StreetViewParams::default()),
            Err(ProviderError::NotFound { kind: "street", .. })
        ));

        let around_b = geodesy::footprint_bbox(&b, 100.0, 100.0).unwrap();
        assert_eq!(p.satellite(&around_b).unwrap(), b"S");
        let around_a = geodesy::footprint_bbox(&a, 100.0, 100.0).unwrap();
        assert!(matches!(p.satellite(&around_a), Err(ProviderError::NotFound { .. })));
    }

    #[test]
    fn missing_root_is_io_error() {
        assert!(matches!(
            FixtureProvider::open("/nonexistent/fixture"),
            Err(ProviderError::Io { .. })
        ));
    }
}
