//! Spherical-earth coordinate math.
//!
//! Distances use the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_M`]. Ground footprints are axis-aligned lat/lon rectangles
//! built with the local equirectangular approximation, which is accurate to
//! well under a meter at the 80-180 m side lengths used for drone crops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Length of one degree of arc on the reference sphere.
pub const METERS_PER_DEGREE: f64 = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / 360.0;

/// Footprints at or beyond this absolute latitude are rejected.
pub const POLAR_LIMIT_DEG: f64 = 89.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate is not finite: lat={lat}, lon={lon}")]
    NonFinite { lat: f64, lon: f64 },
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("affine transform is singular (determinant {0})")]
    SingularTransform(f64),
    #[error("footprint extent must be finite and positive, got {width_m} x {height_m} m")]
    InvalidExtent { width_m: f64, height_m: f64 },
    #[error("footprint centered at latitude {0} is too close to a pole")]
    PolarDegenerate(f64),
}

/// A geographic coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl GeoPoint {
    /// Validates the latitude and wraps the longitude into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFinite { lat, lon });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Great-circle distance to `other` in meters.
    pub fn distance_to(&self, other: &GeoPoint) -> f64 {
        haversine_distance(self, other)
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        lon
    } else {
        (lon + 180.0).rem_euclid(360.0) - 180.0
    }
}

/// Great-circle distance in meters between two points.
pub fn haversine_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();

    let s_phi = (dphi / 2.0).sin();
    let s_lambda = (dlambda / 2.0).sin();
    let h = (s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Affine pixel to world mapping in GDAL coefficient order.
///
/// ```text
/// lon = origin_x + col * pixel_width + row * row_rotation
/// lat = origin_y + col * col_rotation + row * pixel_height
/// ```
///
/// Pixel coordinates are continuous with `(0, 0)` at the top-left corner of
/// the top-left pixel, so the center of pixel `(c, r)` is `(c + 0.5, r + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineGeoTransform {
    pub origin_x: f64,
    pub pixel_width: f64,
    pub row_rotation: f64,
    pub origin_y: f64,
    pub col_rotation: f64,
    pub pixel_height: f64,
}

impl AffineGeoTransform {
    pub fn new(
        origin_x: f64,
        pixel_width: f64,
        row_rotation: f64,
        origin_y: f64,
        col_rotation: f64,
        pixel_height: f64,
    ) -> Result<Self, GeoError> {
        let t = Self {
            origin_x,
            pixel_width,
            row_rotation,
            origin_y,
            col_rotation,
            pixel_height,
        };
        t.check_invertible()?;
        Ok(t)
    }

    pub fn from_gdal(c: [f64; 6]) -> Result<Self, GeoError> {
        Self::new(c[0], c[1], c[2], c[3], c[4], c[5])
    }

    pub fn to_gdal(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height,
        ]
    }

    pub fn identity() -> Self {
        Self {
            origin_x: 0.0,
            pixel_width: 1.0,
            row_rotation: 0.0,
            origin_y: 0.0,
            col_rotation: 0.0,
            pixel_height: 1.0,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.pixel_width * self.pixel_height - self.row_rotation * self.col_rotation
    }

    /// Determinant, or an error when the transform cannot be inverted.
    pub fn check_invertible(&self) -> Result<f64, GeoError> {
        let det = self.determinant();
        let scale = self
            .pixel_width
            .abs()
            .max(self.pixel_height.abs())
            .max(self.row_rotation.abs())
            .max(self.col_rotation.abs());
        if !det.is_finite() || det.abs() <= f64::EPSILON * scale * scale {
            return Err(GeoError::SingularTransform(det));
        }
        Ok(det)
    }

    /// Maps a continuous pixel coordinate to a world coordinate.
    ///
    /// The result is not wrapped or range checked, so that it round-trips
    /// exactly through [`geo_to_pixel`](Self::geo_to_pixel).
    pub fn pixel_to_geo(&self, col: f64, row: f64) -> GeoPoint {
        GeoPoint {
            lon: self.origin_x + col * self.pixel_width + row * self.row_rotation,
            lat: self.origin_y + col * self.col_rotation + row * self.pixel_height,
        }
    }

    /// Inverse of [`pixel_to_geo`](Self::pixel_to_geo), returning `(col, row)`.
    pub fn geo_to_pixel(&self, p: &GeoPoint) -> Result<(f64, f64), GeoError> {
        let det = self.check_invertible()?;
        let dx = p.lon - self.origin_x;
        let dy = p.lat - self.origin_y;
        let col = (self.pixel_height * dx - self.row_rotation * dy) / det;
        let row = (self.pixel_width * dy - self.col_rotation * dx) / det;
        Ok((col, row))
    }

    /// Approximate ground size of one pixel `(along columns, along rows)` in
    /// meters at `at`, assuming the world coordinates are degrees.
    pub fn pixel_ground_size(&self, at: &GeoPoint) -> (f64, f64) {
        let cos_lat = at.lat.to_radians().cos();
        let metric = |dlon: f64, dlat: f64| {
            let x = dlon * METERS_PER_DEGREE * cos_lat;
            let y = dlat * METERS_PER_DEGREE;
            x.hypot(y)
        };
        (
            metric(self.pixel_width, self.col_rotation),
            metric(self.row_rotation, self.pixel_height),
        )
    }
}

/// Closed lat/lon rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.lat_min && p.lat <= self.lat_max && p.lon >= self.lon_min && p.lon <= self.lon_max
    }

    /// Area in square degrees. Only meaningful for ratios between nearby boxes.
    pub fn degree_area(&self) -> f64 {
        (self.lat_max - self.lat_min) * (self.lon_max - self.lon_min)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            lat_min: self.lat_min.max(other.lat_min),
            lat_max: self.lat_max.min(other.lat_max),
            lon_min: self.lon_min.max(other.lon_min),
            lon_max: self.lon_max.min(other.lon_max),
        };
        (b.lat_min < b.lat_max && b.lon_min < b.lon_max).then_some(b)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: 0.5 * (self.lat_min + self.lat_max),
            lon: 0.5 * (self.lon_min + self.lon_max),
        }
    }
}

/// Bounding box of a `width_m` x `height_m` rectangle centered on `center`.
pub fn footprint_bbox(center: &GeoPoint, width_m: f64, height_m: f64) -> Result<BBox, GeoError> {
    if !(width_m.is_finite() && height_m.is_finite() && width_m > 0.0 && height_m > 0.0) {
        return Err(GeoError::InvalidExtent { width_m, height_m });
    }
    if center.lat.abs() >= POLAR_LIMIT_DEG {
        return Err(GeoError::PolarDegenerate(center.lat));
    }
    let half_lat = height_m / 2.0 / METERS_PER_DEGREE;
    let half_lon = width_m / 2.0 / (METERS_PER_DEGREE * center.lat.to_radians().cos());
    Ok(BBox {
        lat_min: center.lat - half_lat,
        lat_max: center.lat + half_lat,
        lon_min: center.lon - half_lon,
        lon_max: center.lon + half_lon,
    })
}

/// Metric ground-coverage rectangle around a center point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFootprint", into = "RawFootprint")]
pub struct GroundFootprint {
    center: GeoPoint,
    width_m: f64,
    height_m: f64,
    bbox: BBox,
}

#[derive(Serialize, Deserialize)]
struct RawFootprint {
    center: GeoPoint,
    width_m: f64,
    height_m: f64,
}

impl TryFrom<RawFootprint> for GroundFootprint {
    type Error = GeoError;

    fn try_from(raw: RawFootprint) -> Result<Self, Self::Error> {
        GroundFootprint::new(raw.center, raw.width_m, raw.height_m)
    }
}

impl From<GroundFootprint> for RawFootprint {
    fn from(f: GroundFootprint) -> Self {
        RawFootprint {
            center: f.center,
            width_m: f.width_m,
            height_m: f.height_m,
        }
    }
}

impl GroundFootprint {
    pub fn new(center: GeoPoint, width_m: f64, height_m: f64) -> Result<Self, GeoError> {
        let bbox = footprint_bbox(&center, width_m, height_m)?;
        Ok(Self {
            center,
            width_m,
            height_m,
            bbox,
        })
    }

    pub fn square(center: GeoPoint, side_m: f64) -> Result<Self, GeoError> {
        Self::new(center, side_m, side_m)
    }

    pub fn center(&self) -> GeoPoint {
        self.center
    }

    pub fn width_m(&self) -> f64 {
        self.width_m
    }

    pub fn height_m(&self) -> f64 {
        self.height_m
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    /// Boundary-inclusive point test against the bounding box.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        self.bbox.contains(p)
    }
}

/// Intersection area over the smaller footprint's area.
///
/// Both boxes live in the same local equirectangular frame, where areas are
/// degree areas times a common constant, so the ratio can be taken directly
/// in degrees. A footprint nested inside another yields 1.
pub fn overlap_ratio(a: &GroundFootprint, b: &GroundFootprint) -> f64 {
    let Some(inter) = a.bbox.intersection(&b.bbox) else {
        return 0.0;
    };
    let smaller = a.bbox.degree_area().min(b.bbox.degree_area());
    (inter.degree_area() / smaller).clamp(0.0, 1.0)
}

pub fn contains(f: &GroundFootprint, p: &GeoPoint) -> bool {
    f.contains(p)
}
