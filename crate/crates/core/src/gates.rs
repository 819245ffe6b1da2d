//! Three-stage quality cascade for candidate drone crops.
//!
//! Stages run in a fixed order and stop at the first rejection:
//!
//! 1. BH (blur-haze): Laplacian variance and pixel standard deviation floors.
//! 2. C (global contrast): floor on the 1st-99th percentile gray-level range.
//! 3. UN (uniformity-noise): entropy floor, saturated-pixel ceiling, and a
//!    floor on the block-mean variance ratio, which is near `1/64` for white
//!    noise and near 1 for real structure.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{self, GrayImage, RasterError};

/// Block edge used by the noise-signature statistic.
pub const NOISE_BLOCK: u32 = 8;

/// Minimum image side accepted by the full cascade.
pub const MIN_CASCADE_SIDE: u32 = NOISE_BLOCK;

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown threshold key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate threshold key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: {key} is not a number: {value:?}")]
    BadNumber { line: usize, key: String, value: String },
    #[error("threshold {key} = {value} out of range {range}")]
    OutOfRange {
        key: &'static str,
        value: f64,
        range: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub bh_lap_min: f64,
    pub bh_std_min: f64,
    pub c_range_min: f64,
    pub un_entropy_min: f64,
    pub un_sat_max: f64,
    pub un_noise_ratio_min: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            bh_lap_min: 50.0,
            bh_std_min: 10.0,
            c_range_min: 60.0,
            un_entropy_min: 4.0,
            un_sat_max: 0.05,
            un_noise_ratio_min: 0.05,
        }
    }
}

impl GateThresholds {
    const KEYS: [&'static str; 6] = [
        "bh_lap_min",
        "bh_std_min",
        "c_range_min",
        "un_entropy_min",
        "un_sat_max",
        "un_noise_ratio_min",
    ];

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "bh_lap_min" => &mut self.bh_lap_min,
            "bh_std_min" => &mut self.bh_std_min,
            "c_range_min" => &mut self.c_range_min,
            "un_entropy_min" => &mut self.un_entropy_min,
            "un_sat_max" => &mut self.un_sat_max,
            "un_noise_ratio_min" => &mut self.un_noise_ratio_min,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        let check = |key: &'static str, value: f64, hi: f64, range: &'static str| {
            if value.is_finite() && (0.0..=hi).contains(&value) {
                Ok(())
            } else {
                Err(ThresholdError::OutOfRange { key, value, range })
            }
        };
        check("bh_lap_min", self.bh_lap_min, f64::MAX, "[0, inf)")?;
        check("bh_std_min", self.bh_std_min, f64::MAX, "[0, inf)")?;
        check("c_range_min", self.c_range_min, f64::MAX, "[0, inf)")?;
        check("un_entropy_min", self.un_entropy_min, 8.0, "[0, 8]")?;
        check("un_sat_max", self.un_sat_max, 1.0, "[0, 1]")?;
        check("un_noise_ratio_min", self.un_noise_ratio_min, 1.0, "[0, 1]")?;
        Ok(())
    }

    /// Flat `key=value` form, one line per field in declaration order.
    pub fn to_kv_string(&self) -> String {
        let mut copy = *self;
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", copy.slot(k).map(|v| *v).unwrap_or_default()))
            .collect()
    }
}

/// Parses `key=value` lines over the defaults. Blank lines and `#` comments
/// are ignored; unknown or repeated keys are errors.
impl FromStr for GateThresholds {
    type Err = ThresholdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut t = GateThresholds::default();
        let mut seen = Vec::new();
        for (idx, raw) in s.lines().enumerate() {
            let line = idx + 1;
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let (key, value) = text.split_once('=').ok_or_else(|| ThresholdError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(ThresholdError::DuplicateKey { line, key: key.into() });
            }
            let parsed: f64 = value.parse().map_err(|_| ThresholdError::BadNumber {
                line,
                key: key.into(),
                value: value.into(),
            })?;
            *t.slot(key)
                .ok_or_else(|| ThresholdError::UnknownKey { line, key: key.into() })? = parsed;
            seen.push(key);
        }
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateStage {
    #[serde(rename = "BH")]
    BlurHaze,
    #[serde(rename = "C")]
    Contrast,
    #[serde(rename = "UN")]
    UniformityNoise,
}

impl fmt::Display for GateStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateStage::BlurHaze => "BH",
            GateStage::Contrast => "C",
            GateStage::UniformityNoise => "UN",
        })
    }
}

/// Statistics measured by the stages that ran. Later stages stay `None`
/// when an earlier stage rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub laplacian_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrast_range: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub black_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub white_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub verdict: Verdict,
    pub rejected_by: Option<GateStage>,
    pub stats: GateStats,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn bh_stage(g: &GrayImage, t: &GateThresholds, stats: &mut GateStats) -> Result<bool, RasterError> {
    let lap = raster::laplacian_variance(g)?;
    let var = raster::pixel_variance(g);
    stats.laplacian_variance = Some(lap);
    stats.pixel_variance = Some(var);
    Ok(lap >= t.bh_lap_min && var.sqrt() >= t.bh_std_min)
}

fn c_stage(g: &GrayImage, t: &GateThresholds, stats: &mut GateStats) -> bool {
    let range = raster::contrast_range(g, 1.0, 99.0);
    stats.contrast_range = Some(range);
    range >= t.c_range_min
}

fn un_stage(g: &GrayImage, t: &GateThresholds, stats: &mut GateStats) -> Result<bool, RasterError> {
    let entropy = raster::histogram_entropy(g);
    let (black, white) = raster::saturated_ratio(g);
    let noise = raster::block_mean_variance_ratio(g, NOISE_BLOCK)?;
    stats.entropy = Some(entropy);
    stats.black_ratio = Some(black);
    stats.white_ratio = Some(white);
    stats.noise_ratio = Some(noise);
    Ok(entropy >= t.un_entropy_min && black.max(white) <= t.un_sat_max && noise >= t.un_noise_ratio_min)
}

fn min_side(g: &GrayImage, min: u32) -> Result<(), RasterError> {
    if g.width() < min || g.height() < min {
        return Err(RasterError::ImageTooSmall {
            width: g.width(),
            height: g.height(),
            min,
        });
    }
    Ok(())
}

/// Blur-haze gate; `true` means pass.
pub fn bh_gate(g: &GrayImage, t: &GateThresholds) -> Result<bool, RasterError> {
    bh_stage(g, t, &mut GateStats::default())
}

/// Global contrast gate; `true` means pass.
pub fn c_gate(g: &GrayImage, t: &GateThresholds) -> bool {
    c_stage(g, t, &mut GateStats::default())
}

/// Uniformity-noise gate; `true` means pass.
pub fn un_gate(g: &GrayImage, t: &GateThresholds) -> Result<bool, RasterError> {
    min_side(g, NOISE_BLOCK)?;
    un_stage(g, t, &mut GateStats::default())
}

pub fn gate_cascade(g: &GrayImage, t: &GateThresholds) -> Result<GateReport, RasterError> {
    min_side(g, MIN_CASCADE_SIDE)?;
    let mut stats = GateStats::default();
    let fired = if !bh_stage(g, t, &mut stats)? {
        Some(GateStage::BlurHaze)
    } else if !c_stage(g, t, &mut stats) {
        Some(GateStage::Contrast)
    } else if !un_stage(g, t, &mut stats)? {
        Some(GateStage::UniformityNoise)
    } else {
        None
    };
    Ok(GateReport {
        verdict: if fired.is_some() {
            Verdict::Rejected
        } else {
            Verdict::Pass
        },
        rejected_by: fired,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_kv() {
        let d = GateThresholds::default();
        assert_eq!(d.to_kv_string().parse::<GateThresholds>().unwrap(), d);
        assert_eq!("".parse::<GateThresholds>().unwrap(), d);
    }

    #[test]
    fn kv_parsing_errors() {
        let t: GateThresholds = "# raised\nbh_lap_min = 1e9\n\nun_sat_max=0.1 # ceiling"
            .parse()
            .unwrap();
        assert_eq!(t.bh_lap_min, 1e9);
        assert_eq!(t.un_sat_max, 0.1);
        assert!(matches!(
            "nonsense".parse::<GateThresholds>(),
            Err(ThresholdError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            "bh_min=3".parse::<GateThresholds>(),
            Err(ThresholdError::UnknownKey { .. })
        ));
        assert!(matches!(
            "c_range_min=1\nc_range_min=2".parse::<GateThresholds>(),
            Err(ThresholdError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            "un_entropy_min=9".parse::<GateThresholds>(),
            Err(ThresholdError::OutOfRange { .. })
        ));
        assert!(matches!(
            "bh_std_min=-1".parse::<GateThresholds>(),
            Err(ThresholdError::OutOfRange { .. })
        ));
        assert!(matches!(
            "bh_std_min=ten".parse::<GateThresholds>(),
            Err(ThresholdError::BadNumber { .. })
        ));
    }

    #[test]
    fn constant_image_fails_first_stage() {
        let g = GrayImage::filled(32, 32, 120);
        let t = GateThresholds::default();
        assert!(!bh_gate(&g, &t).unwrap());
        assert!(!c_gate(&g, &t));
        let report = gate_cascade(&g, &t).unwrap();
        assert_eq!(report.rejected_by, Some(GateStage::BlurHaze));
        assert_eq!(report.verdict, Verdict::Rejected);
        assert!(report.stats.contrast_range.is_none());
        assert!(report.stats.entropy.is_none());
    }

    #[test]
    fn saturated_image_fails_un() {
        // 10% pure white on a rich ramp background.
        let g = GrayImage::from_fn(40, 40, |c, r| if r < 4 { 255 } else { ((c * 6 + r * 3) % 250) as u8 });
        let t = GateThresholds::default();
        let mut stats = GateStats::default();
        assert!(!un_stage(&g, &t, &mut stats).unwrap());
        assert_eq!(stats.white_ratio, Some(0.1));
    }

    #[test]
    fn report_json_shape() {
        let report = gate_cascade(&GrayImage::filled(8, 8, 0), &GateThresholds::default()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            r#"{"verdict":"rejected","rejected_by":"BH","stats":{"laplacian_variance":0.0,"pixel_variance":0.0}}"#
        );
    }

    #[test]
    fn tiny_images_rejected_as_errors() {
        let g = GrayImage::filled(7, 20, 3);
        assert!(gate_cascade(&g, &GateThresholds::default()).is_err());
        assert!(un_gate(&g, &GateThresholds::default()).is_err());
        assert!(bh_gate(&GrayImage::filled(2, 2, 0), &GateThresholds::default()).is_err());
    }
}
