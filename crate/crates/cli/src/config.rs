//! Config files, value precedence and provenance headers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL_VERSION: &str = concat!("geobridge/", env!("CARGO_PKG_VERSION"));

/// Values accepted in a `--config` TOML file. Keys mirror the long flags with
/// dashes replaced by underscores. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub transform: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub window: Option<u32>,
    pub stride: Option<u32>,
    pub scales: Option<Vec<u32>>,
    pub thresholds: Option<PathBuf>,
    pub provider_root: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub dim: Option<usize>,
    pub lr: Option<f64>,
    pub k_list: Option<Vec<usize>>,
    pub distance_list: Option<Vec<f64>>,
    pub queries: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("--config: cannot read {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("--config: {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.input,
            &mut cfg.transform,
            &mut cfg.seeds,
            &mut cfg.thresholds,
            &mut cfg.provider_root,
            &mut cfg.descriptions,
            &mut cfg.out,
            &mut cfg.queries,
            &mut cfg.gallery,
            &mut cfg.manifest,
            &mut cfg.judgments,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag value, else file value, else nothing.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// An input path that must exist; errors name the flag.
pub fn require_file(flag: &str, path: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let path = path.ok_or_else(|| CliError::Usage(format!("{flag} is required")))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("{flag}: no such file {}", path.display())));
    }
    Ok(path)
}

pub fn require_out(path: Option<PathBuf>) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Usage("--out is required".into()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Header line of every JSON output: tool version, the effective config and
/// its hash. Paths, output locations and thread counts are left out of the
/// config so that relocating inputs does not change outputs; input files are
/// represented by their content digests instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        let canonical = serde_json::to_string(&config).expect("json values serialize");
        Self {
            kind: kind.into(),
            tool_version: TOOL_VERSION.into(),
            config_hash: sha256_hex(canonical.as_bytes()),
            config,
        }
    }
}

pub fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("{flag}: cannot parse {s:?}")))
        })
        .collect()
}
