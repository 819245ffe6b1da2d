//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use geobridge_core::embedding::{self, gbem, View};
use geobridge_core::evalmetrics::{self, GalleryGeometry, GalleryItem, MetricConfig, QueryJudgment};
use geobridge_core::gates::{self, GateThresholds};
use geobridge_core::geodesy::AffineGeoTransform;
use geobridge_core::objective::toy::{self, TrainConfig, TrainError};
use geobridge_core::pipeline::{
    self, BuildOptions, FixtureProvider, Provider, SeedRecord, SourceRaster, Split, StreetViewParams,
};
use geobridge_core::raster::{self, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, pick, require_file, require_out, FileConfig, Provenance};
use crate::{BuildArgs, Cli, CliError, Command, EvalArgs, GateArgs, SeedArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DROPS_FILE: &str = "drops.jsonl";
pub const ASSETS_DIR: &str = "assets";
pub const TRACE_FILE: &str = "trace.csv";
pub const ENCODERS_FILE: &str = "encoders.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
/// Held-out items encoded by `train-toy`.
pub const PROBE_SIZE: usize = 100;

pub fn dispatch(cli: Cli) -> Result<String, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Seed(a) => cmd_seed(a, &file),
        Command::Build(a) => cmd_build(a, &file),
        Command::TrainToy(a) => cmd_train_toy(a, &file),
        Command::Eval(a) => cmd_eval(a, &file),
        Command::GateReport(a) => cmd_gate_report(a, &file),
    }
}

fn read_input(flag: &str, path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Runtime(format!("{flag}: cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    fs::write(path, bytes).map_err(fail)
}

fn jsonl<H: Serialize, T: Serialize>(header: &H, records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    pipeline::write_jsonl(&mut buf, header, records).expect("writing to memory");
    buf
}

/// Sidecar describing where a raster sits on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub raster_id: String,
    /// GDAL order: origin x, pixel width, row rotation, origin y, column rotation, pixel height.
    pub transform: [f64; 6],
    pub country: String,
    pub split: Split,
}

fn load_sidecar(path: &Path) -> Result<(Sidecar, AffineGeoTransform, Vec<u8>), CliError> {
    let bytes = read_input("--transform", path)?;
    let sidecar: Sidecar =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("--transform: {}: {e}", path.display())))?;
    let transform =
        AffineGeoTransform::from_gdal(sidecar.transform).map_err(|e| CliError::Usage(format!("--transform: {e}")))?;
    transform
        .check_invertible()
        .map_err(|e| CliError::Usage(format!("--transform: {e}")))?;
    Ok((sidecar, transform, bytes))
}

fn load_raster(flag: &str, path: &Path) -> Result<(RgbImage, Vec<u8>), CliError> {
    let bytes = read_input(flag, path)?;
    let image =
        raster::decode_image(&bytes).map_err(|e| CliError::Usage(format!("{flag}: {}: {e}", path.display())))?;
    Ok((image, bytes))
}

fn load_thresholds(path: Option<PathBuf>) -> Result<GateThresholds, CliError> {
    match path {
        None => Ok(GateThresholds::default()),
        Some(p) => {
            let p = require_file("--thresholds", Some(p))?;
            let text = String::from_utf8(read_input("--thresholds", &p)?)
                .map_err(|_| CliError::Usage("--thresholds: not UTF-8".into()))?;
            text.parse()
                .map_err(|e| CliError::Usage(format!("--thresholds: {}: {e}", p.display())))
        }
    }
}

pub fn cmd_seed(a: SeedArgs, file: &FileConfig) -> Result<String, CliError> {
    let input = require_file("--input", pick(a.input, file.input.clone()))?;
    let sidecar_path = require_file("--transform", pick(a.transform, file.transform.clone()))?;
    let out = require_out(pick(a.out, file.out.clone()))?;
    let window = pick(a.window, file.window).unwrap_or(pipeline::DEFAULT_WINDOW);
    let stride = pick(a.stride, file.stride).unwrap_or(window);

    let (image, raster_bytes) = load_raster("--input", &input)?;
    let (sidecar, transform, _) = load_sidecar(&sidecar_path)?;
    let seeds = pipeline::generate_seeds(
        &sidecar.raster_id,
        &transform,
        image.width(),
        image.height(),
        window,
        stride,
    )
    .map_err(|e| CliError::Usage(format!("--window/--stride: {e}")))?;

    let header = Provenance::new(
        "seeds",
        json!({
            "raster_id": sidecar.raster_id,
            "transform": sidecar.transform,
            "window": window,
            "stride": stride,
            "inputs": { "raster": config::sha256_hex(&raster_bytes) },
        }),
    );
    write_output(&out, &jsonl(&header, &seeds))?;
    Ok(format!("{} seeds -> {}", seeds.len(), out.display()))
}

fn read_seeds(path: &Path) -> Result<(Vec<SeedRecord>, Vec<u8>), CliError> {
    let bytes = read_input("--seeds", path)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok((Vec::new(), bytes));
    }
    let (_, seeds): (serde_json::Value, Vec<SeedRecord>) =
        pipeline::read_jsonl(bytes.as_slice(), "seeds").map_err(|e| CliError::Usage(format!("--seeds: {e}")))?;
    Ok((seeds, bytes))
}

fn parse_scales(text: Option<String>, file: Option<Vec<u32>>) -> Result<Vec<u32>, CliError> {
    let scales = match text {
        Some(t) => config::parse_list("--scales", &t)?,
        None => file.unwrap_or_else(|| pipeline::SCALES_M.to_vec()),
    };
    pipeline::validate_scales(&scales).map_err(|e| CliError::Usage(format!("--scales: {e}")))?;
    Ok(scales)
}

pub fn cmd_build(a: BuildArgs, file: &FileConfig) -> Result<String, CliError> {
    let input = require_file("--input", pick(a.input, file.input.clone()))?;
    let sidecar_path = require_file("--transform", pick(a.transform, file.transform.clone()))?;
    let seeds_path = require_file("--seeds", pick(a.seeds, file.seeds.clone()))?;
    let provider_root = require_file("--provider-root", pick(a.provider_root, file.provider_root.clone()))?;
    let out = require_out(pick(a.out, file.out.clone()))?;
    let window = pick(a.window, file.window).unwrap_or(pipeline::DEFAULT_WINDOW);
    let scales = parse_scales(a.scales, file.scales.clone())?;
    let thresholds = load_thresholds(pick(a.thresholds, file.thresholds.clone()))?;
    let threads = pick(a.threads, file.threads).unwrap_or(0);
    let (descriptions, descriptions_hash) = match pick(a.descriptions, file.descriptions.clone()) {
        None => (BTreeMap::new(), None),
        Some(p) => {
            let p = require_file("--descriptions", Some(p))?;
            let bytes = read_input("--descriptions", &p)?;
            let map: BTreeMap<String, String> =
                serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("--descriptions: {e}")))?;
            (map, Some(config::sha256_hex(&bytes)))
        }
    };

    let (image, raster_bytes) = load_raster("--input", &input)?;
    let (sidecar, transform, sidecar_bytes) = load_sidecar(&sidecar_path)?;
    let (seeds, seeds_bytes) = read_seeds(&seeds_path)?;
    let provider =
        FixtureProvider::open(&provider_root).map_err(|e| CliError::Usage(format!("--provider-root: {e}")))?;

    let opts = BuildOptions {
        window,
        scales,
        thresholds,
        street_params: StreetViewParams::default(),
        descriptions,
        threads,
    };
    let source = SourceRaster {
        id: sidecar.raster_id.clone(),
        image,
        transform,
        country: sidecar.country.clone(),
        split: sidecar.split,
    };
    let mut built = pipeline::build(&source, &seeds, &provider, &opts).map_err(|e| match e {
        pipeline::PipelineError::Io(e) => CliError::Runtime(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;

    let provenance = Provenance::new(
        "build",
        json!({
            "window": opts.window,
            "scales": opts.scales,
            "thresholds": opts.thresholds,
            "street_params": opts.street_params,
            "provider": provider.identity(),
            "inputs": {
                "raster": config::sha256_hex(&raster_bytes),
                "transform": config::sha256_hex(&sidecar_bytes),
                "seeds": config::sha256_hex(&seeds_bytes),
                "descriptions": descriptions_hash,
            },
        }),
    );
    built.manifest.header.config_hash = Some(provenance.config_hash.clone());
    let drop_header = Provenance {
        kind: "drop-log".into(),
        ..provenance
    };

    let mut manifest = Vec::new();
    pipeline::write_manifest(&mut manifest, &built.manifest).expect("writing to memory");
    write_output(&out.join(MANIFEST_FILE), &manifest)?;
    write_output(&out.join(DROPS_FILE), &jsonl(&drop_header, &built.drops))?;
    for (key, bytes) in &built.assets {
        let name = key.strip_prefix("sha256:").unwrap_or(key);
        write_output(&out.join(ASSETS_DIR).join(format!("{name}.png")), bytes)?;
    }

    let c = built.counts;
    Ok(format!(
        "seeds {} harvested {} cropped {} screened {} gated {} deduped {} manifest {} fetch-drops {}\n\
         wrote {}",
        c.seeds,
        c.harvested,
        c.cropped,
        c.screened,
        c.gated,
        c.deduped,
        c.manifest,
        c.fetch_drops,
        out.display()
    ))
}

#[derive(Serialize)]
struct EncodersFile<'a> {
    provenance: &'a Provenance,
    tau: f64,
    /// Row-major `dim x input_dim` weights per view.
    weights: BTreeMap<&'static str, Vec<Vec<f64>>>,
}

pub fn cmd_train_toy(a: TrainArgs, file: &FileConfig) -> Result<String, CliError> {
    let out = require_out(pick(a.out, file.out.clone()))?;
    let defaults = TrainConfig::default();
    let dim = pick(a.dim, file.dim).unwrap_or(defaults.dim);
    let cfg = TrainConfig {
        batch: pick(a.batch, file.batch).unwrap_or(defaults.batch),
        dim,
        input_dim: dim,
        latent_dim: dim,
        lr: pick(a.lr, file.lr).unwrap_or(defaults.lr),
        steps: pick(a.steps, file.steps).unwrap_or(defaults.steps),
        seed: pick(a.seed, file.seed).unwrap_or(defaults.seed),
        learn_tau: !a.fixed_tau,
        symmetric: a.symmetric,
        ..defaults
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = toy::train_toy(&cfg).map_err(|e| match e {
        TrainError::Config(m) => CliError::Usage(m),
        e @ TrainError::Diverged { .. } => CliError::Runtime(e.to_string()),
        e => CliError::Runtime(e.to_string()),
    })?;

    let mut trace = Vec::new();
    toy::write_trace_csv(&mut trace, &outcome.trace).expect("writing to memory");
    write_output(&out.join(TRACE_FILE), &trace)?;

    let probes = toy::probe_embeddings(&outcome, cfg.seed, PROBE_SIZE).map_err(|e| CliError::Runtime(e.to_string()))?;
    for v in [View::Drone, View::Panorama, View::Satellite, View::Text] {
        write_output(&out.join(format!("probe_{v}.gbem")), &gbem::encode(&probes[v]))?;
    }

    let provenance = Provenance::new("encoders", serde_json::to_value(&cfg).expect("config serializes"));
    let weights = [View::Drone, View::Panorama, View::Satellite, View::Text]
        .into_iter()
        .map(|v| {
            let w = outcome.encoders[v].weight();
            (v.short(), w.rows().into_iter().map(|r| r.to_vec()).collect())
        })
        .collect();
    let enc = EncodersFile {
        provenance: &provenance,
        tau: outcome.temperature.tau(),
        weights,
    };
    let mut enc_json = serde_json::to_vec_pretty(&enc).expect("encoders serialize");
    enc_json.push(b'\n');
    write_output(&out.join(ENCODERS_FILE), &enc_json)?;

    let first = outcome.trace.first().expect("trace has the initial row");
    let last = outcome.trace.last().expect("trace has the initial row");
    let mut summary = format!(
        "steps {} L_total {:.6} -> {:.6} tau {:.6}\n",
        cfg.steps, first.l_total, last.l_total, last.tau
    );
    for ((q, g), r) in toy::cross_view_recall(&probes).map_err(|e| CliError::Runtime(e.to_string()))? {
        let _ = writeln!(summary, "R@1 {q}->{g} {r:.3}");
    }
    let _ = write!(summary, "wrote {}", out.display());
    Ok(summary)
}

fn read_gbem(flag: &str, path: &Path) -> Result<embedding::EmbeddingBatch, CliError> {
    let bytes = read_input(flag, path)?;
    gbem::decode(&bytes).map_err(|e| CliError::Usage(format!("{flag}: {}: {e}", path.display())))
}

fn parse_metric_config(a_k: Option<String>, a_d: Option<String>, file: &FileConfig) -> Result<MetricConfig, CliError> {
    let defaults = MetricConfig::default();
    let k_list = match a_k {
        Some(t) => config::parse_list("--k-list", &t)?,
        None => file.k_list.clone().unwrap_or(defaults.k_list),
    };
    let distances_m = match a_d {
        Some(t) => config::parse_list("--distance-list", &t)?,
        None => file.distance_list.clone().unwrap_or(defaults.distances_m),
    };
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(CliError::Usage("--k-list: values must be positive".into()));
    }
    if distances_m.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(CliError::Usage("--distance-list: values must be positive".into()));
    }
    Ok(MetricConfig {
        k_list,
        distances_m,
        location_k: defaults.location_k,
    })
}

/// Judgments for every query, ground truth = gallery item with the same id.
pub fn judge(
    queries: &embedding::EmbeddingBatch,
    gallery: &embedding::EmbeddingBatch,
) -> Result<Vec<QueryJudgment>, CliError> {
    if queries.dim() != gallery.dim() {
        return Err(CliError::Usage(format!(
            "query dimension {} differs from gallery dimension {}",
            queries.dim(),
            gallery.dim()
        )));
    }
    let rankings = embedding::rank_all(queries, gallery).map_err(|e| CliError::Usage(e.to_string()))?;
    queries
        .ids()
        .iter()
        .zip(rankings)
        .map(|(&id, ranking)| {
            if !gallery.ids().contains(&id) {
                return Err(CliError::Usage(format!("query {id} has no gallery counterpart")));
            }
            Ok(QueryJudgment {
                query_id: id,
                ranking,
                ground_truth: id,
                query_location: None,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ReportFile<'a> {
    provenance: &'a Provenance,
    metrics: &'a evalmetrics::MetricReport,
}

pub fn cmd_eval(a: EvalArgs, file: &FileConfig) -> Result<String, CliError> {
    let out = require_out(pick(a.out, file.out.clone()))?;
    let metric_cfg = parse_metric_config(a.k_list, a.distance_list, file)?;
    let mut inputs = BTreeMap::new();

    let mut judgments = match pick(a.judgments, file.judgments.clone()) {
        Some(p) => {
            let p = require_file("--judgments", Some(p))?;
            let bytes = read_input("--judgments", &p)?;
            inputs.insert("judgments", config::sha256_hex(&bytes));
            evalmetrics::read_judgments(bytes.as_slice()).map_err(|e| CliError::Usage(format!("--judgments: {e}")))?
        }
        None => {
            let qp = require_file("--queries", pick(a.queries, file.queries.clone()))?;
            let gp = require_file("--gallery", pick(a.gallery, file.gallery.clone()))?;
            let queries = read_gbem("--queries", &qp)?;
            let gallery = read_gbem("--gallery", &gp)?;
            inputs.insert("queries", config::sha256_hex(&read_input("--queries", &qp)?));
            inputs.insert("gallery", config::sha256_hex(&read_input("--gallery", &gp)?));
            judge(&queries, &gallery)?
        }
    };

    let geometry = match pick(a.manifest, file.manifest.clone()) {
        None => None,
        Some(p) => {
            let p = require_file("--manifest", Some(p))?;
            let bytes = read_input("--manifest", &p)?;
            inputs.insert("manifest", config::sha256_hex(&bytes));
            let manifest =
                pipeline::read_manifest(bytes.as_slice()).map_err(|e| CliError::Usage(format!("--manifest: {e}")))?;
            let mut geometry = GalleryGeometry::new();
            for inst in &manifest.instances {
                let footprint = inst
                    .footprint()
                    .map_err(|e| CliError::Usage(format!("--manifest: {e}")))?;
                geometry.insert(
                    inst.instance_id,
                    GalleryItem {
                        location: inst.location,
                        footprint: Some(footprint),
                    },
                );
            }
            for j in &mut judgments {
                if j.query_location.is_none() {
                    let item = geometry
                        .get(&j.query_id)
                        .ok_or_else(|| CliError::Usage(format!("--manifest: no instance {} for query", j.query_id)))?;
                    j.query_location = Some(item.location);
                }
            }
            Some(geometry)
        }
    };

    let report = evalmetrics::aggregate(&judgments, &metric_cfg, geometry.as_ref())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let provenance = Provenance::new("metric-report", json!({ "metrics": metric_cfg, "inputs": inputs }));
    let mut report_json = serde_json::to_vec_pretty(&ReportFile {
        provenance: &provenance,
        metrics: &report,
    })
    .expect("report serializes");
    report_json.push(b'\n');
    write_output(&out.join(REPORT_JSON), &report_json)?;
    let table = report.to_string();
    write_output(&out.join(REPORT_TXT), table.as_bytes())?;

    let mut judgments_out = Vec::new();
    for j in &judgments {
        serde_json::to_writer(&mut judgments_out, j).expect("judgment serializes");
        judgments_out.push(b'\n');
    }
    write_output(&out.join(JUDGMENTS_FILE), &judgments_out)?;
    Ok(format!("{table}wrote {}", out.display()))
}

pub fn cmd_gate_report(a: GateArgs, file: &FileConfig) -> Result<String, CliError> {
    let input = require_file("--input", pick(a.input, file.input.clone()))?;
    let thresholds = load_thresholds(pick(a.thresholds, file.thresholds.clone()))?;
    let (image, _) = load_raster("--input", &input)?;
    let report = gates::gate_cascade(&raster::to_grayscale(&image), &thresholds)
        .map_err(|e| CliError::Usage(format!("--input: {e}")))?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(out) = pick(a.out, file.out.clone()) {
        write_output(&out, format!("{text}\n").as_bytes())?;
    }
    Ok(text)
}
