//! Regenerates the bundled mini fixture.
//!
//! ```text
//! cargo run -p geobridge-cli --example make_fixture -- crates/cli/tests/fixtures/mini
//! ```
//!
//! A 320x240 raster at about 1 m per pixel near Paris, split into a 4x3 grid
//! of 80 px seed windows. Zones are painted so that each pipeline stage drops
//! something: a black strip on the left edge (screen), a noise patch (UN), a
//! hazy patch (C), open water (BH), two panoramas 15 m apart (dedup), one
//! panorama without a satellite tile and one without a street image (align),
//! and two windows with no panorama inside (harvest). The golden outputs are
//! written by running `seed` and `build` on the result.

use std::fs;
use std::path::Path;

use geobridge_core::geodesy::{AffineGeoTransform, GeoPoint, METERS_PER_DEGREE};
use geobridge_core::pipeline::provider::asset_key;
use geobridge_core::raster::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTH: u32 = 320;
const HEIGHT: u32 = 240;
const LAT0: f64 = 48.86;
const LON0: f64 = 2.30;

fn transform() -> [f64; 6] {
    let dlat = 1.0 / METERS_PER_DEGREE;
    let dlon = dlat / LAT0.to_radians().cos();
    [LON0, dlon, 0.0, LAT0, 0.0, -dlat]
}

fn clamp(v: f64) -> u8 {
    v.round().clamp(1.0, 254.0) as u8
}

fn paint(rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (WIDTH as usize, HEIGHT as usize);
    let mut base = vec![[110.0f64, 105.0, 100.0]; w * h];
    // City blocks: overlapping rectangles of random tone.
    for _ in 0..420 {
        let bw = rng.random_range(6..22);
        let bh = rng.random_range(6..22);
        let c0 = rng.random_range(0..w);
        let r0 = rng.random_range(0..h);
        let tone = rng.random_range(40.0..215.0);
        let tint = [
            rng.random_range(-15.0..15.0),
            rng.random_range(-15.0..15.0),
            rng.random_range(-15.0..15.0),
        ];
        for r in r0..(r0 + bh).min(h) {
            for c in c0..(c0 + bw).min(w) {
                for k in 0..3 {
                    base[r * w + c][k] = tone + tint[k];
                }
            }
        }
    }
    let mut px = vec![[0u8; 3]; w * h];
    for r in 0..h {
        for c in 0..w {
            let n: f64 = rng.random_range(-10.0..10.0);
            let b = base[r * w + c];
            px[r * w + c] = [clamp(b[0] + n), clamp(b[1] + n), clamp(b[2] + n)];
        }
    }
    let mut zone = |cols: std::ops::Range<usize>,
                    rows: std::ops::Range<usize>,
                    f: &mut dyn FnMut(&mut ChaCha8Rng, usize, usize) -> [u8; 3]| {
        for r in rows {
            for c in cols.clone() {
                px[r * w + c] = f(rng, c, r);
            }
        }
    };
    // Sensor noise: fine grain with no structure at block scale.
    zone(160..240, 0..80, &mut |rng, _, _| {
        let v = rng.random_range(30.0..225.0);
        [clamp(v), clamp(v), clamp(v)]
    });
    // Haze: textured but compressed into a narrow band.
    zone(240..320, 0..80, &mut |rng, _, _| {
        let v = rng.random_range(112.0..150.0);
        [clamp(v + 4.0), clamp(v + 2.0), clamp(v)]
    });
    // Open water: a slow gradient.
    zone(240..320, 160..240, &mut |_, c, r| {
        let v = 60.0 + 0.1 * (c as f64 - 240.0) + 0.05 * (r as f64 - 160.0);
        [clamp(v * 0.5), clamp(v * 0.8), clamp(v + 40.0)]
    });
    // Unfilled scan edge.
    zone(0..6, 0..h, &mut |_, _, _| [0, 0, 0]);

    let flat: Vec<u8> = px.into_iter().flatten().collect();
    RgbImage::new(WIDTH, HEIGHT, flat).expect("buffer matches dimensions")
}

fn solid_png(w: u32, h: u32, rgb: [u8; 3]) -> Vec<u8> {
    RgbImage::from_fn(w, h, |c, r| {
        [
            rgb[0].wrapping_add((c % 7) as u8),
            rgb[1],
            rgb[2].wrapping_add((r % 5) as u8),
        ]
    })
    .to_png()
    .expect("png encodes")
}

struct Pano {
    id: &'static str,
    col: f64,
    row: f64,
    street: bool,
    satellite: bool,
    text: &'static str,
}

fn main() {
    let out = std::env::args().nth(1).expect("usage: make_fixture <dir>");
    let out = Path::new(&out);
    let provider = out.join("provider");
    fs::create_dir_all(provider.join("street")).unwrap();
    fs::create_dir_all(provider.join("satellite")).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1652);
    let image = paint(&mut rng);
    fs::write(out.join("raster.png"), image.to_png().unwrap()).unwrap();
    let gdal = transform();
    let sidecar = serde_json::json!({
        "raster_id": "mini-paris",
        "transform": gdal,
        "country": "France",
        "split": "eval",
    });
    fs::write(
        out.join("raster.json"),
        format!("{}\n", serde_json::to_string_pretty(&sidecar).unwrap()),
    )
    .unwrap();

    let t = AffineGeoTransform::from_gdal(gdal).unwrap();
    let panos = [
        Pano {
            id: "p-edge",
            col: 45.0,
            row: 45.0,
            street: true,
            satellite: true,
            text: "A road along the unfilled edge of the scan.",
        },
        Pano {
            id: "p-north",
            col: 118.0,
            row: 44.0,
            street: true,
            satellite: true,
            text: "Mid-rise blocks around a small square.",
        },
        Pano {
            id: "p-noise",
            col: 200.0,
            row: 42.0,
            street: true,
            satellite: true,
            text: "Courtyard buildings beside a rail cutting.",
        },
        Pano {
            id: "p-haze",
            col: 280.0,
            row: 42.0,
            street: true,
            satellite: true,
            text: "Apartment rows under heavy haze.",
        },
        Pano {
            id: "p-center",
            col: 150.0,
            row: 115.0,
            street: true,
            satellite: true,
            text: "A boulevard crossing with a corner cafe.",
        },
        Pano {
            id: "p-center-dup",
            col: 165.0,
            row: 118.0,
            street: true,
            satellite: true,
            text: "The same boulevard fifteen meters east.",
        },
        Pano {
            id: "p-nosat",
            col: 260.0,
            row: 125.0,
            street: true,
            satellite: false,
            text: "Terraced houses near the river bank.",
        },
        Pano {
            id: "p-nostreet",
            col: 115.0,
            row: 195.0,
            street: false,
            satellite: true,
            text: "A market street with awnings.",
        },
        Pano {
            id: "p-south",
            col: 200.0,
            row: 195.0,
            street: true,
            satellite: true,
            text: "Low warehouses and a parking lot.",
        },
        Pano {
            id: "p-water",
            col: 280.0,
            row: 200.0,
            street: true,
            satellite: true,
            text: "A quay facing open water.",
        },
    ];
    let mut lines = String::new();
    let mut descriptions = serde_json::Map::new();
    for (i, p) in panos.iter().enumerate() {
        let loc = t.pixel_to_geo(p.col, p.row);
        let loc = GeoPoint::new(loc.lat(), loc.lon()).unwrap();
        lines.push_str(&serde_json::json!({"pano_id": p.id, "location": loc}).to_string());
        lines.push('\n');
        descriptions.insert(p.id.into(), p.text.into());
        let shade = [(40 + 20 * i) as u8, (200 - 15 * i) as u8, (90 + 9 * i) as u8];
        if p.street {
            fs::write(
                provider.join("street").join(format!("{}.png", asset_key(&loc))),
                solid_png(64, 32, shade),
            )
            .unwrap();
        }
        if p.satellite {
            fs::write(
                provider.join("satellite").join(format!("{}.png", asset_key(&loc))),
                solid_png(48, 48, [shade[2], shade[0], shade[1]]),
            )
            .unwrap();
        }
    }
    // Far from the raster; never inside any seed window.
    let far = GeoPoint::new(LAT0 + 0.1, LON0 + 0.1).unwrap();
    lines.push_str(&serde_json::json!({"pano_id": "p-far", "location": far}).to_string());
    lines.push('\n');
    fs::write(provider.join("panoramas.jsonl"), lines).unwrap();
    fs::write(
        out.join("descriptions.json"),
        format!("{}\n", serde_json::to_string_pretty(&descriptions).unwrap()),
    )
    .unwrap();
    fs::write(
        out.join("thresholds.txt"),
        "# quality gate thresholds\nbh_lap_min = 50\nbh_std_min = 10\nc_range_min = 60\n\
         un_entropy_min = 4.0\nun_sat_max = 0.05\nun_noise_ratio_min = 0.05\n",
    )
    .unwrap();

    let p = |name: &str| out.join(name).to_string_lossy().into_owned();
    let code = geobridge_cli::run([
        "geobridge",
        "seed",
        "--input",
        &p("raster.png"),
        "--transform",
        &p("raster.json"),
        "--out",
        &p("seeds.jsonl"),
    ]);
    assert_eq!(code, 0);
    let golden = scratch_dir(out);
    let code = geobridge_cli::run([
        "geobridge",
        "build",
        "--input",
        &p("raster.png"),
        "--transform",
        &p("raster.json"),
        "--seeds",
        &p("seeds.jsonl"),
        "--thresholds",
        &p("thresholds.txt"),
        "--provider-root",
        &p("provider"),
        "--descriptions",
        &p("descriptions.json"),
        "--out",
        &golden.to_string_lossy(),
    ]);
    assert_eq!(code, 0);
    fs::create_dir_all(out.join("golden")).unwrap();
    for f in ["manifest.jsonl", "drops.jsonl"] {
        fs::copy(golden.join(f), out.join("golden").join(f)).unwrap();
    }
    fs::remove_dir_all(&golden).unwrap();
}

fn scratch_dir(near: &Path) -> std::path::PathBuf {
    let d = near.join(".build-tmp");
    let _ = fs::remove_dir_all(&d);
    d
}
