use geobridge_core::gates::{bh_gate, gate_cascade, GateStage, GateThresholds, Verdict};
use geobridge_core::raster::{self, box_blur, GrayImage};
use proptest::prelude::*;

fn textured() -> GrayImage {
    let bytes = include_bytes!("fixtures/textured_urban.png");
    raster::to_grayscale(&raster::decode_image(bytes).unwrap())
}

fn ramp() -> GrayImage {
    GrayImage::from_fn(256, 64, |c, _| c as u8)
}

#[test]
fn fixtures_fire_documented_stages() {
    let t = GateThresholds::default();
    let constant = gate_cascade(&GrayImage::filled(64, 64, 90), &t).unwrap();
    assert_eq!(constant.rejected_by, Some(GateStage::BlurHaze));
    assert_eq!(constant.stats.contrast_range, None);

    assert_eq!(
        gate_cascade(&ramp(), &t).unwrap().rejected_by,
        Some(GateStage::BlurHaze)
    );
    assert_eq!(
        gate_cascade(&box_blur(&textured(), 4), &t).unwrap().rejected_by,
        Some(GateStage::BlurHaze)
    );

    let report = gate_cascade(&textured(), &t).unwrap();
    assert_eq!(report.verdict, Verdict::Pass);
    assert_eq!(report.rejected_by, None);
    assert!(report.stats.noise_ratio.is_some());
}

#[test]
fn two_level_blocks_pass_bh_and_c_but_not_un() {
    let g = GrayImage::from_fn(64, 64, |c, r| if (c / 8 + r / 8) % 2 == 0 { 60 } else { 190 });
    let report = gate_cascade(&g, &GateThresholds::default()).unwrap();
    assert_eq!(report.rejected_by, Some(GateStage::UniformityNoise));
    assert_eq!(report.stats.entropy, Some(1.0));
}

#[test]
fn narrow_band_fails_contrast() {
    let g = GrayImage::from_fn(64, 64, |c, r| 100 + ((c * 7 + r * 3) % 11) as u8);
    let report = gate_cascade(
        &g,
        &GateThresholds {
            bh_std_min: 0.0,
            ..GateThresholds::default()
        },
    )
    .unwrap();
    assert_eq!(report.rejected_by, Some(GateStage::Contrast));
}

#[test]
fn blur_flip_is_monotone() {
    let t = GateThresholds::default();
    let g = textured();
    assert!(bh_gate(&g, &t).unwrap());
    let passes: Vec<bool> = (1..=9).map(|r| bh_gate(&box_blur(&g, r), &t).unwrap()).collect();
    let first_reject = passes.iter().position(|p| !p).expect("blur eventually rejects");
    assert!(passes[first_reject..].iter().all(|p| !p), "{passes:?}");
}

#[test]
fn reports_are_deterministic() {
    let t = GateThresholds::default();
    let a = serde_json::to_string(&gate_cascade(&textured(), &t).unwrap()).unwrap();
    let b = serde_json::to_string(&gate_cascade(&textured(), &t).unwrap()).unwrap();
    assert_eq!(a, b);
}

fn candidates() -> Vec<GrayImage> {
    vec![
        textured(),
        box_blur(&textured(), 1),
        box_blur(&textured(), 2),
        ramp(),
        GrayImage::from_fn(64, 64, |c, r| if (c / 8 + r / 8) % 2 == 0 { 60 } else { 190 }),
        GrayImage::from_fn(64, 64, |c, r| ((c * 37 + r * 91) % 256) as u8),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    /// Raising `*_min` floors or lowering the saturation ceiling never turns a
    /// reject into a pass.
    #[test]
    fn stricter_thresholds_never_rescue(
        base in (0.0f64..200.0, 0.0f64..40.0, 0.0f64..150.0, 0.0f64..8.0, 0.0f64..1.0, 0.0f64..1.0),
        bump in (0.0f64..200.0, 0.0f64..40.0, 0.0f64..150.0, 0.0f64..8.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let loose = GateThresholds {
            bh_lap_min: base.0,
            bh_std_min: base.1,
            c_range_min: base.2,
            un_entropy_min: base.3,
            un_sat_max: base.4,
            un_noise_ratio_min: base.5,
        };
        let strict = GateThresholds {
            bh_lap_min: loose.bh_lap_min + bump.0,
            bh_std_min: loose.bh_std_min + bump.1,
            c_range_min: loose.c_range_min + bump.2,
            un_entropy_min: (loose.un_entropy_min + bump.3).min(8.0),
            un_sat_max: loose.un_sat_max * bump.4,
            un_noise_ratio_min: (loose.un_noise_ratio_min + bump.5).min(1.0),
        };
        for g in candidates() {
            let l = gate_cascade(&g, &loose).unwrap();
            let s = gate_cascade(&g, &strict).unwrap();
            prop_assert!(l.passed() || !s.passed());
        }
    }
}
