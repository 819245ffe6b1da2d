use geobridge_core::embedding::gbem::{self, GbemError};
use geobridge_core::embedding::{rank_all, score_matrix, top_k, EmbeddingBatch, Temperature, View};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Unit rows whose entries are exactly representable as `f32`.
fn f32_batch(seed: u64, view: View, n: usize, d: usize) -> EmbeddingBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let unit = EmbeddingBatch::from_raw(view, (0..n as u64).map(|i| i * 3 + 1).collect(), &raw).unwrap();
    let rounded = unit.matrix().mapv(|v| v as f32 as f64);
    EmbeddingBatch::new(view, unit.ids().to_vec(), rounded).unwrap()
}

/// Byte layout written by hand: header, then `(id, f32 * d)` records.
fn reference_bytes(b: &EmbeddingBatch) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"GBEM");
    out.push(1);
    out.push(b.view().tag());
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(&(b.dim() as u32).to_le_bytes());
    for (i, id) in b.ids().iter().enumerate() {
        out.extend_from_slice(&id.to_le_bytes());
        for j in 0..b.dim() {
            out.extend_from_slice(&(b.matrix()[[i, j]] as f32).to_le_bytes());
        }
    }
    out
}

#[test]
fn gbem_round_trip_is_bit_exact() {
    let batch = f32_batch(11, View::Text, 1000, 32);
    let bytes = gbem::encode(&batch);
    assert_eq!(bytes, reference_bytes(&batch));
    let back = gbem::decode(&bytes).unwrap();
    assert_eq!(back.ids(), batch.ids());
    assert_eq!(back.view(), View::Text);
    for (a, b) in back.matrix().iter().zip(batch.matrix()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(gbem::encode(&back), bytes);
}

#[test]
fn gbem_rejects_corruption() {
    let batch = f32_batch(12, View::Drone, 4, 8);
    let good = gbem::encode(&batch);

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(gbem::decode(&magic), Err(GbemError::BadMagic(_))));

    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(gbem::decode(&version), Err(GbemError::UnsupportedVersion(2))));

    let mut tag = good.clone();
    tag[5] = 9;
    assert!(matches!(gbem::decode(&tag), Err(GbemError::BadViewTag(9))));

    assert!(matches!(
        gbem::decode(&good[..good.len() - 1]),
        Err(GbemError::Truncated(_))
    ));
    assert!(matches!(gbem::decode(&good[..10]), Err(GbemError::Truncated(_))));

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(gbem::decode(&trailing), Err(GbemError::TrailingBytes(1))));

    // Double the first value of record 0 so the row is no longer unit norm.
    let mut scaled = good.clone();
    let at = 18 + 8;
    let v = f32::from_le_bytes(scaled[at..at + 4].try_into().unwrap());
    scaled[at..at + 4].copy_from_slice(&(v * 2.0 + 0.5).to_le_bytes());
    assert!(matches!(
        gbem::decode(&scaled),
        Err(GbemError::Record { record: 0, .. })
    ));

    let mut nan = good;
    nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(gbem::decode(&nan), Err(GbemError::Record { record: 0, .. })));
}

fn sort_oracle(q: &EmbeddingBatch, row: usize, g: &EmbeddingBatch) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = g
        .ids()
        .iter()
        .enumerate()
        .map(|(j, &id)| {
            (
                id,
                (0..q.dim()).map(|c| q.matrix()[[row, c]] * g.matrix()[[j, c]]).sum(),
            )
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn score_matrix_transposes(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, d in 1usize..10) {
        let q = f32_batch(seed, View::Drone, n, d);
        let g = f32_batch(seed ^ 1, View::Satellite, m, d);
        let t = Temperature::default();
        let qg = score_matrix(&q, &g, t).unwrap().values;
        let gq = score_matrix(&g, &q, t).unwrap().values;
        for ((i, j), v) in qg.indexed_iter() {
            prop_assert!((v - gq[[j, i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_does_not_change_rankings(seed in any::<u64>(), tau in 0.01f64..5.0) {
        let q = f32_batch(seed, View::Text, 6, 5);
        let g = f32_batch(seed ^ 7, View::Panorama, 9, 5);
        let a = score_matrix(&q, &g, Temperature::default()).unwrap().values;
        let b = score_matrix(&q, &g, Temperature::from_tau(tau).unwrap()).unwrap().values;
        for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
            let order = |r: ndarray::ArrayView1<f64>| {
                let mut idx: Vec<usize> = (0..r.len()).collect();
                idx.sort_by(|&x, &y| r[y].total_cmp(&r[x]).then(x.cmp(&y)));
                idx
            };
            prop_assert_eq!(order(ra), order(rb));
        }
    }

    #[test]
    fn top_k_matches_full_sort(seed in any::<u64>(), n in 1usize..40, d in 1usize..8, k_frac in 0.0f64..1.0) {
        let g = f32_batch(seed, View::Satellite, n, d);
        let q = f32_batch(seed ^ 3, View::Drone, 3, d);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        for row in 0..q.len() {
            let got = top_k(&q.row(row), &g, k).unwrap();
            let want = sort_oracle(&q, row, &g);
            prop_assert_eq!(got.len(), k);
            for (a, b) in got.iter().zip(&want) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!((a.1 - b.1).abs() < 1e-12);
            }
        }
        prop_assert!(top_k(&q.row(0), &g, 0).is_err());
        prop_assert!(top_k(&q.row(0), &g, n + 1).is_err());
    }

    #[test]
    fn rank_all_lists_every_gallery_id(seed in any::<u64>(), n in 1usize..20) {
        let q = f32_batch(seed, View::Drone, 4, 6);
        let g = f32_batch(seed ^ 5, View::Satellite, n, 6);
        for ranking in rank_all(&q, &g).unwrap() {
            let mut sorted = ranking.clone();
            sorted.sort_unstable();
            let mut ids = g.ids().to_vec();
            ids.sort_unstable();
            prop_assert_eq!(sorted, ids);
        }
    }
}
