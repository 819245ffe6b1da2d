use geobridge_core::evalmetrics::{
    aggregate, average_precision, average_precision_multi, one_percent_threshold, recall_at_1pct, recall_at_k,
    MetricConfig, MetricError, QueryJudgment,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_judgment(rng: &mut ChaCha8Rng, query_id: u64, gallery: usize) -> QueryJudgment {
    let mut ranking: Vec<u64> = (0..gallery as u64).collect();
    ranking.shuffle(rng);
    QueryJudgment {
        query_id,
        ground_truth: rng.random_range(0..gallery as u64),
        ranking,
        query_location: None,
    }
}

/// Brute force: find the ground truth by scanning, then apply each
/// definition literally.
struct Oracle {
    recall: Vec<f64>,
    ap: f64,
    r1pct: f64,
}

fn oracle(js: &[QueryJudgment], ks: &[usize]) -> Oracle {
    let n = js.len() as f64;
    let ranks: Vec<usize> = js
        .iter()
        .map(|j| {
            let mut r = 0;
            for (i, id) in j.ranking.iter().enumerate() {
                if *id == j.ground_truth {
                    r = i + 1;
                }
            }
            r
        })
        .collect();
    let g = js[0].ranking.len();
    let pct = ((g as f64) * 0.01).ceil().max(1.0) as usize;
    Oracle {
        recall: ks
            .iter()
            .map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
            .collect(),
        ap: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        r1pct: ranks.iter().filter(|&&r| r <= pct).count() as f64 / n,
    }
}

#[test]
fn aggregate_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let gallery = rng.random_range(1..=64);
        let js: Vec<QueryJudgment> = (0..100).map(|q| random_judgment(&mut rng, q, gallery)).collect();
        let ks: Vec<usize> = [1, 5, 10].into_iter().filter(|&k| k <= gallery).collect();
        let config = MetricConfig {
            k_list: ks.clone(),
            ..MetricConfig::default()
        };
        let report = aggregate(&js, &config, None).unwrap();
        let want = oracle(&js, &ks);
        assert_eq!(report.queries, 100);
        assert_eq!(report.gallery_size, gallery);
        for (got, w) in report.recall_at_k.iter().zip(&want.recall) {
            assert!((got.value - w).abs() < 1e-12);
        }
        assert!((report.average_precision - want.ap).abs() < 1e-12);
        assert!((report.recall_at_1pct - want.r1pct).abs() < 1e-12);
        assert_eq!(report.hit, None);
    }
}

#[test]
fn single_relevant_ap_is_reciprocal_rank() {
    for g in 1..=50u64 {
        for r in 1..=g {
            let mut ranking: Vec<u64> = (0..g).collect();
            ranking.swap(0, (r - 1) as usize);
            let j = QueryJudgment {
                query_id: 0,
                ranking,
                ground_truth: 0,
                query_location: None,
            };
            assert_eq!(j.rank(), r as usize);
            assert!((average_precision(&j) - 1.0 / r as f64).abs() < 1e-15);
        }
    }
    assert_eq!(average_precision_multi(&[3, 1, 2], &[1, 2]), (0.5 + 2.0 / 3.0) / 2.0);
    assert_eq!(average_precision_multi(&[3, 1, 2], &[]), 0.0);
}

#[test]
fn one_percent_equals_recall_at_ceiling() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for n in 1..=1000usize {
        assert_eq!(one_percent_threshold(n), ((n as f64) / 100.0).ceil().max(1.0) as usize);
        let j = random_judgment(&mut rng, 0, n);
        assert_eq!(recall_at_1pct(&j), recall_at_k(&j, one_percent_threshold(n)).unwrap());
    }
}

#[test]
fn query_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut js: Vec<QueryJudgment> = (0..50).map(|q| random_judgment(&mut rng, q, 30)).collect();
    let a = aggregate(&js, &MetricConfig::default(), None).unwrap();
    js.shuffle(&mut rng);
    let b = aggregate(&js, &MetricConfig::default(), None).unwrap();
    assert_eq!(a.queries, b.queries);
    for (x, y) in a.recall_at_k.iter().zip(&b.recall_at_k) {
        assert!((x.value - y.value).abs() < 1e-12);
    }
    assert!((a.average_precision - b.average_precision).abs() < 1e-12);
}

#[test]
fn recall_is_monotone_in_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let js: Vec<QueryJudgment> = (0..40).map(|q| random_judgment(&mut rng, q, 25)).collect();
    let config = MetricConfig {
        k_list: (1..=25).collect(),
        ..MetricConfig::default()
    };
    let report = aggregate(&js, &config, None).unwrap();
    assert!(report.recall_at_k.windows(2).all(|w| w[0].value <= w[1].value));
    assert_eq!(report.recall_at_k.last().unwrap().value, 1.0);
}

#[test]
fn malformed_inputs_are_rejected() {
    assert_eq!(
        aggregate(&[], &MetricConfig::default(), None),
        Err(MetricError::EmptyQuerySet)
    );
    let j = QueryJudgment {
        query_id: 4,
        ranking: vec![1, 2, 2],
        ground_truth: 1,
        query_location: None,
    };
    assert!(matches!(
        j.validate(),
        Err(MetricError::InvalidJudgment { query: 4, .. })
    ));
    let missing = QueryJudgment {
        ranking: vec![1, 2],
        ground_truth: 9,
        ..j
    };
    assert!(missing.validate().is_err());
    let ok = QueryJudgment {
        ground_truth: 2,
        ..missing
    };
    assert!(matches!(
        recall_at_k(&ok, 3),
        Err(MetricError::KOutOfRange { k: 3, gallery: 2 })
    ));
}
