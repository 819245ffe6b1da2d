//! Retrieval metrics: R@k, AP, R@1%, Hit and L@d.
//!
//! Every per-query metric is a function of one [`QueryJudgment`] (the full
//! ranking of the gallery for that query) plus, for the geometric metrics, the
//! location and footprint of gallery items. [`aggregate`] averages them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{self, GeoPoint, GroundFootprint};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("k = {k} outside 1..={gallery}")]
    KOutOfRange { k: usize, gallery: usize },
    #[error("query {query}: {reason}")]
    InvalidJudgment { query: u64, reason: String },
    #[error("gallery item {0} has no footprint")]
    MissingFootprint(u64),
    #[error("no location for item {0}")]
    MissingLocation(u64),
    #[error("query {0} has no true location")]
    MissingQueryLocation(u64),
    #[error("empty query set")]
    EmptyQuerySet,
    #[error("query {query} ranks a gallery that differs from the first query's")]
    InconsistentGallery { query: u64 },
    #[error("judgments line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One query's full ranking of the gallery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryJudgment {
    pub query_id: u64,
    /// Gallery ids, best match first. Must cover the whole gallery.
    pub ranking: Vec<u64>,
    pub ground_truth: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_location: Option<GeoPoint>,
}

impl QueryJudgment {
    /// Checks that the ranking has no duplicates and contains the ground truth.
    pub fn validate(&self) -> Result<(), MetricError> {
        let invalid = |reason: &str| MetricError::InvalidJudgment {
            query: self.query_id,
            reason: reason.into(),
        };
        if self.ranking.is_empty() {
            return Err(invalid("empty ranking"));
        }
        let mut seen = HashSet::with_capacity(self.ranking.len());
        if !self.ranking.iter().all(|id| seen.insert(*id)) {
            return Err(invalid("ranking repeats a gallery id"));
        }
        if !seen.contains(&self.ground_truth) {
            return Err(invalid("ground truth missing from ranking"));
        }
        Ok(())
    }

    pub fn gallery_size(&self) -> usize {
        self.ranking.len()
    }

    /// 1-based rank of the ground truth.
    pub fn rank(&self) -> usize {
        self.ranking
            .iter()
            .position(|&id| id == self.ground_truth)
            .map(|p| p + 1)
            .expect("validated judgment contains its ground truth")
    }
}

/// Where a gallery item is and what ground it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryItem {
    pub location: GeoPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<GroundFootprint>,
}

pub type GalleryGeometry = BTreeMap<u64, GalleryItem>;

pub fn recall_at_k(j: &QueryJudgment, k: usize) -> Result<u8, MetricError> {
    if k == 0 || k > j.gallery_size() {
        return Err(MetricError::KOutOfRange {
            k,
            gallery: j.gallery_size(),
        });
    }
    Ok(u8::from(j.rank() <= k))
}

/// Mean of precision@r over the ranks `r` of relevant items.
pub fn average_precision_multi(ranking: &[u64], relevant: &[u64]) -> f64 {
    let relevant: HashSet<u64> = relevant.iter().copied().collect();
    if relevant.is_empty() {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

pub fn average_precision(j: &QueryJudgment) -> f64 {
    average_precision_multi(&j.ranking, &[j.ground_truth])
}

/// Rank threshold for R@1%: `ceil(0.01 * n)`, at least 1.
pub fn one_percent_threshold(n: usize) -> usize {
    n.div_ceil(100).max(1)
}

pub fn recall_at_1pct(j: &QueryJudgment) -> u8 {
    u8::from(j.rank() <= one_percent_threshold(j.gallery_size()))
}

/// 1 iff the top-ranked item's footprint contains the query's true location.
pub fn hit(j: &QueryJudgment, gallery: &GalleryGeometry) -> Result<u8, MetricError> {
    let query = j.query_location.ok_or(MetricError::MissingQueryLocation(j.query_id))?;
    let top = j.ranking[0];
    let footprint = gallery
        .get(&top)
        .and_then(|g| g.footprint.as_ref())
        .ok_or(MetricError::MissingFootprint(top))?;
    Ok(u8::from(geodesy::contains(footprint, &query)))
}

/// 1 iff any of the top `k` items lies strictly closer than `d_m` meters.
pub fn location_recall(j: &QueryJudgment, gallery: &GalleryGeometry, d_m: f64, k: usize) -> Result<u8, MetricError> {
    if k == 0 || k > j.gallery_size() {
        return Err(MetricError::KOutOfRange {
            k,
            gallery: j.gallery_size(),
        });
    }
    let query = j.query_location.ok_or(MetricError::MissingQueryLocation(j.query_id))?;
    for id in &j.ranking[..k] {
        let item = gallery.get(id).ok_or(MetricError::MissingLocation(*id))?;
        if geodesy::haversine_distance(&query, &item.location) < d_m {
            return Ok(1);
        }
    }
    Ok(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub k_list: Vec<usize>,
    pub distances_m: Vec<f64>,
    /// Rank depth for L@d.
    pub location_k: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k_list: vec![1, 5, 10],
            distances_m: vec![50.0],
            location_k: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationRecallAt {
    pub distance_m: f64,
    pub k: usize,
    pub value: f64,
}

/// Means of every per-query metric over a judgment set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub gallery_size: usize,
    pub recall_at_k: Vec<RecallAt>,
    pub recall_at_1pct: f64,
    pub average_precision: f64,
    /// Present only when gallery geometry was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub location_recall: Vec<LocationRecallAt>,
}

/// Averages per-query metrics. `k` values above the gallery size are clamped
/// to it. Geometric metrics are computed only when `geometry` is given.
pub fn aggregate(
    judgments: &[QueryJudgment],
    config: &MetricConfig,
    geometry: Option<&GalleryGeometry>,
) -> Result<MetricReport, MetricError> {
    let first = judgments.first().ok_or(MetricError::EmptyQuerySet)?;
    let gallery: HashSet<u64> = first.ranking.iter().copied().collect();
    for j in judgments {
        j.validate()?;
        if j.ranking.len() != gallery.len() || !j.ranking.iter().all(|id| gallery.contains(id)) {
            return Err(MetricError::InconsistentGallery { query: j.query_id });
        }
    }
    let n = gallery.len();
    let ks: Vec<usize> = config.k_list.iter().map(|&k| k.clamp(1, n)).collect();
    let location_k = config.location_k.clamp(1, n);

    let mut recall = vec![0u64; ks.len()];
    let mut r1pct = 0u64;
    let mut ap = 0.0;
    let mut hits = 0u64;
    let mut loc = vec![0u64; config.distances_m.len()];
    for j in judgments {
        for (acc, &k) in recall.iter_mut().zip(&ks) {
            *acc += u64::from(recall_at_k(j, k)?);
        }
        r1pct += u64::from(recall_at_1pct(j));
        ap += average_precision(j);
        if let Some(g) = geometry {
            hits += u64::from(hit(j, g)?);
            for (acc, &d) in loc.iter_mut().zip(&config.distances_m) {
                *acc += u64::from(location_recall(j, g, d, location_k)?);
            }
        }
    }

    let q = judgments.len() as f64;
    let mean = |count: u64| count as f64 / q;
    Ok(MetricReport {
        queries: judgments.len(),
        gallery_size: n,
        recall_at_k: config
            .k_list
            .iter()
            .zip(&recall)
            .map(|(&k, &c)| RecallAt { k, value: mean(c) })
            .collect(),
        recall_at_1pct: mean(r1pct),
        average_precision: ap / q,
        hit: geometry.map(|_| mean(hits)),
        location_recall: match geometry {
            Some(_) => config
                .distances_m
                .iter()
                .zip(&loc)
                .map(|(&distance_m, &c)| LocationRecallAt {
                    distance_m,
                    k: location_k,
                    value: mean(c),
                })
                .collect(),
            None => Vec::new(),
        },
    })
}

impl fmt::Display for MetricReport {
    /// Two-column table, one metric per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows: Vec<(String, String)> = vec![
            ("queries".into(), self.queries.to_string()),
            ("gallery".into(), self.gallery_size.to_string()),
        ];
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        for r in &self.recall_at_k {
            rows.push((format!("R@{}", r.k), pct(r.value)));
        }
        rows.push(("R@1%".into(), pct(self.recall_at_1pct)));
        rows.push(("AP".into(), pct(self.average_precision)));
        if let Some(h) = self.hit {
            rows.push(("Hit".into(), pct(h)));
        }
        for l in &self.location_recall {
            let name = if l.k == 1 {
                format!("L@{}", l.distance_m)
            } else {
                format!("L@{} (top {})", l.distance_m, l.k)
            };
            rows.push((name, pct(l.value)));
        }
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        writeln!(f, "{:<w0$}  {:>w1$}", "metric", "value")?;
        writeln!(f, "{}  {}", "-".repeat(w0), "-".repeat(w1.max(5)))?;
        for (name, value) in rows {
            writeln!(f, "{name:<w0$}  {value:>w1$}")?;
        }
        Ok(())
    }
}

/// Reads one judgment per non-blank line.
pub fn read_judgments<R: BufRead>(r: R) -> Result<Vec<QueryJudgment>, MetricError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let parse = |message: String| MetricError::Parse { line: i + 1, message };
        let line = line.map_err(|e| parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judgment(rank: usize, n: usize) -> QueryJudgment {
        let mut ranking: Vec<u64> = (1..=n as u64).filter(|&id| id != 1).collect();
        ranking.insert(rank - 1, 1);
        QueryJudgment {
            query_id: 100,
            ranking,
            ground_truth: 1,
            query_location: None,
        }
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&judgment(1, 5), 1), Ok(1));
        assert_eq!(recall_at_k(&judgment(3, 5), 2), Ok(0));
        for r in 1..=5 {
            assert_eq!(recall_at_k(&judgment(r, 5), 5), Ok(1));
        }
        assert!(matches!(
            recall_at_k(&judgment(1, 5), 6),
            Err(MetricError::KOutOfRange { k: 6, gallery: 5 })
        ));
        assert!(recall_at_k(&judgment(1, 5), 0).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&judgment(1, 5)), 1.0);
        assert_eq!(average_precision(&judgment(2, 5)), 0.5);
        assert_eq!(average_precision(&judgment(10, 10)), 0.1);
        // Relevant at ranks 1 and 3: (1/1 + 2/3) / 2.
        let ap = average_precision_multi(&[7, 8, 9, 10], &[7, 9]);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn one_percent_examples() {
        assert_eq!(recall_at_1pct(&judgment(2, 200)), 1);
        assert_eq!(recall_at_1pct(&judgment(1, 50)), 1);
        assert_eq!(recall_at_1pct(&judgment(2, 50)), 0);
        assert_eq!(recall_at_1pct(&judgment(3, 200)), 0);
        assert_eq!(one_percent_threshold(1), 1);
        assert_eq!(one_percent_threshold(101), 2);
    }

    fn place(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn geometry() -> (GeoPoint, GalleryGeometry) {
        let q = place(48.0, 2.0);
        let mut g = GalleryGeometry::new();
        // 1: ground truth at the query. 2: 100 m square centered 30 m north.
        // 3: 1 km away.
        let north = |m: f64| place(48.0 + m / geodesy::METERS_PER_DEGREE, 2.0);
        for (id, at, side) in [(1, q, 50.0), (2, north(30.0), 100.0), (3, north(1000.0), 100.0)] {
            g.insert(
                id,
                GalleryItem {
                    location: at,
                    footprint: Some(GroundFootprint::square(at, side).unwrap()),
                },
            );
        }
        (q, g)
    }

    fn ranked(order: Vec<u64>, q: GeoPoint) -> QueryJudgment {
        QueryJudgment {
            query_id: 9,
            ranking: order,
            ground_truth: 1,
            query_location: Some(q),
        }
    }

    #[test]
    fn hit_examples() {
        let (q, g) = geometry();
        assert_eq!(hit(&ranked(vec![1, 2, 3], q), &g), Ok(1));
        assert_eq!(hit(&ranked(vec![2, 1, 3], q), &g), Ok(1));
        assert_eq!(hit(&ranked(vec![3, 1, 2], q), &g), Ok(0));
        let mut bare = g.clone();
        bare.get_mut(&3).unwrap().footprint = None;
        assert_eq!(
            hit(&ranked(vec![3, 1, 2], q), &bare),
            Err(MetricError::MissingFootprint(3))
        );
    }

    #[test]
    fn location_recall_examples() {
        let q = place(0.0, 0.0);
        let east = |m: f64| place(0.0, m / geodesy::METERS_PER_DEGREE);
        let mut g = GalleryGeometry::new();
        g.insert(
            1,
            GalleryItem {
                location: q,
                footprint: None,
            },
        );
        // Nudge until the haversine distance is exactly 50.0 m.
        let mut fifty = east(50.0);
        let mut lon = fifty.lon();
        while geodesy::haversine_distance(&q, &fifty) < 50.0 {
            lon = f64::from_bits(lon.to_bits() + 1);
            fifty = place(0.0, lon);
        }
        while geodesy::haversine_distance(&q, &fifty) > 50.0 {
            lon = f64::from_bits(lon.to_bits() - 1);
            fifty = place(0.0, lon);
        }
        assert_eq!(geodesy::haversine_distance(&q, &fifty), 50.0);
        g.insert(
            2,
            GalleryItem {
                location: fifty,
                footprint: None,
            },
        );
        g.insert(
            3,
            GalleryItem {
                location: east(60.0),
                footprint: None,
            },
        );
        g.insert(
            4,
            GalleryItem {
                location: east(10.0),
                footprint: None,
            },
        );

        assert_eq!(location_recall(&ranked(vec![1, 2, 3, 4], q), &g, 50.0, 1), Ok(1));
        assert_eq!(location_recall(&ranked(vec![2, 1, 3, 4], q), &g, 50.0, 1), Ok(0));
        assert_eq!(location_recall(&ranked(vec![3, 4, 1, 2], q), &g, 50.0, 2), Ok(1));
        assert_eq!(location_recall(&ranked(vec![3, 4, 1, 2], q), &g, 50.0, 1), Ok(0));
        g.remove(&3);
        assert_eq!(
            location_recall(&ranked(vec![3, 4, 1, 2], q), &g, 50.0, 1),
            Err(MetricError::MissingLocation(3))
        );
    }

    #[test]
    fn aggregate_examples() {
        let cfg = MetricConfig::default();
        let one = aggregate(&[judgment(1, 20)], &cfg, None).unwrap();
        assert!(one.recall_at_k.iter().all(|r| r.value == 1.0));
        assert_eq!(one.average_precision, 1.0);
        assert_eq!(one.recall_at_1pct, 1.0);
        assert_eq!(one.hit, None);

        let two = aggregate(&[judgment(1, 20), judgment(2, 20)], &cfg, None).unwrap();
        assert_eq!(two.recall_at_k[0], RecallAt { k: 1, value: 0.5 });
        assert_eq!(two.average_precision, 0.75);

        assert_eq!(aggregate(&[], &cfg, None), Err(MetricError::EmptyQuerySet));
    }

    #[test]
    fn aggregate_clamps_k_to_gallery() {
        let report = aggregate(&[judgment(3, 4)], &MetricConfig::default(), None).unwrap();
        let r10 = report.recall_at_k.iter().find(|r| r.k == 10).unwrap();
        assert_eq!(r10.value, 1.0);
    }

    #[test]
    fn aggregate_rejects_mismatched_galleries() {
        let mut other = judgment(1, 5);
        other.ranking[4] = 99;
        other.query_id = 7;
        assert_eq!(
            aggregate(&[judgment(1, 5), other], &MetricConfig::default(), None),
            Err(MetricError::InconsistentGallery { query: 7 })
        );
    }

    #[test]
    fn invalid_judgments() {
        let mut dup = judgment(1, 4);
        dup.ranking[3] = dup.ranking[2];
        assert!(dup.validate().is_err());
        let mut missing = judgment(1, 4);
        missing.ground_truth = 42;
        assert!(missing.validate().is_err());
    }

    #[test]
    fn report_renders_table_and_json() {
        let (q, g) = geometry();
        let report = aggregate(&[ranked(vec![1, 2, 3], q)], &MetricConfig::default(), Some(&g)).unwrap();
        let text = report.to_string();
        assert!(text.contains("R@1 "));
        assert!(text.contains("Hit"));
        assert!(text.contains("L@50"));
        let json = serde_json::to_string(&report).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn judgments_jsonl() {
        let text = "{\"query_id\":1,\"ranking\":[2,3],\"ground_truth\":3}\n\n\
                    {\"query_id\":2,\"ranking\":[3,2],\"ground_truth\":2,\"query_location\":{\"lat\":1.0,\"lon\":2.0}}\n";
        let js = read_judgments(text.as_bytes()).unwrap();
        assert_eq!(js.len(), 2);
        assert_eq!(js[1].query_location, Some(place(1.0, 2.0)));
        assert!(matches!(
            read_judgments("{\"query_id\":1}\n".as_bytes()),
            Err(MetricError::Parse { line: 1, .. })
        ));
    }
}
