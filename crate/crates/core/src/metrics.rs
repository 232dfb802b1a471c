//! Retrieval metrics over ranked gallery lists with graded relevance.
//!
//! Every metric takes the relevance levels of the gallery in ranked order
//! (`ranked[i]` is the level of the item at position `i + 1`). An item is
//! relevant at scale `l` when its level is `<= l`. Metrics return `None` for
//! vacuous queries; [`evaluate`] excludes those from the averages and counts
//! them.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{DenseMatrix, ImageId};
use crate::error::{Error, Result};
use crate::geo::RelevanceTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Graded gain per level `0..=L`; non-increasing with `gains[L] == 0`.
    pub gains: Vec<f64>,
    /// Cut-offs for R@K.
    pub ks: Vec<usize>,
}

impl MetricConfig {
    /// Linear gains `(L - l) / L` and K in {1, 5, 10}.
    pub fn for_scales(num_scales: usize) -> Self {
        let l = num_scales as f64;
        Self {
            gains: (0..=num_scales).map(|i| (l - i as f64) / l).collect(),
            ks: vec![1, 5, 10],
        }
    }

    pub fn num_scales(&self) -> usize {
        self.gains.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.len() < 2 {
            return Err(Error::Config("gains need at least two levels".into()));
        }
        if self.gains.windows(2).any(|w| w[0] < w[1]) || self.gains.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Config(format!(
                "gains must be non-negative and non-increasing: {:?}",
                self.gains
            )));
        }
        if *self.gains.last().unwrap() != 0.0 {
            return Err(Error::Config(
                "gain of the pure-negative level must be 0".into(),
            ));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("R@K cut-offs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gallery ids of one query, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub query: ImageId,
    /// Gallery column indices in ranked order.
    pub order: Vec<usize>,
}

impl RankedList {
    /// Orders gallery columns by score; ties go to the smaller image id.
    pub fn from_scores(
        query: ImageId,
        scores: &[f64],
        gallery_ids: &[ImageId],
        descending: bool,
    ) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            let primary = if descending {
                scores[b].total_cmp(&scores[a])
            } else {
                scores[a].total_cmp(&scores[b])
            };
            primary.then(gallery_ids[a].cmp(&gallery_ids[b]))
        });
        Self { query, order }
    }

    pub fn levels(&self, relevance_row: &[u8]) -> Vec<u8> {
        self.order.iter().map(|&c| relevance_row[c]).collect()
    }
}

/// 1 when any item relevant at `scale` sits in the top `k` (clamped to the list length).
pub fn recall_at_k(ranked: &[u8], scale: usize, k: usize) -> Option<f64> {
    if !ranked.iter().any(|&l| l as usize <= scale) {
        return None;
    }
    let k = k.max(1).min(ranked.len());
    Some(if ranked[..k].iter().any(|&l| l as usize <= scale) {
        1.0
    } else {
        0.0
    })
}

pub fn average_precision(ranked: &[u8], scale: usize) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in ranked.iter().enumerate() {
        if l as usize <= scale {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Hierarchical AP with `H-rank(k) = rel(k) + sum_{j before k} min(rel(j), rel(k))`.
pub fn h_ap(ranked: &[u8], gains: &[f64]) -> Option<f64> {
    let mut seen = vec![0usize; gains.len()];
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &l) in ranked.iter().enumerate() {
        let rel = gains[l as usize];
        if rel > 0.0 {
            let before: f64 = seen
                .iter()
                .zip(gains)
                .map(|(&c, &g)| c as f64 * g.min(rel))
                .sum();
            num += (rel + before) / (i + 1) as f64;
            den += rel;
        }
        seen[l as usize] += 1;
    }
    (den > 0.0).then(|| num / den)
}

/// Average set intersection against the tie-aware ideal top-i sets.
///
/// For each `i <= m` (the number of positive-gain items), levels that fit
/// entirely in the ideal top `i` contribute all their predicted-top-`i`
/// members; the level straddling position `i` contributes at most the slots
/// left over.
pub fn asi(ranked: &[u8], gains: &[f64]) -> Option<f64> {
    let levels = gains.len();
    let mut total = vec![0usize; levels];
    for &l in ranked {
        total[l as usize] += 1;
    }
    let m: usize = ranked.iter().filter(|&&l| gains[l as usize] > 0.0).count();
    if m == 0 {
        return None;
    }
    let mut in_top = vec![0usize; levels];
    let mut sum = 0.0;
    for i in 1..=m {
        in_top[ranked[i - 1] as usize] += 1;
        let mut cum = 0usize;
        let mut inter = 0usize;
        for l in 0..levels {
            if cum + total[l] <= i {
                inter += in_top[l];
                cum += total[l];
                if cum == i {
                    break;
                }
            } else {
                inter += in_top[l].min(i - cum);
                break;
            }
        }
        sum += inter as f64 / i as f64;
    }
    Some(sum / m as f64)
}

/// NDCG over the full list with integer gains `L - level` and `2^g - 1` gain transform.
pub fn ndcg(ranked: &[u8], num_scales: usize) -> Option<f64> {
    let gain = |l: u8| ((num_scales - (l as usize).min(num_scales)) as f64).exp2() - 1.0;
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .enumerate()
        .map(|(i, &l)| gain(l) / discount(i))
        .sum();
    let mut ideal = ranked.to_vec();
    ideal.sort_unstable();
    let idcg: f64 = ideal
        .iter()
        .enumerate()
        .map(|(i, &l)| gain(l) / discount(i))
        .sum();
    (idcg > 0.0).then(|| dcg / idcg)
}

/// Per-query metric values; `None` marks an excluded (vacuous) query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryMetrics {
    pub ap: Vec<Option<f64>>,
    /// `recall[scale][k_index]`.
    pub recall: Vec<Vec<Option<f64>>>,
    pub hap: Option<f64>,
    pub asi: Option<f64>,
    pub ndcg: Option<f64>,
}

pub fn query_metrics(ranked: &[u8], config: &MetricConfig) -> QueryMetrics {
    let l = config.num_scales();
    QueryMetrics {
        ap: (0..l).map(|s| average_precision(ranked, s)).collect(),
        recall: (0..l)
            .map(|s| {
                config
                    .ks
                    .iter()
                    .map(|&k| recall_at_k(ranked, s, k))
                    .collect()
            })
            .collect(),
        hap: h_ap(ranked, &config.gains),
        asi: asi(ranked, &config.gains),
        ndcg: ndcg(ranked, l),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleMetrics {
    pub map: f64,
    /// R@K aligned with [`MetricReport::ks`].
    pub recall: Vec<f64>,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub scales: Vec<ScaleMetrics>,
    pub map_overall: f64,
    /// Mean over scales of R@K, aligned with `ks`.
    pub recall_overall: Vec<f64>,
    pub hap: f64,
    pub asi: f64,
    pub ndcg: f64,
    /// Queries excluded from at least one metric for lack of relevant items.
    pub excluded_queries: usize,
    pub num_queries: usize,
}

pub fn scale_name(scale: usize, num_scales: usize) -> String {
    match (num_scales, scale) {
        (3, 0) => "small".into(),
        (3, 1) => "middle".into(),
        (3, 2) => "large".into(),
        _ => format!("s{scale}"),
    }
}

impl MetricReport {
    /// Flat `(field, value)` pairs, e.g. `map_small`, `r1_overall`, `hap`.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let l = self.scales.len();
        let mut out = Vec::new();
        for (s, m) in self.scales.iter().enumerate() {
            out.push((format!("map_{}", scale_name(s, l)), m.map));
        }
        out.push(("map_overall".into(), self.map_overall));
        for (ki, k) in self.ks.iter().enumerate() {
            for (s, m) in self.scales.iter().enumerate() {
                out.push((format!("r{k}_{}", scale_name(s, l)), m.recall[ki]));
            }
            out.push((format!("r{k}_overall"), self.recall_overall[ki]));
        }
        out.push(("hap".into(), self.hap));
        out.push(("asi".into(), self.asi));
        out.push(("ndcg".into(), self.ndcg));
        out.push(("excluded_queries".into(), self.excluded_queries as f64));
        out
    }

    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (k, v) in self.fields() {
            let value = if k == "excluded_queries" {
                serde_json::json!(self.excluded_queries)
            } else {
                serde_json::json!(v)
            };
            map.insert(k, value);
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("finite metric values")
    }

    /// One row per metric and scale: `metric,scale,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,scale,value\n");
        for (k, v) in self.fields() {
            let (metric, scale) = match k.split_once('_') {
                Some((m, sc)) if m != "excluded" => (m.to_string(), sc.to_string()),
                _ => (k.clone(), "all".to_string()),
            };
            writeln!(s, "{metric},{scale},{v}").unwrap();
        }
        s
    }

    pub fn r1_overall(&self) -> f64 {
        self.ks
            .iter()
            .position(|&k| k == 1)
            .map_or(f64::NAN, |i| self.recall_overall[i])
    }
}

/// Query-by-gallery scores and their ranking direction.
#[derive(Clone, Copy, Debug)]
pub enum Scores<'a> {
    Similarity(&'a DenseMatrix),
    Distance(&'a DenseMatrix),
}

impl Scores<'_> {
    fn matrix(&self) -> &DenseMatrix {
        match self {
            Scores::Similarity(m) | Scores::Distance(m) => m,
        }
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut excluded = 0usize;
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => excluded += 1,
        }
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, excluded)
}

/// Ranks every query's gallery and averages all metrics over queries.
pub fn evaluate(
    query_ids: &[ImageId],
    gallery_ids: &[ImageId],
    scores: Scores<'_>,
    relevance: &RelevanceTable,
    config: &MetricConfig,
) -> Result<MetricReport> {
    config.validate()?;
    if query_ids.is_empty() {
        return Err(Error::Input("empty query set".into()));
    }
    let m = scores.matrix();
    if m.rows() != query_ids.len() || m.cols() != gallery_ids.len() {
        return Err(Error::Shape(format!(
            "{}x{} scores for {} queries and {} gallery items",
            m.rows(),
            m.cols(),
            query_ids.len(),
            gallery_ids.len()
        )));
    }
    if relevance.rows() != m.rows() || relevance.cols() != m.cols() {
        return Err(Error::Shape(
            "relevance table does not match the score matrix".into(),
        ));
    }
    if relevance.num_scales() != config.num_scales() {
        return Err(Error::Config(format!(
            "relevance has {} scales but gains describe {}",
            relevance.num_scales(),
            config.num_scales()
        )));
    }
    let descending = matches!(scores, Scores::Similarity(_));
    let per_query: Vec<QueryMetrics> = (0..query_ids.len())
        .into_par_iter()
        .map(|q| {
            let list = RankedList::from_scores(query_ids[q], m.row(q), gallery_ids, descending);
            query_metrics(&list.levels(relevance.row(q)), config)
        })
        .collect();
    Ok(aggregate(&per_query, config))
}

/// Fixed-order averages of per-query metrics.
pub fn aggregate(per_query: &[QueryMetrics], config: &MetricConfig) -> MetricReport {
    let l = config.num_scales();
    let scales: Vec<ScaleMetrics> = (0..l)
        .map(|s| {
            let (map, excluded) = mean(per_query.iter().map(|q| q.ap[s]));
            let recall = (0..config.ks.len())
                .map(|ki| mean(per_query.iter().map(|q| q.recall[s][ki])).0)
                .collect();
            ScaleMetrics {
                map,
                recall,
                excluded,
            }
        })
        .collect();
    let map_overall = scales.iter().map(|s| s.map).sum::<f64>() / l as f64;
    let recall_overall = (0..config.ks.len())
        .map(|ki| scales.iter().map(|s| s.recall[ki]).sum::<f64>() / l as f64)
        .collect();
    let excluded_queries = per_query
        .iter()
        .filter(|q| {
            q.ap.iter().any(Option::is_none)
                || q.hap.is_none()
                || q.asi.is_none()
                || q.ndcg.is_none()
        })
        .count();
    MetricReport {
        ks: config.ks.clone(),
        scales,
        map_overall,
        recall_overall,
        hap: mean(per_query.iter().map(|q| q.hap)).0,
        asi: mean(per_query.iter().map(|q| q.asi)).0,
        ndcg: mean(per_query.iter().map(|q| q.ndcg)).0,
        excluded_queries,
        num_queries: per_query.len(),
    }
}
