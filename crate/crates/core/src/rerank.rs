//! k-reciprocal re-ranking and its segmented multi-scale accumulation.
//!
//! Every re-ranking call works on an [`AugmentedDistanceMatrix`] over
//! `{query} ∪ gallery`, with the query at index 0, and returns refined
//! distances from the query to each gallery item (gallery order).

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, DenseMatrix, EmbeddingSet};
use crate::error::{Error, Result};
use crate::geo::{BuildingId, ScalePartition};

const MATRIX_TOL: f64 = 1e-9;

/// Square, symmetric, zero-diagonal, non-negative distances; index 0 is the query.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedDistanceMatrix(DenseMatrix);

impl AugmentedDistanceMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        let n = m.rows();
        if n != m.cols() || n < 2 {
            return Err(Error::Shape(format!(
                "augmented matrix must be square with a gallery, got {}x{}",
                n,
                m.cols()
            )));
        }
        for i in 0..n {
            if m.get(i, i).abs() > MATRIX_TOL {
                return Err(Error::Input(format!(
                    "diagonal entry {i} is {}",
                    m.get(i, i)
                )));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !v.is_finite() || v < -MATRIX_TOL || (v - m.get(j, i)).abs() > MATRIX_TOL {
                    return Err(Error::Input(format!(
                        "entry ({i},{j}) = {v} breaks symmetry or sign"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn gallery_len(&self) -> usize {
        self.0.rows() - 1
    }
}

/// Cosine distances of a query batch and a gallery, shared across per-query matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedDistances {
    query_rows: DenseMatrix,
    gallery_block: DenseMatrix,
}

fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    (1.0 - dot(a, b)).max(0.0)
}

impl ComposedDistances {
    pub fn from_embeddings(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<Self> {
        if queries.dimension() != gallery.dimension() {
            return Err(Error::Shape("query and gallery dimensions differ".into()));
        }
        if !queries.is_normalized() || !gallery.is_normalized() {
            return Err(Error::Precondition(
                "re-ranking requires normalized embeddings".into(),
            ));
        }
        let g = gallery.records();
        let rows: Vec<Vec<f64>> = queries
            .records()
            .par_iter()
            .map(|q| {
                g.iter()
                    .map(|x| cosine_distance(&q.vector, &x.vector))
                    .collect()
            })
            .collect();
        let block: Vec<Vec<f64>> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                (0..g.len())
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            // evaluate in a fixed order so the block is exactly symmetric
                            let (a, b) = if i < j { (i, j) } else { (j, i) };
                            cosine_distance(&g[a].vector, &g[b].vector)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            query_rows: DenseMatrix::new(queries.len(), g.len(), rows.concat())?,
            gallery_block: DenseMatrix::new(g.len(), g.len(), block.concat())?,
        })
    }

    pub fn from_parts(query_rows: DenseMatrix, gallery_block: DenseMatrix) -> Result<Self> {
        if query_rows.cols() != gallery_block.rows() || gallery_block.rows() != gallery_block.cols()
        {
            return Err(Error::Shape("query rows and gallery block disagree".into()));
        }
        Ok(Self {
            query_rows,
            gallery_block,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.query_rows.rows()
    }

    pub fn query_rows(&self) -> &DenseMatrix {
        &self.query_rows
    }

    /// The `(gallery + 1)` square matrix of query `q`.
    pub fn for_query(&self, q: usize) -> AugmentedDistanceMatrix {
        let ng = self.gallery_block.rows();
        let mut m = DenseMatrix::zeros(ng + 1, ng + 1);
        for j in 0..ng {
            let d = self.query_rows.get(q, j);
            m.set(0, j + 1, d);
            m.set(j + 1, 0, d);
            for i in 0..ng {
                m.set(i + 1, j + 1, self.gallery_block.get(i, j));
            }
        }
        AugmentedDistanceMatrix(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub k: usize,
    /// Weight of the original distance in the fused output.
    pub lambda: f64,
    /// Secondary neighbourhood size; `None` means `max(1, k / 2)`.
    pub k_expand: Option<usize>,
    pub mu: f64,
    pub k_floor: usize,
    /// Explicit per-scale schedule overriding the training-statistics rule.
    pub schedule: Option<Vec<usize>>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            k: 20,
            lambda: 0.3,
            k_expand: None,
            mu: 0.1,
            k_floor: 20,
            schedule: None,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.k_expand == Some(0) {
            return Err(Error::Config("k_expand must be >= 1".into()));
        }
        if let Some(s) = &self.schedule {
            KSchedule::new(s.clone(), 1)?;
        }
        Ok(())
    }

    pub fn with_k(&self, k: usize) -> Self {
        Self { k, ..self.clone() }
    }

    fn expand_size(&self) -> usize {
        self.k_expand.unwrap_or((self.k / 2).max(1))
    }
}

/// Row `x` of `d` sorted ascending, ties by index.
fn ranking(d: &DenseMatrix, x: usize) -> Vec<usize> {
    let row = d.row(x);
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// `R(x, k)`: members of the `k + 1` nearest (self included) that also hold `x` among theirs.
fn reciprocal(ranks: &[Vec<usize>], x: usize, k: usize) -> Vec<usize> {
    ranks[x][..=k]
        .iter()
        .copied()
        .filter(|&y| ranks[y][..=k].contains(&x))
        .collect()
}

/// Standard k-reciprocal re-ranking of the query (index 0) against the gallery.
pub fn k_reciprocal_rerank(d: &AugmentedDistanceMatrix, config: &RerankConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = d.size();
    let k = config.k;
    let k2 = config.expand_size();
    if k >= n || k2 >= n {
        return Err(Error::Config(format!(
            "k = {k} (expand {k2}) must be below the matrix size {n}"
        )));
    }
    let m = d.matrix();
    let ranks: Vec<Vec<usize>> = (0..n).map(|x| ranking(m, x)).collect();
    let r_k: Vec<Vec<usize>> = (0..n).map(|x| reciprocal(&ranks, x, k)).collect();
    let r_half: Vec<Vec<usize>> = (0..n).map(|x| reciprocal(&ranks, x, k2)).collect();

    let mut v = vec![vec![0.0; n]; n];
    for x in 0..n {
        let mut member = vec![false; n];
        for &y in &r_k[x] {
            member[y] = true;
        }
        for &y in &r_k[x] {
            let cand = &r_half[y];
            let overlap = cand.iter().filter(|&&c| r_k[x].contains(&c)).count();
            if 3 * overlap >= 2 * cand.len() {
                for &c in cand {
                    member[c] = true;
                }
            }
        }
        let total: f64 = (0..n)
            .filter(|&j| member[j])
            .map(|j| (-m.get(x, j)).exp())
            .sum();
        for j in (0..n).filter(|&j| member[j]) {
            v[x][j] = (-m.get(x, j)).exp() / total;
        }
    }

    // local query expansion over the k2 + 1 nearest
    let v: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let hood = &ranks[x][..=k2];
            let mut avg = vec![0.0; n];
            for &y in hood {
                for (a, b) in avg.iter_mut().zip(&v[y]) {
                    *a += b;
                }
            }
            let inv = 1.0 / hood.len() as f64;
            avg.iter_mut().for_each(|a| *a *= inv);
            avg
        })
        .collect();

    let lambda = config.lambda;
    Ok((1..n)
        .map(|g| {
            let (mut lo, mut hi) = (0.0, 0.0);
            for (a, b) in v[0].iter().zip(&v[g]) {
                lo += a.min(*b);
                hi += a.max(*b);
            }
            let jaccard = if hi > 0.0 { 1.0 - lo / hi } else { 1.0 };
            lambda * m.get(0, g) + (1.0 - lambda) * jaccard
        })
        .collect())
}

/// Per-scale neighbourhood sizes `k^0..k^{L-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KSchedule(Vec<usize>);

impl KSchedule {
    pub fn new(ks: Vec<usize>, k_floor: usize) -> Result<Self> {
        if ks.is_empty() {
            return Err(Error::Config("empty k schedule".into()));
        }
        if ks.iter().any(|&k| k < k_floor.max(1)) {
            return Err(Error::Config(format!(
                "schedule {ks:?} falls below the floor {k_floor}"
            )));
        }
        if ks.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(format!(
                "schedule {ks:?} must be non-decreasing"
            )));
        }
        Ok(Self(ks))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `k^l = max(k_floor, round(mu / C * sum_c |S_c^{<=l}|))`, rounding half up,
/// where `|S_c^{<=l}|` counts images of the buildings within scale `l` of `c`.
pub fn compute_k_schedule(
    partitions: &BTreeMap<BuildingId, ScalePartition>,
    image_counts: &HashMap<BuildingId, usize>,
    config: &RerankConfig,
) -> Result<KSchedule> {
    config.validate()?;
    let num_classes = partitions.len();
    let num_scales = partitions
        .values()
        .next()
        .map(ScalePartition::num_scales)
        .ok_or_else(|| Error::Config("no training partitions for the k schedule".into()))?;
    let ks = (0..num_scales)
        .map(|l| {
            let total: usize = partitions
                .values()
                .flat_map(|p| p.within(l))
                .map(|b| image_counts.get(&b).copied().unwrap_or(0))
                .sum();
            let raw = config.mu / num_classes as f64 * total as f64;
            config.k_floor.max((raw + 0.5).floor() as usize)
        })
        .collect();
    KSchedule::new(ks, config.k_floor)
}

/// One stage of the segmented accumulation.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTrace {
    pub k: usize,
    pub stage: Vec<f64>,
    pub accumulated: Vec<f64>,
    pub selected: Vec<usize>,
    pub active_after: Vec<bool>,
}

/// Segmented accumulative multi-scale re-ranking.
pub fn ms_rerank(
    d: &AugmentedDistanceMatrix,
    schedule: &KSchedule,
    config: &RerankConfig,
) -> Result<Vec<f64>> {
    Ok(ms_rerank_trace(d, schedule, config)?.0)
}

/// [`ms_rerank`] together with the per-stage trace.
pub fn ms_rerank_trace(
    d: &AugmentedDistanceMatrix,
    schedule: &KSchedule,
    config: &RerankConfig,
) -> Result<(Vec<f64>, Vec<StageTrace>)> {
    let ng = d.gallery_len();
    if let Some(&k) = schedule.as_slice().iter().find(|&&k| k >= d.size()) {
        return Err(Error::Config(format!(
            "schedule entry {k} must be below the matrix size {}",
            d.size()
        )));
    }
    let mut acc = vec![0.0; ng];
    let mut active = vec![true; ng];
    let mut trace = Vec::with_capacity(schedule.len());
    for &k in schedule.as_slice() {
        let stage = k_reciprocal_rerank(d, &config.with_k(k))?;
        for j in 0..ng {
            if active[j] {
                acc[j] += stage[j];
            }
        }
        let mut order: Vec<usize> = (0..ng).collect();
        order.sort_by(|&a, &b| acc[a].total_cmp(&acc[b]).then(a.cmp(&b)));
        let selected = order[..k.min(ng)].to_vec();
        for &j in &selected {
            active[j] = false;
        }
        trace.push(StageTrace {
            k,
            stage,
            accumulated: acc.clone(),
            selected,
            active_after: active.clone(),
        });
    }
    Ok((acc, trace))
}

/// Re-ranking variant applied to a whole query batch.
#[derive(Clone, Debug, PartialEq)]
pub enum RerankMethod {
    None,
    Standard,
    MultiScale(KSchedule),
}

/// Query-by-gallery distances after applying `method` to every query.
pub fn rerank_batch(
    dist: &ComposedDistances,
    method: &RerankMethod,
    config: &RerankConfig,
) -> Result<DenseMatrix> {
    let rows: Vec<Vec<f64>> = (0..dist.num_queries())
        .into_par_iter()
        .map(|q| match method {
            RerankMethod::None => Ok(dist.query_rows.row(q).to_vec()),
            RerankMethod::Standard => k_reciprocal_rerank(&dist.for_query(q), config),
            RerankMethod::MultiScale(s) => ms_rerank(&dist.for_query(q), s, config),
        })
        .collect::<Result<_>>()?;
    DenseMatrix::new(dist.num_queries(), dist.gallery_block.rows(), rows.concat())
}

/// Gallery indices ordered by ascending distance, ties by index.
pub fn ranking_from_distances(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Mean absolute rank change of the item at each original position.
pub fn rank_shift_profile(before: &[Vec<usize>], after: &[Vec<usize>]) -> Result<Vec<f64>> {
    if before.len() != after.len() || before.is_empty() {
        return Err(Error::Input(
            "before/after must cover the same non-empty query set".into(),
        ));
    }
    let n = before[0].len();
    let mut sums = vec![0.0; n];
    for (b, a) in before.iter().zip(after) {
        if b.len() != n || a.len() != n {
            return Err(Error::Input("rankings have different gallery sizes".into()));
        }
        let mut new_pos = HashMap::with_capacity(n);
        for (p, &item) in a.iter().enumerate() {
            new_pos.insert(item, p);
        }
        for (p, item) in b.iter().enumerate() {
            let q = *new_pos
                .get(item)
                .ok_or_else(|| Error::Input(format!("item {item} missing after re-ranking")))?;
            sums[p] += (q as f64 - p as f64).abs();
        }
    }
    let inv = 1.0 / before.len() as f64;
    Ok(sums.into_iter().map(|s| s * inv).collect())
}

pub fn shift_profile_csv(profile: &[f64]) -> String {
    let mut s = String::from("position,mean_abs_shift\n");
    for (p, v) in profile.iter().enumerate() {
        s.push_str(&format!("{},{v}\n", p + 1));
    }
    s
}
