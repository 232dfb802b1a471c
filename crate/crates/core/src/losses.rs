//! Multi-scale contrastive losses with analytic gradients.
//!
//! All losses operate on `f64` vectors that are expected to be unit length, so
//! that inner products are cosine similarities. Gradients are taken with
//! respect to the (normalized) vectors; [`normalize_backward`] carries them to
//! the raw pre-normalization activations.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::{check_unit, ImageId, View};
use crate::error::{Error, Result};
use crate::geo::{BuildingId, ScalePartition};

/// Per-scale margins `m^0 > m^1 > ... > m^{L-1} > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MarginSchedule(Vec<f64>);

impl MarginSchedule {
    pub fn new(margins: Vec<f64>) -> Result<Self> {
        if margins.is_empty() {
            return Err(Error::Config("margin schedule is empty".into()));
        }
        if margins.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::Config(format!(
                "margins must be positive: {margins:?}"
            )));
        }
        if margins.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!(
                "margins must be strictly decreasing: {margins:?}"
            )));
        }
        Ok(Self(margins))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for MarginSchedule {
    fn default() -> Self {
        Self(vec![0.3, 0.2, 0.1])
    }
}

impl TryFrom<Vec<f64>> for MarginSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        MarginSchedule::new(v)
    }
}

impl From<MarginSchedule> for Vec<f64> {
    fn from(m: MarginSchedule) -> Self {
        m.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub margins: MarginSchedule,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Whether an externally supplied third loss term is weighted in.
    pub third_term: bool,
    /// Logit scale of the proxy clustering loss.
    pub clust_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 32.0,
            margins: MarginSchedule::default(),
            lambda1: 0.2,
            lambda2: 0.1,
            lambda3: 0.9,
            third_term: false,
            clust_scale: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        for (name, w) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {w}"
                )));
            }
        }
        if !(self.clust_scale > 0.0) {
            return Err(Error::Config("clust_scale must be positive".into()));
        }
        MarginSchedule::new(self.margins.0.clone()).map(|_| ())
    }
}

/// One unit-norm proxy per training building, shared by both views.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyTable {
    ids: Vec<BuildingId>,
    index: HashMap<BuildingId, usize>,
    vectors: Vec<Vec<f64>>,
}

impl ProxyTable {
    pub fn new(ids: Vec<BuildingId>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Shape(format!(
                "{} ids for {} proxies",
                ids.len(),
                vectors.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::Input(format!("duplicate proxy for building {id}")));
            }
        }
        let mut table = Self {
            ids,
            index,
            vectors,
        };
        table.renormalize()?;
        Ok(table)
    }

    pub fn ids(&self) -> &[BuildingId] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.vectors
    }

    pub fn position(&self, id: BuildingId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn renormalize(&mut self) -> Result<()> {
        for (id, v) in self.ids.iter().zip(&mut self.vectors) {
            let n = norm(v);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Degenerate(format!(
                    "proxy for building {id} has norm {n}"
                )));
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPair {
    pub building_id: BuildingId,
    pub drone: ImageId,
    pub satellite: ImageId,
}

/// Cross-view image pairs of distinct buildings.
///
/// Batch vectors are laid out as all drone images (pair order) followed by all
/// satellite images (pair order); [`BatchPlan::slot`] maps into that layout.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pairs: Vec<BatchPair>,
}

impl BatchPlan {
    pub fn new(pairs: Vec<BatchPair>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &pairs {
            if !seen.insert(p.building_id) {
                return Err(Error::Input(format!(
                    "building {} appears twice in a batch",
                    p.building_id
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[BatchPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn slot(&self, view: View, pair: usize) -> usize {
        match view {
            View::Drone => pair,
            View::Satellite => self.pairs.len() + pair,
        }
    }
}

/// Positive and pure-negative reference sets of one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSets {
    pub anchor: usize,
    /// Cross-view references with their relevance level to the anchor.
    pub refs: Vec<(usize, usize)>,
    /// `positives[l]` = references with level `<= l`.
    pub positives: Vec<Vec<usize>>,
    /// References at the pure-negative level `L`.
    pub negatives: Vec<usize>,
}

impl AnchorSets {
    /// References strictly beyond `level`.
    pub fn beyond(&self, level: usize) -> Vec<usize> {
        self.refs
            .iter()
            .filter(|(_, l)| *l > level)
            .map(|(i, _)| *i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTripletSets {
    pub num_scales: usize,
    pub anchors: Vec<AnchorSets>,
    /// True when no anchor has any pure negative; such a batch contributes zero DyCL loss.
    pub degenerate: bool,
}

/// In-batch positive and pure-negative sets for every anchor of both views.
pub fn mine_scale_sets(
    batch: &BatchPlan,
    partitions: &BTreeMap<BuildingId, ScalePartition>,
) -> Result<ScaleTripletSets> {
    let mut num_scales = None;
    let mut anchors = Vec::with_capacity(2 * batch.len());
    for view in [View::Drone, View::Satellite] {
        for (i, pair) in batch.pairs().iter().enumerate() {
            let part = partitions.get(&pair.building_id).ok_or(Error::Lookup {
                kind: "partition anchor",
                id: pair.building_id,
            })?;
            let l_max = *num_scales.get_or_insert(part.num_scales());
            if part.num_scales() != l_max {
                return Err(Error::Config(
                    "partitions disagree on the number of scales".into(),
                ));
            }
            let mut refs = Vec::with_capacity(batch.len());
            for (j, other) in batch.pairs().iter().enumerate() {
                let level = part.level_of(other.building_id).ok_or(Error::Lookup {
                    kind: "building",
                    id: other.building_id,
                })?;
                refs.push((batch.slot(view.other(), j), level));
            }
            let positives = (0..l_max)
                .map(|l| {
                    refs.iter()
                        .filter(|(_, lv)| *lv <= l)
                        .map(|(r, _)| *r)
                        .collect()
                })
                .collect();
            let negatives = refs
                .iter()
                .filter(|(_, lv)| *lv == l_max)
                .map(|(r, _)| *r)
                .collect();
            anchors.push(AnchorSets {
                anchor: batch.slot(view, i),
                refs,
                positives,
                negatives,
            });
        }
    }
    let degenerate = anchors.iter().all(|a| a.negatives.is_empty());
    Ok(ScaleTripletSets {
        num_scales: num_scales.unwrap_or(0),
        anchors,
        degenerate,
    })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// DyCL value and its derivative with respect to every similarity.
///
/// `sims[i]` is the anchor's similarity to reference `i`. Each scale term
/// `log(1 + sum_j sum_k exp(tau (r_k - r_j + m)))` factorizes into
/// `softplus(tau m + LSE_j(-tau r_j) + LSE_k(tau r_k))`.
pub fn dycl_from_similarities(
    sims: &[f64],
    positives: &[Vec<usize>],
    negatives: &[usize],
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let margins = config.margins.as_slice();
    if positives.len() > margins.len() {
        return Err(Error::Config(format!(
            "{} scales but only {} margins",
            positives.len(),
            margins.len()
        )));
    }
    let tau = config.tau;
    let mut loss = 0.0;
    let mut grad = vec![0.0; sims.len()];
    if negatives.is_empty() {
        return Ok((loss, grad));
    }
    let neg_lse = log_sum_exp(negatives.iter().map(|&k| tau * sims[k]));
    for (pos, &m) in positives.iter().zip(margins) {
        if pos.is_empty() {
            continue;
        }
        let pos_lse = log_sum_exp(pos.iter().map(|&j| -tau * sims[j]));
        let z = tau * m + pos_lse + neg_lse;
        loss += softplus(z);
        let s = sigmoid(z);
        for &k in negatives {
            grad[k] += s * tau * (tau * sims[k] - neg_lse).exp();
        }
        for &j in pos {
            grad[j] -= s * tau * (-tau * sims[j] - pos_lse).exp();
        }
    }
    Ok((loss, grad))
}

/// Loss and gradients of one DyCL anchor term.
#[derive(Clone, Debug, PartialEq)]
pub struct DyclOutput {
    pub loss: f64,
    pub anchor_grad: Vec<f64>,
    pub ref_grads: Vec<Vec<f64>>,
}

/// DyCL for one anchor against `refs`; set indices address `refs`.
pub fn dycl_loss_and_grad(
    anchor: &[f64],
    refs: &[Vec<f64>],
    positives: &[Vec<usize>],
    negatives: &[usize],
    config: &LossConfig,
) -> Result<DyclOutput> {
    check_unit(anchor, "anchor")?;
    for (i, r) in refs.iter().enumerate() {
        check_unit(r, &format!("reference {i}"))?;
    }
    let bound = refs.len();
    if positives
        .iter()
        .flatten()
        .chain(negatives)
        .any(|&i| i >= bound)
    {
        return Err(Error::Input("set index outside the reference list".into()));
    }
    Ok(dycl_unchecked(anchor, refs, positives, negatives, config))
}

pub(crate) fn dycl_unchecked(
    anchor: &[f64],
    refs: &[Vec<f64>],
    positives: &[Vec<usize>],
    negatives: &[usize],
    config: &LossConfig,
) -> DyclOutput {
    let sims: Vec<f64> = refs.iter().map(|r| dot(anchor, r)).collect();
    let (loss, dr) = dycl_from_similarities(&sims, positives, negatives, config)
        .expect("margins validated by caller");
    let mut anchor_grad = vec![0.0; anchor.len()];
    let mut ref_grads = vec![vec![0.0; anchor.len()]; refs.len()];
    for (i, &g) in dr.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &refs[i], &mut anchor_grad);
            axpy(g, anchor, &mut ref_grads[i]);
        }
    }
    DyclOutput {
        loss,
        anchor_grad,
        ref_grads,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringOutput {
    pub loss: f64,
    pub feature_grad: Vec<f64>,
    pub proxy_grads: Vec<Vec<f64>>,
}

/// Normalized softmax cross-entropy of `f` against the proxy table.
pub fn clustering_loss_and_grad(
    f: &[f64],
    proxies: &ProxyTable,
    label: BuildingId,
    scale: f64,
) -> Result<ClusteringOutput> {
    check_unit(f, "feature")?;
    let target = proxies.position(label).ok_or(Error::Lookup {
        kind: "proxy label",
        id: label,
    })?;
    Ok(clustering_unchecked(f, proxies.vectors(), target, scale))
}

pub(crate) fn clustering_unchecked(
    f: &[f64],
    proxies: &[Vec<f64>],
    target: usize,
    scale: f64,
) -> ClusteringOutput {
    let logits: Vec<f64> = proxies.iter().map(|w| scale * dot(w, f)).collect();
    let lse = log_sum_exp(logits.iter().copied());
    let loss = lse - logits[target];
    let mut feature_grad = vec![0.0; f.len()];
    let mut proxy_grads = Vec::with_capacity(proxies.len());
    for (j, (w, &z)) in proxies.iter().zip(&logits).enumerate() {
        let coeff = scale * ((z - lse).exp() - if j == target { 1.0 } else { 0.0 });
        axpy(coeff, w, &mut feature_grad);
        proxy_grads.push(f.iter().map(|x| coeff * x).collect());
    }
    ClusteringOutput {
        loss,
        feature_grad,
        proxy_grads,
    }
}

/// Hinge triplet loss on cosine similarities; returns gradients for (anchor, positive, negative).
pub fn triplet_loss_and_grad(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<(f64, [Vec<f64>; 3])> {
    check_unit(anchor, "anchor")?;
    check_unit(positive, "positive")?;
    check_unit(negative, "negative")?;
    Ok(triplet_unchecked(anchor, positive, negative, margin))
}

pub(crate) fn triplet_unchecked(
    a: &[f64],
    p: &[f64],
    n: &[f64],
    margin: f64,
) -> (f64, [Vec<f64>; 3]) {
    let value = margin - dot(a, p) + dot(a, n);
    if value > 0.0 {
        let ga = n.iter().zip(p).map(|(x, y)| x - y).collect();
        let gp = a.iter().map(|x| -x).collect();
        (value, [ga, gp, a.to_vec()])
    } else {
        let z = vec![0.0; a.len()];
        (0.0, [z.clone(), z.clone(), z])
    }
}

/// Identifies the parameter a gradient belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    /// Slot of a batch embedding.
    Embedding(usize),
    /// Row of the proxy table.
    Proxy(usize),
}

pub type GradMap = BTreeMap<ParamKey, Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct LossComponent {
    pub name: String,
    pub loss: f64,
    pub grads: GradMap,
}

pub fn add_grad(map: &mut GradMap, key: ParamKey, scale: f64, g: &[f64]) {
    let slot = map.entry(key).or_insert_with(|| vec![0.0; g.len()]);
    axpy(scale, g, slot);
}

/// Weighted total `lambda1 * dycl + lambda2 * clust + lambda3 * third` with merged gradients.
pub fn total_loss(components: &[LossComponent], config: &LossConfig) -> Result<(f64, GradMap)> {
    let mut loss = 0.0;
    let mut grads = GradMap::new();
    for c in components {
        let weight = match c.name.as_str() {
            "dycl" => config.lambda1,
            "clust" => config.lambda2,
            "third" if config.third_term => config.lambda3,
            "third" => {
                return Err(Error::Config(
                    "third loss term supplied but not enabled".into(),
                ))
            }
            other => return Err(Error::Config(format!("unknown loss component '{other}'"))),
        };
        loss += weight * c.loss;
        for (&k, g) in &c.grads {
            add_grad(&mut grads, k, weight, g);
        }
    }
    Ok((loss, grads))
}

/// Maps a gradient w.r.t. `f = z / |z|` to a gradient w.r.t. `z`.
pub fn normalize_backward(raw: &[f64], grad_unit: &[f64]) -> Vec<f64> {
    let n = norm(raw);
    let f: Vec<f64> = raw.iter().map(|x| x / n).collect();
    let proj = dot(&f, grad_unit);
    grad_unit
        .iter()
        .zip(&f)
        .map(|(g, fi)| (g - fi * proj) / n)
        .collect()
}

/// Mean DyCL over all anchors of a mined batch, with per-slot gradients.
pub fn batch_dycl(
    embeddings: &[Vec<f64>],
    sets: &ScaleTripletSets,
    config: &LossConfig,
) -> (f64, Vec<Vec<f64>>) {
    let dim = embeddings.first().map_or(0, |e| e.len());
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    if sets.anchors.is_empty() {
        return (0.0, grads);
    }
    let scale = 1.0 / sets.anchors.len() as f64;
    let mut loss = 0.0;
    for a in &sets.anchors {
        let idx: Vec<usize> = a.refs.iter().map(|(i, _)| *i).collect();
        let local = |g: usize| idx.iter().position(|&x| x == g).expect("reference slot");
        let refs: Vec<Vec<f64>> = idx.iter().map(|&i| embeddings[i].clone()).collect();
        let pos: Vec<Vec<usize>> = a
            .positives
            .iter()
            .map(|p| p.iter().map(|&g| local(g)).collect())
            .collect();
        let neg: Vec<usize> = a.negatives.iter().map(|&g| local(g)).collect();
        let out = dycl_unchecked(&embeddings[a.anchor], &refs, &pos, &neg, config);
        loss += scale * out.loss;
        axpy(scale, &out.anchor_grad, &mut grads[a.anchor]);
        for (k, &slot) in idx.iter().enumerate() {
            axpy(scale, &out.ref_grads[k], &mut grads[slot]);
        }
    }
    (loss, grads)
}

/// Batch-all triplet loss at the given scales: for scale `l`, positives have
/// level `<= l` and negatives level `> l`; each scale contributes the mean hinge
/// over its triplets.
pub fn batch_triplet(
    embeddings: &[Vec<f64>],
    sets: &ScaleTripletSets,
    scales: &[usize],
    margin: f64,
) -> (f64, Vec<Vec<f64>>) {
    let dim = embeddings.first().map_or(0, |e| e.len());
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    let mut loss = 0.0;
    for &l in scales {
        let mut count = 0usize;
        let mut scale_loss = 0.0;
        let mut scale_grads = vec![vec![0.0; dim]; embeddings.len()];
        for a in &sets.anchors {
            let pos: Vec<usize> = a
                .refs
                .iter()
                .filter(|(_, lv)| *lv <= l)
                .map(|(i, _)| *i)
                .collect();
            let neg = a.beyond(l);
            for &p in &pos {
                for &n in &neg {
                    count += 1;
                    let (v, [ga, gp, gn]) = triplet_unchecked(
                        &embeddings[a.anchor],
                        &embeddings[p],
                        &embeddings[n],
                        margin,
                    );
                    if v > 0.0 {
                        scale_loss += v;
                        axpy(1.0, &ga, &mut scale_grads[a.anchor]);
                        axpy(1.0, &gp, &mut scale_grads[p]);
                        axpy(1.0, &gn, &mut scale_grads[n]);
                    }
                }
            }
        }
        if count > 0 {
            let w = 1.0 / count as f64;
            loss += w * scale_loss;
            for (g, sg) in grads.iter_mut().zip(&scale_grads) {
                axpy(w, sg, g);
            }
        }
    }
    (loss, grads)
}
