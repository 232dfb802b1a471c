//! Shared linear encoder trained with the multi-scale objective.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingRecord, EmbeddingSet, ImageId, View};
use crate::error::{Error, Result};
use crate::geo::{
    build_all_partitions, BuildingId, CampusRegistry, ScaleConfig, ScalePartition, Split,
};
use crate::losses::{
    add_grad, batch_dycl, batch_triplet, clustering_unchecked, dot, mine_scale_sets, norm,
    normalize_backward, total_loss, BatchPair, BatchPlan, GradMap, LossComponent, LossConfig,
    ParamKey, ProxyTable,
};

/// Training objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Weighted multi-scale contrastive loss plus proxy clustering.
    Dycl,
    /// Batch-all triplet loss summed over the listed scales.
    Triplet { scales: Vec<usize>, margin: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub embed_dim: usize,
    /// Buildings per batch; each contributes one drone and one satellite image.
    pub batch_buildings: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            batch_buildings: 16,
            epochs: 20,
            steps_per_epoch: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            objective: Objective::Dycl,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "embed_dim, epochs and steps_per_epoch must be >= 1".into(),
            ));
        }
        if self.batch_buildings < 2 {
            return Err(Error::Config("batch_buildings must be >= 2".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if let Objective::Triplet { scales, margin } = &self.objective {
            if scales.is_empty() || !(*margin >= 0.0) {
                return Err(Error::Config(
                    "triplet objective needs scales and a non-negative margin".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Encoder weights (row-major `embed_dim x raw_dim`), bias and proxies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub embed_dim: usize,
    pub raw_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub proxy_ids: Vec<BuildingId>,
    pub proxies: Vec<Vec<f64>>,
}

impl EncoderState {
    fn forward(&self, x: &[f32]) -> Vec<f64> {
        (0..self.embed_dim)
            .map(|r| {
                let w = &self.weights[r * self.raw_dim..(r + 1) * self.raw_dim];
                self.bias[r] + w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum::<f64>()
            })
            .collect()
    }

    /// Unit-norm embedding of one raw feature vector.
    pub fn embed(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.raw_dim {
            return Err(Error::Shape(format!(
                "raw vector of length {} for encoder input {}",
                x.len(),
                self.raw_dim
            )));
        }
        let z = self.forward(x);
        let n = norm(&z);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Degenerate(format!("encoder output norm {n}")));
        }
        Ok(z.into_iter().map(|v| v / n).collect())
    }

    /// Encodes every record of `raw` into a normalized embedding set.
    pub fn encode(&self, raw: &EmbeddingSet) -> Result<EmbeddingSet> {
        let records = raw
            .records()
            .iter()
            .map(|r| {
                let f = self.embed(&r.vector)?;
                Ok(EmbeddingRecord {
                    image_id: r.image_id,
                    building_id: r.building_id,
                    view: r.view,
                    normalized: true,
                    vector: f.into_iter().map(|v| v as f32).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::new(self.embed_dim, records)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_dycl: f64,
    pub mean_clust: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: EncoderState,
    pub log: Vec<EpochLog>,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,mean_total,mean_dycl,mean_clust\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.mean_total, e.mean_dycl, e.mean_clust
        ));
    }
    out
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

struct Momentum {
    velocity: Vec<f64>,
}

impl Momentum {
    fn new(len: usize) -> Self {
        Self {
            velocity: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Loss value and parameter gradients of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub dycl: f64,
    pub clust: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// One gradient row per proxy, zero for proxies the objective does not touch.
    pub proxies: Vec<Vec<f64>>,
}

impl BatchGradient {
    fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .weights
                .iter()
                .chain(&self.bias)
                .chain(self.proxies.iter().flatten())
                .all(|g| g.is_finite())
    }
}

/// Objective value with gradients w.r.t. the normalized batch embeddings.
fn embedding_objective(
    unit: &[Vec<f64>],
    labels: &[usize],
    plan: &BatchPlan,
    partitions: &BTreeMap<BuildingId, ScalePartition>,
    proxies: &[Vec<f64>],
    loss: &LossConfig,
    objective: &Objective,
) -> Result<(f64, f64, f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let sets = mine_scale_sets(plan, partitions)?;
    let dim = unit[0].len();
    let mut proxy_grads = vec![vec![0.0; dim]; proxies.len()];
    match objective {
        Objective::Triplet { scales, margin } => {
            let (value, grads) = batch_triplet(unit, &sets, scales, *margin);
            Ok((value, 0.0, 0.0, grads, proxy_grads))
        }
        Objective::Dycl => {
            let (dycl, dycl_grads) = batch_dycl(unit, &sets, loss);
            let mut dycl_map = GradMap::new();
            for (slot, g) in dycl_grads.iter().enumerate() {
                add_grad(&mut dycl_map, ParamKey::Embedding(slot), 1.0, g);
            }
            let weight = 1.0 / unit.len() as f64;
            let mut clust = 0.0;
            let mut clust_map = GradMap::new();
            for (slot, (f, &target)) in unit.iter().zip(labels).enumerate() {
                let out = clustering_unchecked(f, proxies, target, loss.clust_scale);
                clust += weight * out.loss;
                add_grad(
                    &mut clust_map,
                    ParamKey::Embedding(slot),
                    weight,
                    &out.feature_grad,
                );
                for (row, g) in out.proxy_grads.iter().enumerate() {
                    add_grad(&mut clust_map, ParamKey::Proxy(row), weight, g);
                }
            }
            let components = [
                LossComponent {
                    name: "dycl".into(),
                    loss: dycl,
                    grads: dycl_map,
                },
                LossComponent {
                    name: "clust".into(),
                    loss: clust,
                    grads: clust_map,
                },
            ];
            let (total, merged) = total_loss(&components, loss)?;
            let mut embedding_grads = vec![vec![0.0; dim]; unit.len()];
            for (key, g) in merged {
                match key {
                    ParamKey::Embedding(slot) => embedding_grads[slot] = g,
                    ParamKey::Proxy(row) => proxy_grads[row] = g,
                }
            }
            Ok((total, dycl, clust, embedding_grads, proxy_grads))
        }
    }
}

impl EncoderState {
    /// Seeded initial encoder: uniform weights in `±1/sqrt(raw_dim)`, zero bias,
    /// random unit proxies.
    pub fn initialize(
        raw_dim: usize,
        proxy_ids: Vec<BuildingId>,
        config: &TrainerConfig,
    ) -> Result<Self> {
        let embed_dim = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (raw_dim as f64).sqrt();
        let weights = (0..embed_dim * raw_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let vectors = proxy_ids
            .iter()
            .map(|_| random_unit(&mut rng, embed_dim))
            .collect();
        let table = ProxyTable::new(proxy_ids.clone(), vectors)?;
        Ok(Self {
            embed_dim,
            raw_dim,
            weights,
            bias: vec![0.0; embed_dim],
            proxy_ids,
            proxies: table.vectors().to_vec(),
        })
    }

    /// Loss and gradients on one batch laid out as drones then satellites, in plan order.
    pub fn batch_gradient(
        &self,
        batch: &[&EmbeddingRecord],
        plan: &BatchPlan,
        partitions: &BTreeMap<BuildingId, ScalePartition>,
        loss: &LossConfig,
        objective: &Objective,
    ) -> Result<BatchGradient> {
        if batch.len() != 2 * plan.len() {
            return Err(Error::Shape(format!(
                "{} batch records for {} pairs",
                batch.len(),
                plan.len()
            )));
        }
        let raw_out: Vec<Vec<f64>> = batch.iter().map(|r| self.forward(&r.vector)).collect();
        let unit: Vec<Vec<f64>> = raw_out
            .iter()
            .map(|z| {
                let n = norm(z);
                z.iter().map(|v| v / n).collect()
            })
            .collect();
        let labels = batch
            .iter()
            .map(|r| {
                self.proxy_ids
                    .iter()
                    .position(|&b| b == r.building_id)
                    .ok_or(Error::Lookup {
                        kind: "proxy label",
                        id: r.building_id,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let (total, dycl, clust, embedding_grads, proxy_grads) = embedding_objective(
            &unit,
            &labels,
            plan,
            partitions,
            &self.proxies,
            loss,
            objective,
        )?;
        let raw_dim = self.raw_dim;
        let mut weights = vec![0.0; self.embed_dim * raw_dim];
        let mut bias = vec![0.0; self.embed_dim];
        for ((z, g), r) in raw_out.iter().zip(&embedding_grads).zip(batch) {
            let gz = normalize_backward(z, g);
            for (row, &gzr) in gz.iter().enumerate() {
                bias[row] += gzr;
                if gzr != 0.0 {
                    let gw = &mut weights[row * raw_dim..(row + 1) * raw_dim];
                    gw.iter_mut()
                        .zip(&r.vector)
                        .for_each(|(a, &x)| *a += gzr * f64::from(x));
                }
            }
        }
        Ok(BatchGradient {
            loss: total,
            dycl,
            clust,
            weights,
            bias,
            proxies: proxy_grads,
        })
    }

    /// Plain gradient step on every parameter; proxies are not re-normalized.
    pub fn sgd_step(&mut self, grad: &BatchGradient, lr: f64) {
        self.weights
            .iter_mut()
            .zip(&grad.weights)
            .for_each(|(p, g)| *p -= lr * g);
        self.bias
            .iter_mut()
            .zip(&grad.bias)
            .for_each(|(p, g)| *p -= lr * g);
        for (p, g) in self.proxies.iter_mut().zip(&grad.proxies) {
            p.iter_mut().zip(g).for_each(|(a, b)| *a -= lr * b);
        }
    }

    fn renormalize_proxies(&mut self) -> Result<()> {
        for (id, v) in self.proxy_ids.iter().zip(&mut self.proxies) {
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

/// Images of one building split by view.
#[derive(Default)]
struct BuildingImages<'a> {
    drone: Vec<&'a EmbeddingRecord>,
    satellite: Vec<&'a EmbeddingRecord>,
}

/// Trains the encoder on the train split of `registry`.
///
/// Each step samples `batch_buildings` distinct train buildings and one random
/// drone and one random satellite image of each. Deterministic for a fixed seed.
pub fn train(
    raw: &EmbeddingSet,
    registry: &CampusRegistry,
    scales: &ScaleConfig,
    loss: &LossConfig,
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    loss.validate()?;
    let num_scales = scales.num_scales();
    match &config.objective {
        Objective::Dycl if loss.margins.len() != num_scales => {
            return Err(Error::Config(format!(
                "{} margins for {num_scales} scales",
                loss.margins.len()
            )));
        }
        Objective::Triplet { scales: s, .. } if s.iter().any(|&l| l >= num_scales) => {
            return Err(Error::Config(format!(
                "triplet scale outside 0..{num_scales}"
            )));
        }
        _ => {}
    }
    let train_registry = registry.split(Split::Train)?;
    let partitions = build_all_partitions(&train_registry, scales)?;

    let mut images: BTreeMap<BuildingId, BuildingImages> = BTreeMap::new();
    for r in raw.records() {
        if train_registry.position(r.building_id).is_some() {
            let entry = images.entry(r.building_id).or_default();
            match r.view {
                View::Drone => entry.drone.push(r),
                View::Satellite => entry.satellite.push(r),
            }
        }
    }
    let eligible: Vec<BuildingId> = images
        .iter()
        .filter(|(_, im)| !im.drone.is_empty() && !im.satellite.is_empty())
        .map(|(&b, _)| b)
        .collect();
    if eligible.len() < config.batch_buildings {
        return Err(Error::Input(format!(
            "{} train buildings with both views, batch needs {}",
            eligible.len(),
            config.batch_buildings
        )));
    }

    let proxy_ids: Vec<BuildingId> = train_registry
        .buildings()
        .iter()
        .map(|b| b.building_id)
        .collect();
    let mut state = EncoderState::initialize(raw.dimension(), proxy_ids, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut w_opt = Momentum::new(state.weights.len());
    let mut b_opt = Momentum::new(state.bias.len());
    let mut p_opt: Vec<Momentum> = state
        .proxies
        .iter()
        .map(|p| Momentum::new(p.len()))
        .collect();
    let (lr, mu) = (config.learning_rate, config.momentum);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let (mut sum_total, mut sum_dycl, mut sum_clust) = (0.0, 0.0, 0.0);
        for step in 0..config.steps_per_epoch {
            let global_step = epoch * config.steps_per_epoch + step;
            let chosen = sample(&mut rng, eligible.len(), config.batch_buildings);
            let mut pairs = Vec::with_capacity(config.batch_buildings);
            let mut drones: Vec<&EmbeddingRecord> = Vec::new();
            let mut sats: Vec<&EmbeddingRecord> = Vec::new();
            for idx in chosen.iter() {
                let b = eligible[idx];
                let im = &images[&b];
                let d = im.drone[rng.random_range(0..im.drone.len())];
                let s = im.satellite[rng.random_range(0..im.satellite.len())];
                pairs.push(BatchPair {
                    building_id: b,
                    drone: d.image_id,
                    satellite: s.image_id,
                });
                drones.push(d);
                sats.push(s);
            }
            let plan = BatchPlan::new(pairs)?;
            let batch: Vec<&EmbeddingRecord> = drones.into_iter().chain(sats).collect();
            let grad = state.batch_gradient(&batch, &plan, &partitions, loss, &config.objective)?;
            if !grad.is_finite() {
                return Err(Error::Diverged {
                    step: global_step,
                    detail: format!("loss {}", grad.loss),
                });
            }
            sum_total += grad.loss;
            sum_dycl += grad.dycl;
            sum_clust += grad.clust;

            if lr > 0.0 {
                w_opt.step(&mut state.weights, &grad.weights, lr, mu);
                b_opt.step(&mut state.bias, &grad.bias, lr, mu);
                for ((p, g), opt) in state.proxies.iter_mut().zip(&grad.proxies).zip(&mut p_opt) {
                    opt.step(p, g, lr, mu);
                }
                state.renormalize_proxies().map_err(|e| Error::Diverged {
                    step: global_step,
                    detail: e.to_string(),
                })?;
            }
        }
        let steps = config.steps_per_epoch as f64;
        log.push(EpochLog {
            epoch,
            mean_total: sum_total / steps,
            mean_dycl: sum_dycl / steps,
            mean_clust: sum_clust / steps,
        });
    }
    Ok(TrainOutcome { state, log })
}

/// Satisfied and total cross-view triplet counts per scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarginSatisfaction {
    pub satisfied: Vec<u64>,
    pub total: Vec<u64>,
}

impl MarginSatisfaction {
    pub fn rate(&self, scale: usize) -> Option<f64> {
        (self.total[scale] > 0).then(|| self.satisfied[scale] as f64 / self.total[scale] as f64)
    }

    pub fn rates(&self) -> Vec<Option<f64>> {
        (0..self.total.len()).map(|l| self.rate(l)).collect()
    }
}

/// Fraction of triplets `(a, p, n)` with `r_ap - r_an >= m_l`, counted exhaustively.
///
/// Anchors are all images of `set`; positives and negatives are images of the
/// other view, positives at level `<= l` and negatives at the pure-negative level.
pub fn margin_satisfaction_report(
    set: &EmbeddingSet,
    partitions: &BTreeMap<BuildingId, ScalePartition>,
    margins: &[f64],
) -> Result<MarginSatisfaction> {
    if !set.is_normalized() {
        return Err(Error::Precondition(
            "margin report needs normalized embeddings".into(),
        ));
    }
    let vectors: Vec<(ImageId, BuildingId, View, Vec<f64>)> = set
        .records()
        .iter()
        .map(|r| {
            (
                r.image_id,
                r.building_id,
                r.view,
                r.vector.iter().map(|&v| f64::from(v)).collect(),
            )
        })
        .collect();
    let num_scales = margins.len();
    let mut satisfied = vec![0u64; num_scales];
    let mut total = vec![0u64; num_scales];
    for (_, b, view, f) in &vectors {
        let part = partitions.get(b).ok_or(Error::Lookup {
            kind: "partition anchor",
            id: *b,
        })?;
        if part.num_scales() != num_scales {
            return Err(Error::Config(format!(
                "{num_scales} margins for {} scales",
                part.num_scales()
            )));
        }
        let mut by_level: Vec<Vec<f64>> = vec![Vec::new(); num_scales + 1];
        for (_, other, v, g) in &vectors {
            if v != view {
                let level = part.level_of(*other).ok_or(Error::Lookup {
                    kind: "building",
                    id: *other,
                })?;
                by_level[level].push(dot(f, g));
            }
        }
        let mut negatives = std::mem::take(&mut by_level[num_scales]);
        negatives.sort_by(f64::total_cmp);
        let mut positives: Vec<f64> = Vec::new();
        for (l, &m) in margins.iter().enumerate() {
            positives.extend_from_slice(&by_level[l]);
            total[l] += (positives.len() * negatives.len()) as u64;
            for &p in &positives {
                satisfied[l] += negatives.partition_point(|&n| p - n >= m) as u64;
            }
        }
    }
    Ok(MarginSatisfaction { satisfied, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_campus, SynthConfig};

    fn tiny() -> (crate::synth::SynthCampus, TrainerConfig) {
        let synth = SynthConfig {
            n_buildings_train: 10,
            n_buildings_test: 4,
            drone_images_per_building: 2,
            raw_dim: 16,
            area_side: 1500.0,
            ..SynthConfig::default()
        };
        let trainer = TrainerConfig {
            embed_dim: 8,
            batch_buildings: 6,
            epochs: 2,
            steps_per_epoch: 3,
            ..TrainerConfig::default()
        };
        (generate_campus(&synth).unwrap(), trainer)
    }

    #[test]
    fn deterministic_training() {
        let (campus, cfg) = tiny();
        let run = || {
            train(
                &campus.raw,
                &campus.registry,
                &ScaleConfig::default(),
                &LossConfig::default(),
                &cfg,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_keeps_initial_state() {
        let (campus, cfg) = tiny();
        let a = train(
            &campus.raw,
            &campus.registry,
            &ScaleConfig::default(),
            &LossConfig::default(),
            &TrainerConfig {
                learning_rate: 0.0,
                ..cfg.clone()
            },
        )
        .unwrap();
        let b = train(
            &campus.raw,
            &campus.registry,
            &ScaleConfig::default(),
            &LossConfig::default(),
            &TrainerConfig {
                learning_rate: 0.0,
                epochs: 1,
                steps_per_epoch: 1,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn log_has_one_row_per_epoch() {
        let (campus, cfg) = tiny();
        let out = train(
            &campus.raw,
            &campus.registry,
            &ScaleConfig::default(),
            &LossConfig::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.log.len(), 2);
        let csv = log_to_csv(&out.log);
        assert_eq!(csv.lines().count(), 3);
        assert!(out.log.iter().all(|e| e.mean_total.is_finite()));
    }

    #[test]
    fn batch_larger_than_train_split_fails() {
        let (campus, cfg) = tiny();
        let cfg = TrainerConfig {
            batch_buildings: 11,
            ..cfg
        };
        let r = train(
            &campus.raw,
            &campus.registry,
            &ScaleConfig::default(),
            &LossConfig::default(),
            &cfg,
        );
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let (campus, cfg) = tiny();
        let cfg = TrainerConfig {
            learning_rate: 1e308,
            epochs: 3,
            ..cfg
        };
        let r = train(
            &campus.raw,
            &campus.registry,
            &ScaleConfig::default(),
            &LossConfig::default(),
            &cfg,
        );
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn one_hot_embeddings_satisfy_every_margin() {
        let (campus, _) = tiny();
        let train_reg = campus.registry.split(Split::Train).unwrap();
        let ids: Vec<BuildingId> = train_reg
            .buildings()
            .iter()
            .map(|b| b.building_id)
            .collect();
        let records = campus
            .raw
            .records()
            .iter()
            .filter(|r| ids.contains(&r.building_id))
            .map(|r| {
                let mut v = vec![0.0f32; ids.len()];
                v[ids.iter().position(|&b| b == r.building_id).unwrap()] = 1.0;
                EmbeddingRecord {
                    vector: v,
                    normalized: true,
                    ..r.clone()
                }
            })
            .collect();
        let set = EmbeddingSet::new(ids.len(), records).unwrap();
        let parts = build_all_partitions(&train_reg, &ScaleConfig::default()).unwrap();
        let report = margin_satisfaction_report(&set, &parts, &[0.3, 0.2, 0.1]).unwrap();
        assert_eq!(report.rate(0), Some(1.0));
    }

    #[test]
    fn satisfaction_counts_match_brute_force() {
        let (campus, cfg) = tiny();
        let out = train(
            &campus.raw,
            &campus.registry,
            &ScaleConfig::default(),
            &LossConfig::default(),
            &cfg,
        )
        .unwrap();
        let train_reg = campus.registry.split(Split::Train).unwrap();
        let set = out
            .state
            .encode(
                &campus
                    .raw
                    .filter(|r| train_reg.position(r.building_id).is_some()),
            )
            .unwrap();
        let parts = build_all_partitions(&train_reg, &ScaleConfig::default()).unwrap();
        let margins = [0.3, 0.2, 0.1];
        let report = margin_satisfaction_report(&set, &parts, &margins).unwrap();
        let v: Vec<Vec<f64>> = set
            .records()
            .iter()
            .map(|r| r.vector.iter().map(|&x| f64::from(x)).collect())
            .collect();
        for (l, &m) in margins.iter().enumerate() {
            let (mut ok, mut all) = (0u64, 0u64);
            for (a, ra) in set.records().iter().enumerate() {
                let part = &parts[&ra.building_id];
                for (p, rp) in set.records().iter().enumerate() {
                    if rp.view == ra.view || part.level_of(rp.building_id).unwrap() > l {
                        continue;
                    }
                    for (n, rn) in set.records().iter().enumerate() {
                        if rn.view == ra.view || part.level_of(rn.building_id).unwrap() != 3 {
                            continue;
                        }
                        all += 1;
                        ok += u64::from(dot(&v[a], &v[p]) - dot(&v[a], &v[n]) >= m);
                    }
                }
            }
            assert_eq!((report.satisfied[l], report.total[l]), (ok, all));
        }
    }
}
