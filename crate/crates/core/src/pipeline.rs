//! End-to-end evaluation of encoded test images in one retrieval direction.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::{similarity_matrix, DenseMatrix, EmbeddingSet, ImageId, View};
use crate::error::{Error, Result};
use crate::geo::{
    build_all_partitions, BuildingId, CampusRegistry, RelevanceTable, ScaleConfig, ScalePartition,
    Split,
};
use crate::metrics::{evaluate, MetricConfig, MetricReport, Scores};
use crate::rerank::{
    compute_k_schedule, rerank_batch, ComposedDistances, KSchedule, RerankConfig, RerankMethod,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Satellite queries against a drone gallery.
    SatelliteToDrone,
    /// Drone queries against a satellite gallery.
    DroneToSatellite,
}

impl Direction {
    pub fn query_view(self) -> View {
        match self {
            Direction::SatelliteToDrone => View::Satellite,
            Direction::DroneToSatellite => View::Drone,
        }
    }

    pub fn gallery_view(self) -> View {
        self.query_view().other()
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::SatelliteToDrone => "satellite_to_drone",
            Direction::DroneToSatellite => "drone_to_satellite",
        }
    }
}

/// Test-split queries, gallery and their graded relevance.
#[derive(Clone, Debug)]
pub struct RetrievalTask {
    pub direction: Direction,
    pub queries: EmbeddingSet,
    pub gallery: EmbeddingSet,
    pub relevance: RelevanceTable,
    distances: ComposedDistances,
}

impl RetrievalTask {
    pub fn new(
        encoded: &EmbeddingSet,
        registry: &CampusRegistry,
        scales: &ScaleConfig,
        direction: Direction,
    ) -> Result<Self> {
        let test = registry.split(Split::Test)?;
        let in_test = |b: BuildingId| test.position(b).is_some();
        let queries =
            encoded.filter(|r| r.view == direction.query_view() && in_test(r.building_id));
        let gallery =
            encoded.filter(|r| r.view == direction.gallery_view() && in_test(r.building_id));
        if queries.is_empty() || gallery.is_empty() {
            return Err(Error::Input(format!(
                "no test {} queries or gallery items",
                direction.label()
            )));
        }
        let partitions = build_all_partitions(&test, scales)?;
        let relevance = RelevanceTable::build(
            &queries.building_ids(),
            &gallery.building_ids(),
            &partitions,
        )?;
        let distances = ComposedDistances::from_embeddings(&queries, &gallery)?;
        Ok(Self {
            direction,
            queries,
            gallery,
            relevance,
            distances,
        })
    }

    pub fn query_ids(&self) -> Vec<ImageId> {
        self.queries.image_ids()
    }

    pub fn gallery_ids(&self) -> Vec<ImageId> {
        self.gallery.image_ids()
    }

    pub fn composed(&self) -> &ComposedDistances {
        &self.distances
    }

    /// Query-by-gallery distances after re-ranking.
    pub fn distances(&self, method: &RerankMethod, config: &RerankConfig) -> Result<DenseMatrix> {
        rerank_batch(&self.distances, method, config)
    }

    /// Metrics of the raw cosine ranking.
    pub fn evaluate_similarity(&self, metrics: &MetricConfig) -> Result<MetricReport> {
        let sims = similarity_matrix(&self.queries, &self.gallery)?;
        evaluate(
            &self.query_ids(),
            &self.gallery_ids(),
            Scores::Similarity(&sims.scores),
            &self.relevance,
            metrics,
        )
    }

    pub fn evaluate(
        &self,
        method: &RerankMethod,
        rerank: &RerankConfig,
        metrics: &MetricConfig,
    ) -> Result<MetricReport> {
        if *method == RerankMethod::None {
            return self.evaluate_similarity(metrics);
        }
        let d = self.distances(method, rerank)?;
        evaluate(
            &self.query_ids(),
            &self.gallery_ids(),
            Scores::Distance(&d),
            &self.relevance,
            metrics,
        )
    }
}

/// Per-scale re-ranking schedule from train-split statistics.
///
/// Image counts cover both views of every train building; an explicit
/// `config.schedule` takes precedence.
pub fn training_k_schedule(
    raw: &EmbeddingSet,
    registry: &CampusRegistry,
    scales: &ScaleConfig,
    config: &RerankConfig,
) -> Result<KSchedule> {
    if let Some(s) = &config.schedule {
        return KSchedule::new(s.clone(), config.k_floor);
    }
    let train = registry.split(Split::Train)?;
    let partitions: BTreeMap<BuildingId, ScalePartition> = build_all_partitions(&train, scales)?;
    let mut counts: HashMap<BuildingId, usize> = HashMap::new();
    for r in raw.records() {
        if train.position(r.building_id).is_some() {
            *counts.entry(r.building_id).or_default() += 1;
        }
    }
    compute_k_schedule(&partitions, &counts, config)
}
