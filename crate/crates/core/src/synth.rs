//! Synthetic campuses with spatially correlated cross-view features.
//!
//! Each building gets a latent vector made of two blocks: an identity block
//! drawn independently per building, and a context block sampled from a
//! smooth random field over the campus (random Fourier features of a Gaussian
//! kernel), so nearby buildings share context. Each view observes the latent
//! through its own fixed random linear map, partly shared between views, plus
//! per-image Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingRecord, EmbeddingSet, View};
use crate::error::{Error, Result};
use crate::geo::{BuildingId, BuildingRecord, CampusRegistry, Coord, CoordSystem, Split};

const MIN_SPACING_M: f64 = 10.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_buildings_train: usize,
    pub n_buildings_test: usize,
    /// Side of the square campus in meters.
    pub area_side: f64,
    pub drone_images_per_building: usize,
    pub satellite_images_per_building: usize,
    pub raw_dim: usize,
    pub identity_dim: usize,
    pub context_dim: usize,
    pub identity_strength: f64,
    pub context_strength: f64,
    /// Length scale of the context field in meters.
    pub context_length_scale: f64,
    pub noise_sigma: f64,
    /// Weight of the view-specific part of each view's observation map.
    pub view_gap: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_buildings_train: 60,
            n_buildings_test: 40,
            area_side: 1500.0,
            drone_images_per_building: 16,
            satellite_images_per_building: 1,
            raw_dim: 128,
            identity_dim: 16,
            context_dim: 48,
            identity_strength: 1.0,
            context_strength: 1.0,
            context_length_scale: 300.0,
            noise_sigma: 0.3,
            view_gap: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_buildings_train", self.n_buildings_train),
            ("n_buildings_test", self.n_buildings_test),
            ("drone_images_per_building", self.drone_images_per_building),
            (
                "satellite_images_per_building",
                self.satellite_images_per_building,
            ),
            ("raw_dim", self.raw_dim),
            ("identity_dim", self.identity_dim),
            ("context_dim", self.context_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !(self.noise_sigma >= 0.0)
            || !(self.context_length_scale > 0.0)
            || !(self.area_side > 0.0)
        {
            return Err(Error::Config(
                "noise_sigma >= 0, context_length_scale > 0 and area_side > 0 required".into(),
            ));
        }
        if !(self.identity_strength >= 0.0)
            || !(self.context_strength >= 0.0)
            || !(self.view_gap >= 0.0)
        {
            return Err(Error::Config(
                "strengths and view_gap must be non-negative".into(),
            ));
        }
        if self.identity_strength == 0.0 && self.context_strength == 0.0 {
            return Err(Error::Config(
                "identity and context strength cannot both be zero".into(),
            ));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.identity_dim + self.context_dim
    }
}

/// Generated campus: registry, raw per-image features and per-building latents.
#[derive(Clone, Debug)]
pub struct SynthCampus {
    pub registry: CampusRegistry,
    /// Raw (unnormalized) features of both views.
    pub raw: EmbeddingSet,
    /// Latent vector per building, registry order.
    pub latents: Vec<Vec<f64>>,
}

impl SynthCampus {
    pub fn latent_of(&self, id: BuildingId) -> Option<&[f64]> {
        self.registry
            .position(id)
            .map(|p| self.latents[p].as_slice())
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Deterministic for a fixed config (including seed).
pub fn generate_campus(config: &SynthConfig) -> Result<SynthCampus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_buildings_train + config.n_buildings_test;

    let mut points: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while points.len() < n {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS * n {
            return Err(Error::Generation(format!(
                "could not place {n} buildings {MIN_SPACING_M} m apart in a {} m square",
                config.area_side
            )));
        }
        let p = (
            rng.random_range(0.0..config.area_side),
            rng.random_range(0.0..config.area_side),
        );
        if points
            .iter()
            .all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= MIN_SPACING_M)
        {
            points.push(p);
        }
    }
    let mut splits: Vec<Split> = (0..n)
        .map(|i| {
            if i < config.n_buildings_train {
                Split::Train
            } else {
                Split::Test
            }
        })
        .collect();
    splits.shuffle(&mut rng);
    let buildings: Vec<BuildingRecord> = points
        .iter()
        .zip(&splits)
        .enumerate()
        .map(|(i, (&(x, y), &split))| BuildingRecord {
            building_id: i as BuildingId + 1,
            name: None,
            coord: Coord::Planar { x, y },
            split,
        })
        .collect();
    let registry = CampusRegistry::new(CoordSystem::Planar, buildings)?;

    // random Fourier features: c(x)·c(y) ≈ exp(-|x - y|² / 2ℓ²)
    let m = config.context_dim;
    let freq = Normal::new(0.0, 1.0 / config.context_length_scale).expect("positive length scale");
    let omegas: Vec<(f64, f64)> = (0..m)
        .map(|_| (freq.sample(&mut rng), freq.sample(&mut rng)))
        .collect();
    let phases: Vec<f64> = (0..m)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let rff_scale = (2.0 / m as f64).sqrt();
    let id_std = 1.0 / (config.identity_dim as f64).sqrt();

    let latents: Vec<Vec<f64>> = points
        .iter()
        .map(|&(x, y)| {
            let mut z: Vec<f64> = (0..config.identity_dim)
                .map(|_| config.identity_strength * id_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            z.extend(omegas.iter().zip(&phases).map(|(&(wx, wy), &ph)| {
                config.context_strength * rff_scale * (wx * x + wy * y + ph).cos()
            }));
            z
        })
        .collect();

    let (raw_dim, lat) = (config.raw_dim, config.latent_dim());
    let map_std = 1.0 / (raw_dim as f64).sqrt();
    let shared = gaussian_matrix(&mut rng, raw_dim, lat, map_std);
    let norm = 1.0 / (1.0 + config.view_gap * config.view_gap).sqrt();
    let view_maps: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let own = gaussian_matrix(&mut rng, raw_dim, lat, map_std);
            shared
                .iter()
                .zip(&own)
                .map(|(s, o)| norm * (s + config.view_gap * o))
                .collect()
        })
        .collect();
    let noise_std = config.noise_sigma * map_std;

    let mut records = Vec::new();
    let mut next_id: u64 = 1;
    for (b, z) in registry.buildings().iter().zip(&latents) {
        for (view, count) in [
            (View::Drone, config.drone_images_per_building),
            (View::Satellite, config.satellite_images_per_building),
        ] {
            let map = &view_maps[usize::from(view == View::Satellite)];
            for _ in 0..count {
                let vector = (0..raw_dim)
                    .map(|r| {
                        let clean: f64 = map[r * lat..(r + 1) * lat]
                            .iter()
                            .zip(z)
                            .map(|(a, b)| a * b)
                            .sum();
                        (clean + noise_std * rng.sample::<f64, _>(StandardNormal)) as f32
                    })
                    .collect();
                records.push(EmbeddingRecord {
                    image_id: next_id,
                    building_id: b.building_id,
                    view,
                    normalized: false,
                    vector,
                });
                next_id += 1;
            }
        }
    }
    let raw = EmbeddingSet::new(raw_dim, records)?;
    Ok(SynthCampus {
        registry,
        raw,
        latents,
    })
}
