//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust counterpart that the native tests
//! call directly; the exported wrappers only convert errors for JavaScript.

use hiergeo_core::embedding::DenseMatrix;
use hiergeo_core::geo::{build_scale_partition, Coord, ScaleConfig, Split};
use hiergeo_core::losses::{dycl_from_similarities, LossConfig, MarginSchedule};
use hiergeo_core::rerank::{
    k_reciprocal_rerank, ms_rerank, rank_shift_profile, ranking_from_distances,
    AugmentedDistanceMatrix, KSchedule, RerankConfig,
};
use hiergeo_core::synth::{generate_campus, SynthConfig};
use hiergeo_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct PlacedBuilding {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub level: usize,
    pub train: bool,
}

#[derive(Debug, Serialize)]
pub struct CampusView {
    pub side: f64,
    pub anchor: u64,
    pub thresholds: Vec<f64>,
    pub buildings: Vec<PlacedBuilding>,
}

/// Places a synthetic campus and labels every building with its scale level
/// relative to the building at `anchor_index`.
pub fn campus_partition(
    seed: u64,
    buildings: usize,
    side: f64,
    anchor_index: usize,
    thresholds: Vec<f64>,
) -> Result<CampusView> {
    let cfg = SynthConfig {
        n_buildings_train: buildings - buildings * 2 / 5,
        n_buildings_test: buildings * 2 / 5,
        area_side: side,
        drone_images_per_building: 1,
        raw_dim: 8,
        identity_dim: 2,
        context_dim: 2,
        seed,
        ..SynthConfig::default()
    };
    let campus = generate_campus(&cfg)?;
    let scales = ScaleConfig::new(thresholds.clone())?;
    let all = campus.registry.buildings();
    let anchor = all[anchor_index.min(all.len() - 1)].building_id;
    let partition = build_scale_partition(anchor, &campus.registry, &scales)?;
    let buildings = all
        .iter()
        .map(|b| {
            let (x, y) = match b.coord {
                Coord::Planar { x, y } => (x, y),
                Coord::Geographic { lat, lon } => (lon, lat),
            };
            PlacedBuilding {
                id: b.building_id,
                x,
                y,
                level: partition
                    .level_of(b.building_id)
                    .unwrap_or(scales.num_scales()),
                train: b.split == Split::Train,
            }
        })
        .collect();
    Ok(CampusView {
        side,
        anchor,
        thresholds,
        buildings,
    })
}

/// Per-scale loss of one anchor holding a single positive at `scale` and one
/// pure negative, as a function of the similarity gap `s_pos - s_neg`.
///
/// Returns `margins.len()` rows of `steps` values each, flattened row-major.
pub fn dycl_curve(
    tau: f64,
    margins: Vec<f64>,
    gap_min: f64,
    gap_max: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let config = LossConfig {
        tau,
        margins: MarginSchedule::new(margins)?,
        ..LossConfig::default()
    };
    config.validate()?;
    let num_scales = config.margins.len();
    let steps = steps.max(2);
    let mut out = Vec::with_capacity(num_scales * steps);
    for scale in 0..num_scales {
        let mut positives = vec![Vec::new(); scale + 1];
        positives[scale] = vec![0];
        for i in 0..steps {
            let gap = gap_min + (gap_max - gap_min) * i as f64 / (steps - 1) as f64;
            let (loss, _) =
                dycl_from_similarities(&[gap / 2.0, -gap / 2.0], &positives, &[1], &config)?;
            out.push(loss);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct RerankView {
    pub points: Vec<[f64; 2]>,
    pub original: Vec<usize>,
    pub standard: Vec<usize>,
    pub multi_scale: Vec<usize>,
    pub standard_shift: Vec<f64>,
    pub multi_scale_shift: Vec<f64>,
}

/// Clustered 2-D gallery around a query at the origin, re-ranked by the
/// standard method with `k` and by the segmented method with `schedule`.
pub fn rerank_demo(
    seed: u64,
    gallery: usize,
    k: usize,
    schedule: Vec<usize>,
) -> Result<RerankView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<[f64; 2]> = (0..4)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let mut points = vec![[0.0, 0.0]];
    for i in 0..gallery {
        let c = centres[i % centres.len()];
        points.push([
            c[0] + rng.random_range(-0.25..0.25),
            c[1] + rng.random_range(-0.25..0.25),
        ]);
    }
    let n = points.len();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(
                i,
                j,
                ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2))
                    .sqrt(),
            );
        }
    }
    let original = ranking_from_distances(&m.row(0)[1..]);
    let d = AugmentedDistanceMatrix::new(m)?;
    let cfg = RerankConfig {
        k,
        k_floor: 1,
        ..RerankConfig::default()
    };
    let standard = ranking_from_distances(&k_reciprocal_rerank(&d, &cfg)?);
    let multi_scale = ranking_from_distances(&ms_rerank(&d, &KSchedule::new(schedule, 1)?, &cfg)?);
    let standard_shift = rank_shift_profile(std::slice::from_ref(&original), std::slice::from_ref(&standard))?;
    let multi_scale_shift = rank_shift_profile(std::slice::from_ref(&original), std::slice::from_ref(&multi_scale))?;
    Ok(RerankView {
        points,
        original,
        standard,
        multi_scale,
        standard_shift,
        multi_scale_shift,
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON-encoded [`CampusView`].
#[wasm_bindgen(js_name = campusPartition)]
pub fn campus_partition_js(
    seed: u32,
    buildings: usize,
    side: f64,
    anchor_index: usize,
    thresholds: Vec<f64>,
) -> std::result::Result<String, JsError> {
    to_js(campus_partition(
        seed as u64,
        buildings,
        side,
        anchor_index,
        thresholds,
    ))
}

#[wasm_bindgen(js_name = dyclCurve)]
pub fn dycl_curve_js(
    tau: f64,
    margins: Vec<f64>,
    gap_min: f64,
    gap_max: f64,
    steps: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    dycl_curve(tau, margins, gap_min, gap_max, steps).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON-encoded [`RerankView`].
#[wasm_bindgen(js_name = rerankDemo)]
pub fn rerank_demo_js(
    seed: u32,
    gallery: usize,
    k: usize,
    schedule: Vec<usize>,
) -> std::result::Result<String, JsError> {
    to_js(rerank_demo(seed as u64, gallery, k, schedule))
}
