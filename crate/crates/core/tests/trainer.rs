use hiergeo_core::embedding::{EmbeddingRecord, EmbeddingSet, View};
use hiergeo_core::geo::{build_all_partitions, ScaleConfig, Split};
use hiergeo_core::losses::{BatchPair, BatchPlan, LossConfig, MarginSchedule};
use hiergeo_core::synth::{generate_campus, SynthConfig};
use hiergeo_core::train::{train, EncoderState, Objective, TrainerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn default_training_reduces_loss() {
    for seed in 0..3 {
        let campus = generate_campus(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainerConfig {
            seed: seed + 1,
            ..TrainerConfig::default()
        };
        let out = train(
            &campus.raw,
            &campus.registry,
            &ScaleConfig::default(),
            &LossConfig::default(),
            &cfg,
        )
        .unwrap();
        let (first, last) = (out.log[0].mean_total, out.log.last().unwrap().mean_total);
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn raw_cross_view_similarity_decays_with_distance() {
    for seed in 0..3 {
        let campus = generate_campus(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let parts = build_all_partitions(&campus.registry, &ScaleConfig::default()).unwrap();
        let drones = campus.raw.view(View::Drone);
        let sats = campus.raw.view(View::Satellite);
        let (mut near, mut far) = ((0.0, 0usize), (0.0, 0usize));
        for s in sats.records() {
            let p = &parts[&s.building_id];
            for d in drones.records() {
                match p.level_of(d.building_id).unwrap() {
                    1 => near = (near.0 + cosine(&s.vector, &d.vector), near.1 + 1),
                    3 => far = (far.0 + cosine(&s.vector, &d.vector), far.1 + 1),
                    _ => {}
                }
            }
        }
        let (near, far) = (near.0 / near.1 as f64, far.0 / far.1 as f64);
        assert!(near > far, "seed {seed}: level-1 {near} vs level-3 {far}");
    }
}

#[test]
fn small_gradient_step_does_not_increase_batch_loss() {
    let campus = generate_campus(&SynthConfig {
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let train_reg = campus.registry.split(Split::Train).unwrap();
    let parts = build_all_partitions(&train_reg, &ScaleConfig::default()).unwrap();
    let ids: Vec<u64> = train_reg
        .buildings()
        .iter()
        .map(|b| b.building_id)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let cfg = TrainerConfig {
            seed: trial,
            ..TrainerConfig::default()
        };
        let state = EncoderState::initialize(campus.raw.dimension(), ids.clone(), &cfg).unwrap();
        let start = rng.random_range(0..ids.len() - 16);
        let chosen = &ids[start..start + 16];
        let pick = |b: u64, v: View| {
            campus
                .raw
                .records()
                .iter()
                .find(|r| r.building_id == b && r.view == v)
                .unwrap()
        };
        let drones: Vec<&EmbeddingRecord> = chosen.iter().map(|&b| pick(b, View::Drone)).collect();
        let sats: Vec<&EmbeddingRecord> =
            chosen.iter().map(|&b| pick(b, View::Satellite)).collect();
        let plan = BatchPlan::new(
            chosen
                .iter()
                .zip(drones.iter().zip(&sats))
                .map(|(&b, (d, s))| BatchPair {
                    building_id: b,
                    drone: d.image_id,
                    satellite: s.image_id,
                })
                .collect(),
        )
        .unwrap();
        let batch: Vec<&EmbeddingRecord> = drones.into_iter().chain(sats).collect();
        for objective in [
            Objective::Dycl,
            Objective::Triplet {
                scales: vec![0, 1, 2],
                margin: 0.1,
            },
        ] {
            let loss = LossConfig::default();
            let g = state
                .batch_gradient(&batch, &plan, &parts, &loss, &objective)
                .unwrap();
            let mut next = state.clone();
            next.sgd_step(&g, 1e-6);
            let after = next
                .batch_gradient(&batch, &plan, &parts, &loss, &objective)
                .unwrap()
                .loss;
            assert!(
                after <= g.loss + 1e-8,
                "trial {trial} {objective:?}: {} -> {after}",
                g.loss
            );
        }
    }
}

#[test]
fn single_scale_and_multi_scale_runs_emit_comparable_logs() {
    let campus = generate_campus(&SynthConfig::default()).unwrap();
    let short = TrainerConfig {
        epochs: 3,
        steps_per_epoch: 5,
        ..TrainerConfig::default()
    };
    let single = ScaleConfig::new(vec![0.0]).unwrap();
    let single_loss = LossConfig {
        margins: MarginSchedule::new(vec![0.3]).unwrap(),
        ..LossConfig::default()
    };
    let a = train(&campus.raw, &campus.registry, &single, &single_loss, &short).unwrap();
    let b = train(
        &campus.raw,
        &campus.registry,
        &ScaleConfig::default(),
        &LossConfig::default(),
        &short,
    )
    .unwrap();
    assert_eq!(a.log.len(), b.log.len());
    assert!(a.log.iter().chain(&b.log).all(|e| e.mean_total.is_finite()));
}

#[test]
fn encoder_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (raw_dim, embed_dim) = (6, 4);
    let weights: Vec<f64> = (0..raw_dim * embed_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let bias: Vec<f64> = (0..embed_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let state = EncoderState {
        embed_dim,
        raw_dim,
        weights: weights.clone(),
        bias: bias.clone(),
        proxy_ids: vec![],
        proxies: vec![],
    };
    let x: Vec<f32> = (0..raw_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut z = vec![0.0f64; embed_dim];
    for r in 0..embed_dim {
        z[r] = bias[r];
        for c in 0..raw_dim {
            z[r] += weights[r * raw_dim + c] * f64::from(x[c]);
        }
    }
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let out = state.embed(&x).unwrap();
    for r in 0..embed_dim {
        assert!((out[r] - z[r] / n).abs() < 1e-6);
    }

    let zero = EncoderState {
        weights: vec![0.0; raw_dim * embed_dim],
        ..state.clone()
    };
    let nb = bias.iter().map(|v| v * v).sum::<f64>().sqrt();
    let out = zero.embed(&x).unwrap();
    assert!(out
        .iter()
        .zip(&bias)
        .all(|(o, b)| (o - b / nb).abs() < 1e-12));

    let mut eye = vec![0.0; raw_dim * raw_dim];
    (0..raw_dim).for_each(|i| eye[i * raw_dim + i] = 1.0);
    let identity = EncoderState {
        embed_dim: raw_dim,
        raw_dim,
        weights: eye,
        bias: vec![0.0; raw_dim],
        proxy_ids: vec![],
        proxies: vec![],
    };
    let rec = EmbeddingRecord {
        image_id: 1,
        building_id: 1,
        view: View::Drone,
        normalized: false,
        vector: x.clone(),
    };
    let set = identity
        .encode(&EmbeddingSet::new(raw_dim, vec![rec]).unwrap())
        .unwrap();
    let nx = x.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
    assert!(set.records()[0].normalized);
    for (o, xi) in set.records()[0].vector.iter().zip(&x) {
        assert!((f64::from(*o) - f64::from(*xi) / nx).abs() < 1e-6);
    }
    assert!(identity.embed(&x[..3]).is_err());
}
