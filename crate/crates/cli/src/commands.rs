use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hiergeo_core::config::PipelineConfig;
use hiergeo_core::embedding::{
    load_embeddings, load_square_matrix, matrix_to_csv, save_embeddings, DenseMatrix, EmbeddingSet,
};
use hiergeo_core::geo::{
    build_all_partitions, load_registry, save_registry, CampusRegistry, Split,
};
use hiergeo_core::losses::LossConfig;
use hiergeo_core::metrics::{scale_name, MetricReport};
use hiergeo_core::pipeline::{training_k_schedule, Direction, RetrievalTask};
use hiergeo_core::rerank::{
    rank_shift_profile, ranking_from_distances, rerank_batch, shift_profile_csv, ComposedDistances,
    KSchedule, RerankMethod,
};
use hiergeo_core::synth::generate_campus;
use hiergeo_core::train::{
    log_to_csv, margin_satisfaction_report, train as train_encoder, EncoderState, Objective,
    TrainerConfig,
};
use hiergeo_core::Error;
use serde_json::json;

use crate::manifest::Recorder;
use crate::{RerankChoice, Sweep};

const DIRECTIONS: [Direction; 2] = [Direction::SatelliteToDrone, Direction::DroneToSatellite];

fn input(cfg: &PipelineConfig, name: &str) -> anyhow::Result<PathBuf> {
    let path = cfg.io.out_dir.join(name);
    if !path.is_file() {
        return Err(Error::Input(format!(
            "missing input {} (run the earlier pipeline stage first)",
            path.display()
        ))
        .into());
    }
    Ok(path)
}

fn load_generated(cfg: &PipelineConfig) -> anyhow::Result<(CampusRegistry, EmbeddingSet)> {
    let registry = load_registry(&input(cfg, &cfg.io.registry)?)?;
    let raw = load_embeddings(&input(cfg, &cfg.io.raw_features)?)?;
    Ok((registry, raw))
}

fn load_embedded(cfg: &PipelineConfig) -> anyhow::Result<EmbeddingSet> {
    let set = load_embeddings(&input(cfg, &cfg.io.embeddings)?)?;
    Ok(if set.is_normalized() {
        set
    } else {
        set.normalized()?
    })
}

fn finish(rec: Recorder, command: &str, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let path = rec.finish(command, &cfg.to_toml_string(), cfg.seed)?;
    println!("manifest: {}", path.display());
    Ok(())
}

pub fn gen(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let mut rec = Recorder::new(&cfg.io.out_dir)?;
    let campus = generate_campus(&cfg.synth_config())?;
    rec.stage("generate");
    save_registry(&campus.registry, &rec.path(&cfg.io.registry))?;
    rec.record(&cfg.io.registry)?;
    save_embeddings(&campus.raw, &rec.path(&cfg.io.raw_features))?;
    rec.record(&cfg.io.raw_features)?;
    rec.stage("write");
    let train = campus
        .registry
        .buildings()
        .iter()
        .filter(|b| b.split == Split::Train)
        .count();
    println!(
        "generated {} buildings ({train} train / {} test), {} images",
        campus.registry.len(),
        campus.registry.len() - train,
        campus.raw.len()
    );
    finish(rec, "gen", cfg)
}

fn fit(
    cfg: &PipelineConfig,
    registry: &CampusRegistry,
    raw: &EmbeddingSet,
    loss: &LossConfig,
    trainer: &TrainerConfig,
) -> anyhow::Result<(EncoderState, EmbeddingSet, String)> {
    let out = train_encoder(raw, registry, &cfg.scale_config()?, loss, trainer)
        .context("training the encoder")?;
    let embedded = out.state.encode(raw)?;
    Ok((out.state, embedded, log_to_csv(&out.log)))
}

pub fn train(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let (registry, raw) = load_generated(cfg)?;
    let mut rec = Recorder::new(&cfg.io.out_dir)?;
    let (state, embedded, log) = fit(
        cfg,
        &registry,
        &raw,
        &cfg.loss_config()?,
        &cfg.trainer_config(),
    )?;
    rec.stage("train");
    rec.write(&cfg.io.encoder, serde_json::to_string(&state)?)?;
    save_embeddings(&embedded, &rec.path(&cfg.io.embeddings))?;
    rec.record(&cfg.io.embeddings)?;
    rec.write(&cfg.io.train_log, &log)?;

    let train_reg = registry.split(Split::Train)?;
    let partitions = build_all_partitions(&train_reg, &cfg.scale_config()?)?;
    let train_set = embedded.filter(|r| train_reg.position(r.building_id).is_some());
    let loss = cfg.loss_config()?;
    let report = margin_satisfaction_report(&train_set, &partitions, loss.margins.as_slice())?;
    let rates = report.rates();
    rec.write(
        "margin_satisfaction.json",
        serde_json::to_string_pretty(&json!({
            "margins": loss.margins.as_slice(),
            "rates": rates,
            "satisfied": report.satisfied,
            "total": report.total,
        }))?,
    )?;
    rec.stage("report");
    println!("trained encoder; margin satisfaction per scale: {rates:?}");
    finish(rec, "train", cfg)
}

fn rerank_method(
    cfg: &PipelineConfig,
    choice: RerankChoice,
    registry: &CampusRegistry,
    raw: &EmbeddingSet,
) -> anyhow::Result<(RerankMethod, Option<KSchedule>)> {
    Ok(match choice {
        RerankChoice::None => (RerankMethod::None, None),
        RerankChoice::Standard => (RerankMethod::Standard, None),
        RerankChoice::Msrerank => {
            let schedule = training_k_schedule(raw, registry, &cfg.scale_config()?, &cfg.rerank)?;
            (RerankMethod::MultiScale(schedule.clone()), Some(schedule))
        }
    })
}

fn write_report(rec: &mut Recorder, stem: &str, report: &MetricReport) -> anyhow::Result<()> {
    rec.write(&format!("{stem}.json"), report.to_json())?;
    rec.write(&format!("{stem}.csv"), report.to_csv())
}

pub fn eval(cfg: &PipelineConfig, choice: RerankChoice) -> anyhow::Result<()> {
    let (registry, raw) = load_generated(cfg)?;
    let embedded = load_embedded(cfg)?;
    let scales = cfg.scale_config()?;
    let metrics = cfg.metric_config()?;
    let (method, schedule) = rerank_method(cfg, choice, &registry, &raw)?;
    let mut rec = Recorder::new(&cfg.io.out_dir)?;
    let mut summary = serde_json::Map::new();
    summary.insert("rerank".into(), json!(choice.label()));
    summary.insert(
        "schedule".into(),
        json!(schedule.as_ref().map(KSchedule::as_slice)),
    );
    for direction in DIRECTIONS {
        let task = RetrievalTask::new(&embedded, &registry, &scales, direction)?;
        let base = task.evaluate(&RerankMethod::None, &cfg.rerank, &metrics)?;
        write_report(
            &mut rec,
            &format!("metrics_{}_none", direction.label()),
            &base,
        )?;
        let mut entry = json!({ "hap_none": base.hap, "map_overall_none": base.map_overall, "r1_overall_none": base.r1_overall() });
        if choice != RerankChoice::None {
            let re = task.evaluate(&method, &cfg.rerank, &metrics)?;
            write_report(
                &mut rec,
                &format!("metrics_{}_{}", direction.label(), choice.label()),
                &re,
            )?;
            entry["hap_rerank"] = json!(re.hap);
            entry["hap_delta"] = json!(re.hap - base.hap);
            entry["map_overall_rerank"] = json!(re.map_overall);
            entry["r1_overall_rerank"] = json!(re.r1_overall());
            println!(
                "{}: H-AP {:.4} -> {:.4} ({})",
                direction.label(),
                base.hap,
                re.hap,
                choice.label()
            );
        } else {
            println!(
                "{}: H-AP {:.4}, overall mAP {:.4}",
                direction.label(),
                base.hap,
                base.map_overall
            );
        }
        rec.stage(direction.label());
        summary.insert(direction.label().into(), entry);
    }
    rec.write(
        &format!("eval_summary_{}.json", choice.label()),
        serde_json::to_string_pretty(&summary)?,
    )?;
    finish(rec, &format!("eval_{}", choice.label()), cfg)
}

struct AblationRun {
    label: String,
    loss: LossConfig,
    trainer: TrainerConfig,
}

pub fn ablate(
    cfg: &PipelineConfig,
    sweep: Sweep,
    margin: f64,
    direction: Direction,
) -> anyhow::Result<()> {
    let (registry, raw) = load_generated(cfg)?;
    let scales = cfg.scale_config()?;
    let metrics = cfg.metric_config()?;
    let base_loss = cfg.loss_config()?;
    let base_trainer = cfg.trainer_config();
    let num_scales = scales.num_scales();
    let runs: Vec<AblationRun> = match sweep {
        Sweep::Tau => [16.0, 32.0, 64.0]
            .iter()
            .map(|&tau| AblationRun {
                label: format!("{tau}"),
                loss: LossConfig {
                    tau,
                    ..base_loss.clone()
                },
                trainer: base_trainer.clone(),
            })
            .collect(),
        Sweep::Lambda1 => [0.05, 0.1, 0.2, 0.5, 1.0]
            .iter()
            .map(|&lambda1| AblationRun {
                label: format!("{lambda1}"),
                loss: LossConfig {
                    lambda1,
                    lambda2: 0.1,
                    lambda3: 0.9,
                    ..base_loss.clone()
                },
                trainer: base_trainer.clone(),
            })
            .collect(),
        Sweep::SingleVsMulti => (0..num_scales)
            .map(|l| (format!("single_{}", scale_name(l, num_scales)), vec![l]))
            .chain(std::iter::once((
                "multi".to_string(),
                (0..num_scales).collect(),
            )))
            .map(|(label, scales)| AblationRun {
                label,
                loss: base_loss.clone(),
                trainer: TrainerConfig {
                    objective: Objective::Triplet { scales, margin },
                    ..base_trainer.clone()
                },
            })
            .collect(),
    };
    let sweep_name = match sweep {
        Sweep::Tau => "tau",
        Sweep::Lambda1 => "lambda1",
        Sweep::SingleVsMulti => "single_vs_multi",
    };
    let mut rec = Recorder::new(&cfg.io.out_dir)?;
    let mut csv = String::from("sweep,value,direction");
    for l in 0..num_scales {
        write!(csv, ",map_{}", scale_name(l, num_scales))?;
    }
    csv.push_str(",map_overall,hap\n");
    for run in &runs {
        let (_, embedded, _) = fit(cfg, &registry, &raw, &run.loss, &run.trainer)?;
        let task = RetrievalTask::new(&embedded, &registry, &scales, direction)?;
        let r = task.evaluate_similarity(&metrics)?;
        write!(csv, "{sweep_name},{},{}", run.label, direction.label())?;
        for s in &r.scales {
            write!(csv, ",{}", s.map)?;
        }
        writeln!(csv, ",{},{}", r.map_overall, r.hap)?;
        println!(
            "{sweep_name}={} {}: overall mAP {:.4}, H-AP {:.4}",
            run.label,
            direction.label(),
            r.map_overall,
            r.hap
        );
        rec.stage(&format!("{sweep_name}={}", run.label));
    }
    rec.write(&format!("ablate_{sweep_name}.csv"), csv)?;
    finish(rec, &format!("ablate_{sweep_name}"), cfg)
}

fn split_square(m: &DenseMatrix, queries: usize) -> anyhow::Result<ComposedDistances> {
    let n = m.rows();
    if queries == 0 || queries >= n {
        return Err(
            Error::Input(format!("--queries must lie in 1..{n} for a {n}x{n} matrix")).into(),
        );
    }
    let ng = n - queries;
    let mut q = Vec::with_capacity(queries * ng);
    for i in 0..queries {
        q.extend_from_slice(&m.row(i)[queries..]);
    }
    let mut g = Vec::with_capacity(ng * ng);
    for i in queries..n {
        g.extend_from_slice(&m.row(i)[queries..]);
    }
    Ok(ComposedDistances::from_parts(
        DenseMatrix::new(queries, ng, q)?,
        DenseMatrix::new(ng, ng, g)?,
    )?)
}

fn profile(composed: &ComposedDistances, after: &DenseMatrix) -> anyhow::Result<Vec<f64>> {
    let before_rows = composed.query_rows();
    let before: Vec<Vec<usize>> = (0..before_rows.rows())
        .map(|q| ranking_from_distances(before_rows.row(q)))
        .collect();
    let after: Vec<Vec<usize>> = (0..after.rows())
        .map(|q| ranking_from_distances(after.row(q)))
        .collect();
    Ok(rank_shift_profile(&before, &after)?)
}

pub fn rerank(
    cfg: &PipelineConfig,
    matrix: &Path,
    queries: usize,
    choice: RerankChoice,
) -> anyhow::Result<()> {
    if !matrix.is_file() {
        return Err(Error::Input(format!("missing distance matrix {}", matrix.display())).into());
    }
    let m = load_square_matrix(matrix)?;
    let composed = split_square(&m, queries)?;
    let method = match choice {
        RerankChoice::None => RerankMethod::None,
        RerankChoice::Standard => RerankMethod::Standard,
        RerankChoice::Msrerank => {
            let s = cfg.rerank.schedule.clone().ok_or_else(|| {
                Error::Config(
                    "msrerank on an external matrix needs an explicit rerank.schedule".into(),
                )
            })?;
            RerankMethod::MultiScale(KSchedule::new(s, cfg.rerank.k_floor)?)
        }
    };
    let mut rec = Recorder::new(&cfg.io.out_dir)?;
    let after = rerank_batch(&composed, &method, &cfg.rerank)?;
    rec.stage("rerank");
    rec.write(
        &format!("reranked_{}.csv", choice.label()),
        matrix_to_csv(&after),
    )?;
    rec.write(
        &format!("shift_profile_{}.csv", choice.label()),
        shift_profile_csv(&profile(&composed, &after)?),
    )?;
    println!(
        "re-ranked {queries} queries against {} gallery items",
        after.cols()
    );
    finish(rec, &format!("rerank_{}", choice.label()), cfg)
}

pub fn shift_profile(cfg: &PipelineConfig, choice: RerankChoice) -> anyhow::Result<()> {
    let (registry, raw) = load_generated(cfg)?;
    let embedded = load_embedded(cfg)?;
    let scales = cfg.scale_config()?;
    let (method, _) = rerank_method(cfg, choice, &registry, &raw)?;
    let mut rec = Recorder::new(&cfg.io.out_dir)?;
    for direction in DIRECTIONS {
        let task = RetrievalTask::new(&embedded, &registry, &scales, direction)?;
        let after = task.distances(&method, &cfg.rerank)?;
        let p = profile(task.composed(), &after)?;
        rec.write(
            &format!("shift_profile_{}_{}.csv", direction.label(), choice.label()),
            shift_profile_csv(&p),
        )?;
        let head: Vec<String> = p.iter().take(5).map(|v| format!("{v:.2}")).collect();
        println!(
            "{}: mean |shift| at positions 1..5 = [{}]",
            direction.label(),
            head.join(", ")
        );
        rec.stage(direction.label());
    }
    finish(rec, &format!("shift_profile_{}", choice.label()), cfg)
}
