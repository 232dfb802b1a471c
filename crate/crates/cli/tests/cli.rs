use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hiergeo_core::embedding::{
    save_embeddings, save_square_matrix, DenseMatrix, EmbeddingRecord, EmbeddingSet, View,
};
use hiergeo_core::geo::{save_registry, BuildingRecord, CampusRegistry, Coord, CoordSystem, Split};
use hiergeo_core::rerank::{k_reciprocal_rerank, AugmentedDistanceMatrix, RerankConfig};

fn hiergeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiergeo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "seed = 3\n[synth]\nn_buildings_train = 20\nn_buildings_test = 12\ndrone_images_per_building = 3\n\
         raw_dim = 32\narea_side = 1200.0\n[trainer]\nembed_dim = 16\nbatch_buildings = 8\nepochs = 2\n\
         steps_per_epoch = 4\n[rerank]\nk = 5\nk_floor = 5\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_default_writes_registry_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hiergeo(&["--out", out, "gen"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let registry = fs::read_to_string(dir.path().join("registry.jsonl")).unwrap();
    assert_eq!(registry.lines().count(), 100);
    assert_eq!(
        registry.lines().filter(|l| l.contains("\"train\"")).count(),
        60
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest_gen.json")).unwrap())
            .unwrap();
    let names: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["registry.jsonl", "raw_features.bin"]);
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for cmd in [
        vec!["train"],
        vec!["eval"],
        vec!["ablate", "--sweep", "tau"],
        vec!["shift-profile"],
    ] {
        let mut args = vec!["--out", out];
        args.extend(cmd.iter());
        assert_eq!(hiergeo(&args).status.code(), Some(2), "{cmd:?}");
    }
    assert_eq!(
        hiergeo(&[
            "--out",
            out,
            "rerank",
            "--matrix",
            "/nonexistent.csv",
            "--queries",
            "1"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        hiergeo(&["--config", "/nonexistent.toml", "gen"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn invalid_config_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[geo]\nthresholds = [0.0, 500.0, 200.0]\n").unwrap();
    let o = hiergeo(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "gen",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("manifest_gen.json").exists());
}

#[test]
fn unknown_sweep_is_a_usage_error() {
    assert_eq!(
        hiergeo(&["ablate", "--sweep", "nope"]).status.code(),
        Some(2)
    );
}

#[test]
fn unwritable_output_fails_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = hiergeo(&["--out", out.to_str().unwrap(), "gen"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!out.join("manifest_gen.json").exists());
}

#[test]
fn small_pipeline_runs_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    for cmd in [
        vec!["gen"],
        vec!["train"],
        vec!["eval", "--rerank", "msrerank"],
        vec!["ablate", "--sweep", "single_vs_multi"],
        vec!["ablate", "--sweep", "tau"],
        vec!["shift-profile", "--rerank", "standard"],
    ] {
        let mut args = vec!["--config", cfg.as_str(), "--out", out];
        args.extend(cmd.iter());
        let o = hiergeo(&args);
        assert!(
            o.status.success(),
            "{cmd:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let run = Path::new(out);
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let sweep = fs::read_to_string(run.join("ablate_single_vs_multi.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 4);
    assert!(
        sweep.starts_with("sweep,value,direction,map_small,map_middle,map_large,map_overall,hap")
    );
    assert_eq!(
        fs::read_to_string(run.join("ablate_tau.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 3
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("eval_summary_msrerank.json")).unwrap())
            .unwrap();
    assert!(summary["satellite_to_drone"]["hap_delta"].is_number());
    assert!(run.join("metrics_drone_to_satellite_msrerank.csv").exists());
}

fn perfect_fixture(dir: &Path) {
    let buildings = (1..=4u64)
        .map(|b| BuildingRecord {
            building_id: b,
            name: None,
            coord: Coord::Planar {
                x: 1000.0 * b as f64,
                y: 0.0,
            },
            split: if b <= 2 { Split::Train } else { Split::Test },
        })
        .collect();
    save_registry(
        &CampusRegistry::new(CoordSystem::Planar, buildings).unwrap(),
        &dir.join("registry.jsonl"),
    )
    .unwrap();
    let mut records = Vec::new();
    for b in 1..=4u64 {
        for (i, view) in [View::Drone, View::Satellite].into_iter().enumerate() {
            let mut v = vec![0.0f32; 4];
            v[b as usize - 1] = 1.0;
            records.push(EmbeddingRecord {
                image_id: b * 10 + i as u64,
                building_id: b,
                view,
                normalized: true,
                vector: v,
            });
        }
    }
    let set = EmbeddingSet::new(4, records).unwrap();
    save_embeddings(&set, &dir.join("raw_features.bin")).unwrap();
    save_embeddings(&set, &dir.join("embeddings.bin")).unwrap();
}

#[test]
fn perfect_retrieval_scores_one_at_scale_zero() {
    let dir = tempfile::tempdir().unwrap();
    perfect_fixture(dir.path());
    let o = hiergeo(&["--out", dir.path().to_str().unwrap(), "eval"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for direction in ["satellite_to_drone", "drone_to_satellite"] {
        let m: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(format!("metrics_{direction}_none.json"))).unwrap(),
        )
        .unwrap();
        for key in ["map_small", "r1_small", "r5_small", "hap", "ndcg"] {
            assert_eq!(m[key].as_f64(), Some(1.0), "{direction} {key}");
        }
    }
}

#[test]
fn rerank_command_matches_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let n = 9;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| ((i * 7 % 5) as f64, (i * 3 % 4) as f64 * 0.7))
        .collect();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(
                i,
                j,
                ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt(),
            );
        }
    }
    let matrix = dir.path().join("d.bin");
    save_square_matrix(&m, &matrix).unwrap();
    let cfg = dir.path().join("k.toml");
    fs::write(&cfg, "[rerank]\nk = 3\nk_floor = 3\nk_expand = 2\n").unwrap();
    let out = dir.path().join("out");
    let o = hiergeo(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "rerank",
        "--matrix",
        matrix.to_str().unwrap(),
        "--queries",
        "1",
        "--method",
        "standard",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rc = RerankConfig {
        k: 3,
        k_floor: 3,
        k_expand: Some(2),
        ..RerankConfig::default()
    };
    let direct = k_reciprocal_rerank(&AugmentedDistanceMatrix::new(m).unwrap(), &rc).unwrap();
    let csv = fs::read_to_string(out.join("reranked_standard.csv")).unwrap();
    let from_cli: Vec<f64> = csv
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(from_cli, direct);
    assert!(out.join("shift_profile_standard.csv").exists());

    let o = hiergeo(&[
        "--out",
        out.to_str().unwrap(),
        "rerank",
        "--matrix",
        matrix.to_str().unwrap(),
        "--queries",
        "1",
        "--method",
        "msrerank",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn zero_learning_rate_training_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = small_config(dir.path());
    let text = fs::read_to_string(&cfg_path)
        .unwrap()
        .replace("[trainer]\n", "[trainer]\nlearning_rate = 0.0\n");
    fs::write(&cfg_path, text).unwrap();
    let out = dir.path().join("run");
    for cmd in ["gen", "train"] {
        let o = hiergeo(&["--config", &cfg_path, "--out", out.to_str().unwrap(), cmd]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}
