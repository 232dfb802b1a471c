//! Pipeline configuration file (TOML).
//!
//! The top-level `seed` drives every stochastic stage: the generator uses it
//! directly and the trainer uses `seed + 1`, so seeds inside `[synth]` and
//! `[trainer]` are overwritten when a pipeline config is resolved. A `[dycl]`
//! section, when present, overrides `tau` and `margins` of `[loss]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::ScaleConfig;
use crate::losses::{LossConfig, MarginSchedule};
use crate::metrics::MetricConfig;
use crate::rerank::RerankConfig;
use crate::synth::SynthConfig;
use crate::train::TrainerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoSection {
    pub thresholds: Vec<f64>,
}

impl Default for GeoSection {
    fn default() -> Self {
        Self {
            thresholds: ScaleConfig::default().thresholds().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DyclSection {
    pub tau: Option<f64>,
    pub margins: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Per-level gains; defaults to linear gains for the configured scales.
    pub gains: Option<Vec<f64>>,
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            gains: None,
            ks: vec![1, 5, 10],
        }
    }
}

/// Artifact file names, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub out_dir: PathBuf,
    pub registry: String,
    pub raw_features: String,
    pub encoder: String,
    pub embeddings: String,
    pub train_log: String,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("hiergeo_out"),
            registry: "registry.jsonl".into(),
            raw_features: "raw_features.bin".into(),
            encoder: "encoder.json".into(),
            embeddings: "embeddings.bin".into(),
            train_log: "train_log.csv".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub geo: GeoSection,
    pub synth: SynthConfig,
    pub trainer: TrainerConfig,
    pub dycl: Option<DyclSection>,
    pub loss: LossConfig,
    pub rerank: RerankConfig,
    pub eval: EvalSection,
    pub io: IoSection,
}

impl PipelineConfig {
    /// Parses and validates a config document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let scales = self.scale_config()?;
        let loss = self.loss_config()?;
        if loss.margins.len() != scales.num_scales() {
            return Err(Error::Config(format!(
                "{} margins for {} scales",
                loss.margins.len(),
                scales.num_scales()
            )));
        }
        self.synth.validate()?;
        self.trainer.validate()?;
        self.rerank.validate()?;
        if let Some(s) = &self.rerank.schedule {
            if s.len() != scales.num_scales() {
                return Err(Error::Config(format!(
                    "rerank schedule has {} entries for {} scales",
                    s.len(),
                    scales.num_scales()
                )));
            }
        }
        let metrics = self.metric_config()?;
        if metrics.num_scales() != scales.num_scales() {
            return Err(Error::Config(format!(
                "{} gains for {} scales",
                metrics.gains.len(),
                scales.num_scales()
            )));
        }
        if self.trainer.batch_buildings > self.synth.n_buildings_train {
            return Err(Error::Config(
                "batch_buildings exceeds the number of train buildings".into(),
            ));
        }
        Ok(())
    }

    pub fn scale_config(&self) -> Result<ScaleConfig> {
        ScaleConfig::new(self.geo.thresholds.clone())
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let mut loss = self.loss.clone();
        if let Some(d) = &self.dycl {
            if let Some(t) = d.tau {
                loss.tau = t;
            }
            if let Some(m) = &d.margins {
                loss.margins = MarginSchedule::new(m.clone())?;
            }
        }
        loss.validate()?;
        Ok(loss)
    }

    pub fn metric_config(&self) -> Result<MetricConfig> {
        let l = self.geo.thresholds.len();
        let mut cfg = MetricConfig::for_scales(l);
        if let Some(g) = &self.eval.gains {
            cfg.gains = g.clone();
        }
        cfg.ks = self.eval.ks.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            seed: self.seed.wrapping_add(1),
            ..self.trainer.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}
