use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drqr::qpp::PredictorKind;
use drqr::ranking::{RankingModel, BO1_DEFAULT_DOCS, BO1_DEFAULT_TERMS};
use drqr::rl::{RewardConfig, RlConfig};
use drqr::seq2seq::MlConfig;
use drqr::text::PipelineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub lowercase: bool,
    pub stem: bool,
    pub remove_stopwords: bool,
    /// Replaces the bundled list when set.
    pub stopword_file: Option<PathBuf>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            lowercase: true,
            stem: true,
            remove_stopwords: true,
            stopword_file: None,
        }
    }
}

impl PipelineSettings {
    pub fn build(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        cfg.lowercase = self.lowercase;
        cfg.stem = self.stem;
        if let Some(path) = &self.stopword_file {
            cfg = cfg.with_stopword_file(path)?;
        }
        if !self.remove_stopwords {
            cfg = PipelineConfig::new(cfg.lowercase, Default::default(), cfg.stem);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: usize,
    /// Defaults to `hidden`.
    pub emb_dim: Option<usize>,
    pub min_frequency: usize,
    pub max_decode_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            hidden: 32,
            emb_dim: None,
            min_frequency: 1,
            max_decode_len: drqr::seq2seq::DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub model: String,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub depth: usize,
    pub fb_docs: usize,
    pub fb_terms: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            model: "dph".into(),
            bm25_k1: 1.2,
            bm25_b: 0.75,
            depth: 1000,
            fb_docs: BO1_DEFAULT_DOCS,
            fb_terms: BO1_DEFAULT_TERMS,
        }
    }
}

impl RetrievalSettings {
    pub fn ranking_model(&self, name: &str) -> Result<RankingModel> {
        match name.to_ascii_lowercase().as_str() {
            "dph" => Ok(RankingModel::Dph),
            "bm25" => Ok(RankingModel::Bm25 {
                k1: self.bm25_k1,
                b: self.bm25_b,
            }),
            other => bail!("unknown ranking model `{other}` (expected dph or bm25)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pipeline: PipelineSettings,
    pub model: ModelSettings,
    pub ml: MlConfig,
    pub rl: RlConfig,
    pub lambda: f64,
    pub theta: f64,
    pub predictor: PredictorKind,
    pub retrieval: RetrievalSettings,
    pub valid_fraction: f64,
    pub lambda_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    pub sweep_queries: usize,
    pub permutations: usize,
}

fn unit_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            pipeline: PipelineSettings::default(),
            model: ModelSettings::default(),
            ml: MlConfig::default(),
            rl: RlConfig::default(),
            lambda: RewardConfig::DEFAULT_LAMBDA,
            theta: 1.0,
            predictor: PredictorKind::AvgScq,
            retrieval: RetrievalSettings::default(),
            valid_fraction: 0.1,
            lambda_grid: unit_grid(),
            theta_grid: unit_grid(),
            sweep_queries: 200,
            permutations: drqr::eval::DEFAULT_PERMUTATIONS,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
            cfg.ml.seed = s;
            cfg.rl.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.lambda) {
            bail!("lambda must be in [0, 1], got {}", self.lambda);
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            bail!("theta must be >= 0, got {}", self.theta);
        }
        if let Some(x) = self.lambda_grid.iter().find(|x| !unit(**x)) {
            bail!("lambda grid value {x} outside [0, 1]");
        }
        if let Some(x) = self
            .theta_grid
            .iter()
            .find(|x| !(x.is_finite() && **x >= 0.0))
        {
            bail!("theta grid value {x} is negative");
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            bail!("valid_fraction must be in (0, 1)");
        }
        if self.model.hidden == 0 || self.model.emb_dim == Some(0) {
            bail!("model dimensions must be positive");
        }
        self.ml.validate()?;
        self.retrieval.ranking_model(&self.retrieval.model)?;
        Ok(())
    }
}
