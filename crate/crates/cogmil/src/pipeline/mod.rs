//! Config-driven experiment pipeline.
//!
//! Eight stages share one JSON config and write manifest-sealed artifacts
//! under its output directory:
//!
//! ```text
//! extract-elb -> infer -> build-bags -> embed -> train -> evaluate -> report
//!                              \
//!                               -> stats
//! ```
//!
//! Inference always produces two corpora (instances mined with and without
//! the emotion/logic/behavior components) so the four input conditions
//! {Baseline, ELB, Salience, ELB + Salience} can all be trained from one set
//! of LLM calls. Each of the R runs re-splits the dataset with its own seed;
//! LLM outputs are shared across runs, only splits and model training vary.
//! Every stage is idempotent: re-running with unchanged inputs rewrites
//! byte-identical outputs.

mod manifest;
mod stages;

pub use manifest::{
    bytes_digest, expect_input, file_digest, manifest_path, seal, write_sealed, Manifest,
};
pub use stages::{BagsReport, ConditionSummary, PerClassRow};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bag::BagError;
use crate::embed::{EmbedError, DEFAULT_DIMENSION};
use crate::gateway::{DecodingParams, ProviderConfig};
use crate::metrics::MetricsError;
use crate::model::{ModelError, TrainConfig};
use crate::prompt::{PromptError, PromptTemplates};
use crate::schema::{DatasetId, LabelSchema, SchemaError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("stage {stage}: upstream artifact {path} unusable ({why}); run `{produced_by}` first")]
    MissingUpstream {
        stage: &'static str,
        path: PathBuf,
        why: String,
        produced_by: &'static str,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Bag(#[from] BagError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// CLI exit code: 0 is reserved for success, config problems are user
    /// errors (1), everything else is a pipeline failure (2).
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::ConfigInvalid(_) => 1,
            _ => 2,
        }
    }
}

/// One cell of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Baseline,
    Elb,
    Salience,
    ElbSalience,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Baseline,
        Condition::Elb,
        Condition::Salience,
        Condition::ElbSalience,
    ];

    pub fn from_flags(with_elb: bool, use_salience: bool) -> Self {
        match (with_elb, use_salience) {
            (false, false) => Condition::Baseline,
            (true, false) => Condition::Elb,
            (false, true) => Condition::Salience,
            (true, true) => Condition::ElbSalience,
        }
    }

    pub fn with_elb(self) -> bool {
        matches!(self, Condition::Elb | Condition::ElbSalience)
    }

    pub fn use_salience(self) -> bool {
        matches!(self, Condition::Salience | Condition::ElbSalience)
    }

    pub fn slug(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Elb => "elb",
            Condition::Salience => "salience",
            Condition::ElbSalience => "elb_salience",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Condition::Baseline => "Baseline",
            Condition::Elb => "ELB",
            Condition::Salience => "Salience",
            Condition::ElbSalience => "ELB + Salience",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Utterance JSONL file.
    pub path: String,
    /// Dataset id ("koacd" or "therapist_qa"); selects the builtin label
    /// schema and the inference prompt.
    pub schema: String,
    /// Optional label-schema JSON overriding the builtin for that id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackendKind {
    /// Deterministic offline hash embeddings.
    TestHash,
    /// POST {"texts": [...]} to an embedding service.
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            backend: EmbeddingBackendKind::TestHash,
            base_url: None,
            dimension: DEFAULT_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn as_tuple(self) -> (f64, f64, f64) {
        (self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Attention hidden width.
    #[serde(default = "default_d_h")]
    pub d_h: usize,
    /// Number of attention views.
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_d_h() -> usize {
    128
}

fn default_k() -> usize {
    4
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_h: default_d_h(), k: default_k() }
    }
}

fn default_runs() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Providers queried during inference, in bag-concatenation order.
    pub providers: Vec<ProviderConfig>,
    /// Provider id used for component extraction.
    pub elb_provider: String,
    /// Condition flags used when `ablation_matrix` is off.
    #[serde(default)]
    pub with_elb: bool,
    #[serde(default)]
    pub use_salience: bool,
    /// Train/evaluate all four conditions (default) instead of just the one
    /// named by `with_elb`/`use_salience`.
    #[serde(default = "default_true")]
    pub ablation_matrix: bool,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub decoding: DecodingParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Repeated runs per condition.
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// One seed per run, driving that run's split, init, and shuffling.
    /// Defaults to 1..=runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub split: SplitRatios,
    pub output_dir: String,
    /// LLM response cache; defaults to `<output_dir>/llm_cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
    /// Load prompt templates from this directory instead of the builtins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::ConfigInvalid(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            PipelineError::ConfigInvalid(format!("cannot parse {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::ConfigInvalid(msg));
        if self.output_dir.is_empty() {
            return bad("output_dir is empty".into());
        }
        DatasetId::parse(&self.dataset.schema)
            .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        if self.providers.is_empty() {
            return bad("providers list is empty".into());
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.providers {
            if !seen.insert(&p.id) {
                return bad(format!("duplicate provider id {:?}", p.id));
            }
        }
        if !self.providers.iter().any(|p| p.id == self.elb_provider) {
            return bad(format!(
                "elb_provider {:?} is not in the providers list",
                self.elb_provider
            ));
        }
        if self.runs < 2 {
            return bad(format!("runs must be >= 2 for mean/std reporting, got {}", self.runs));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.runs {
                return bad(format!(
                    "seeds has {} entries but runs = {}",
                    seeds.len(),
                    self.runs
                ));
            }
        }
        let (tr, va, te) = self.split.as_tuple();
        if tr <= 0.0 || va < 0.0 || te < 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios ({tr}, {va}, {te}) must be >= 0 and sum to 1"));
        }
        if self.embedding.backend == EmbeddingBackendKind::Http
            && self.embedding.base_url.is_none()
        {
            return bad("embedding.backend = http requires embedding.base_url".into());
        }
        if self.embedding.dimension == 0 {
            return bad("embedding.dimension must be positive".into());
        }
        if self.model.d_h == 0 || self.model.k == 0 {
            return bad("model.d_h and model.k must be positive".into());
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if self.train.max_epochs == 0 {
            return bad("train.max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.train.dropout) {
            return bad(format!("train.dropout {} must be in [0, 1)", self.train.dropout));
        }
        Ok(())
    }

    pub fn dataset_id(&self) -> DatasetId {
        DatasetId::parse(&self.dataset.schema).expect("validated")
    }

    pub fn label_schema(&self) -> Result<LabelSchema, PipelineError> {
        match &self.dataset.schema_file {
            Some(path) => Ok(LabelSchema::from_file(Path::new(path), self.dataset_id())?),
            None => Ok(LabelSchema::for_dataset(self.dataset_id())),
        }
    }

    pub fn templates(&self) -> Result<PromptTemplates, PipelineError> {
        match &self.prompt_dir {
            Some(dir) => PromptTemplates::from_dir(Path::new(dir)).map_err(|e| {
                PipelineError::ConfigInvalid(format!("cannot load prompts from {dir}: {e}"))
            }),
            None => Ok(PromptTemplates::builtin()),
        }
    }

    pub fn provider(&self, id: &str) -> Result<&ProviderConfig, PipelineError> {
        self.providers.iter().find(|p| p.id == id).ok_or_else(|| {
            PipelineError::ConfigInvalid(format!("provider {id:?} not in providers list"))
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(seeds) => seeds.clone(),
            None => (1..=self.runs as u64).collect(),
        }
    }

    /// Conditions covered by train/evaluate/report.
    pub fn conditions(&self) -> Vec<Condition> {
        if self.ablation_matrix {
            Condition::ALL.to_vec()
        } else {
            vec![Condition::from_flags(self.with_elb, self.use_salience)]
        }
    }

    /// Digest of the canonical (parsed, re-serialized) config.
    pub fn digest(&self) -> String {
        bytes_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn out(&self) -> &Path {
        Path::new(&self.output_dir)
    }

    pub fn cache_path(&self) -> PathBuf {
        match &self.cache_dir {
            Some(dir) => PathBuf::from(dir),
            None => self.out().join("llm_cache"),
        }
    }

    fn corpus_tag(with_elb: bool) -> &'static str {
        if with_elb {
            "with_elb"
        } else {
            "without_elb"
        }
    }

    pub fn elb_path(&self) -> PathBuf {
        self.out().join("elb.jsonl")
    }

    pub fn instances_path(&self, with_elb: bool) -> PathBuf {
        self.out().join(format!("instances_{}.jsonl", Self::corpus_tag(with_elb)))
    }

    pub fn bags_path(&self, with_elb: bool) -> PathBuf {
        self.out().join(format!("bags_{}.jsonl", Self::corpus_tag(with_elb)))
    }

    pub fn bags_report_path(&self) -> PathBuf {
        self.out().join("bags_report.json")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.out().join("embeddings.cgeb")
    }

    pub fn embeddings_texts_path(&self) -> PathBuf {
        self.out().join("embeddings_texts.jsonl")
    }

    pub fn condition_dir(&self, condition: Condition) -> PathBuf {
        self.out().join("conditions").join(condition.slug())
    }

    /// Run directories are 1-based to match the default seed list.
    pub fn run_dir(&self, condition: Condition, run: usize) -> PathBuf {
        self.condition_dir(condition).join(format!("run-{run}"))
    }

    pub fn summary_path(&self, condition: Condition) -> PathBuf {
        self.condition_dir(condition).join("summary.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out().join("report")
    }

    pub fn stats_dir(&self) -> PathBuf {
        self.out().join("stats")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ExtractElb,
    Infer,
    BuildBags,
    Embed,
    Train,
    Evaluate,
    Report,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::ExtractElb,
        Stage::Infer,
        Stage::BuildBags,
        Stage::Embed,
        Stage::Train,
        Stage::Evaluate,
        Stage::Report,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::ExtractElb => "extract-elb",
            Stage::Infer => "infer",
            Stage::BuildBags => "build-bags",
            Stage::Embed => "embed",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::Stats => "stats",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

pub fn run_stage(stage: Stage, cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(cfg.out())?;
    log::info!("stage {} starting", stage.name());
    match stage {
        Stage::ExtractElb => stages::extract_elb(cfg),
        Stage::Infer => stages::infer(cfg),
        Stage::BuildBags => stages::build_bags(cfg),
        Stage::Embed => stages::embed(cfg),
        Stage::Train => stages::train(cfg),
        Stage::Evaluate => stages::evaluate(cfg),
        Stage::Report => stages::report(cfg),
        Stage::Stats => stages::stats(cfg),
    }?;
    log::info!("stage {} done", stage.name());
    Ok(())
}

pub fn run_all(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    for stage in Stage::ALL {
        run_stage(stage, cfg)?;
    }
    Ok(())
}
