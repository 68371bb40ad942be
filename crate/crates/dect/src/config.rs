//! Flat key-value run configuration (`section.key = value` lines), with
//! strict key checking, typed defaults, and a stable content hash.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augmentation::{AugmentConfig, Strategy};
use crate::corpus::SplitSpec;
use crate::encoding::{EmbeddingEncoder, EncodingError, Pooling};
use crate::gateway::providers::{HttpProvider, MockProvider, Provider};
use crate::gateway::{Gateway, GatewayError, RequestSettings, RetryPolicy};
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` expects {expected}, got `{got}`")]
    TypeError {
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("malformed config line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("unknown provider `{0}` (expected mock or http)")]
    UnknownProvider(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every experiment knob, flattened. Defaults follow the reference training
/// recipe: 50 epochs, batch 8, lr 1.5e-5, weight decay 0.05, warmup 0.01,
/// five seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub corpus_train_fraction: f64,
    pub corpus_val_fraction: f64,
    pub corpus_test_fraction: f64,
    pub corpus_split_seed: u64,
    pub corpus_stratified: bool,

    pub gateway_provider: String,
    pub gateway_model: String,
    pub gateway_base_url: String,
    pub gateway_temperature: f64,
    pub gateway_seed: u64,
    pub gateway_cache_dir: PathBuf,
    pub gateway_max_retries: u32,
    pub gateway_backoff_ms: u64,
    pub gateway_max_in_flight: usize,
    pub gateway_fewshot: usize,

    pub augment_strategy: String,
    pub augment_p_switch: f64,
    pub augment_k_min: usize,
    pub augment_k_max: usize,
    pub augment_multiplicity: usize,
    pub augment_seed: u64,

    pub encoder_backend: String,
    pub encoder_dim: usize,
    pub encoder_buckets: usize,
    pub encoder_max_tokens: usize,
    pub encoder_seed: u64,
    pub encoder_vectors_path: String,
    pub encoder_pooling: String,

    pub fusion_d_f: usize,
    pub fusion_seed: u64,

    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_lr: f64,
    pub train_weight_decay: f64,
    pub train_warmup_ratio: f64,
    pub train_seeds: Vec<u64>,
    pub train_grad_clip: f64,
    pub train_head_hidden: Vec<usize>,

    pub loss_w_cls: f64,
    pub loss_w_syn: f64,

    pub eval_out_dir: PathBuf,
    pub eval_tsne_perplexity: f64,
    pub eval_tsne_seed: u64,
    pub eval_tsne_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_path: PathBuf::new(),
            corpus_train_fraction: 0.8,
            corpus_val_fraction: 0.0,
            corpus_test_fraction: 0.2,
            corpus_split_seed: 42,
            corpus_stratified: true,

            gateway_provider: "mock".into(),
            gateway_model: "mock-1".into(),
            gateway_base_url: String::new(),
            gateway_temperature: 1.0,
            gateway_seed: 0,
            gateway_cache_dir: PathBuf::from(".dect-cache"),
            gateway_max_retries: 2,
            gateway_backoff_ms: 100,
            gateway_max_in_flight: 4,
            gateway_fewshot: 2,

            augment_strategy: "lslp".into(),
            augment_p_switch: 0.5,
            augment_k_min: 2,
            augment_k_max: 4,
            augment_multiplicity: 1,
            augment_seed: 42,

            encoder_backend: "tiny".into(),
            encoder_dim: 32,
            encoder_buckets: 4096,
            encoder_max_tokens: 256,
            encoder_seed: 7,
            encoder_vectors_path: String::new(),
            encoder_pooling: "mean".into(),

            fusion_d_f: 0,
            fusion_seed: 11,

            train_epochs: 50,
            train_batch_size: 8,
            train_lr: 1.5e-5,
            train_weight_decay: 0.05,
            train_warmup_ratio: 0.01,
            train_seeds: vec![1, 2, 3, 4, 5],
            train_grad_clip: 1.0,
            train_head_hidden: vec![64],

            loss_w_cls: 1.0,
            loss_w_syn: 1.0,

            eval_out_dir: PathBuf::from("runs"),
            eval_tsne_perplexity: 30.0,
            eval_tsne_seed: 0,
            eval_tsne_iterations: 500,
        }
    }
}

fn parse_typed<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.trim().parse::<T>().map_err(|_| ConfigError::TypeError {
        key: key.to_string(),
        expected,
        got: value.trim().to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|_| ConfigError::TypeError {
                key: key.to_string(),
                expected,
                got: value.trim().to_string(),
            })
        })
        .collect()
}

impl RunConfig {
    /// Parses a config file; keys absent from the file keep their defaults.
    pub fn parse_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut saw_corpus_path = false;
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: i + 1,
                detail: "expected `key = value`".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "corpus.path" {
                saw_corpus_path = true;
            }
            cfg.set(key, value)?;
        }
        if !saw_corpus_path {
            return Err(ConfigError::MissingKey("corpus.path".to_string()));
        }
        Ok(cfg)
    }

    /// Applies one `key = value` override (CLI flags take this path, so they
    /// participate in the config hash).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "corpus.path" => self.corpus_path = PathBuf::from(value),
            "corpus.train_fraction" => {
                self.corpus_train_fraction = parse_typed(key, value, "float")?
            }
            "corpus.val_fraction" => self.corpus_val_fraction = parse_typed(key, value, "float")?,
            "corpus.test_fraction" => self.corpus_test_fraction = parse_typed(key, value, "float")?,
            "corpus.split_seed" => self.corpus_split_seed = parse_typed(key, value, "integer")?,
            "corpus.stratified" => self.corpus_stratified = parse_typed(key, value, "bool")?,

            "gateway.provider" => self.gateway_provider = value.to_string(),
            "gateway.model" => self.gateway_model = value.to_string(),
            "gateway.base_url" => self.gateway_base_url = value.to_string(),
            "gateway.temperature" => self.gateway_temperature = parse_typed(key, value, "float")?,
            "gateway.seed" => self.gateway_seed = parse_typed(key, value, "integer")?,
            "gateway.cache_dir" => self.gateway_cache_dir = PathBuf::from(value),
            "gateway.max_retries" => self.gateway_max_retries = parse_typed(key, value, "integer")?,
            "gateway.backoff_ms" => self.gateway_backoff_ms = parse_typed(key, value, "integer")?,
            "gateway.max_in_flight" => {
                self.gateway_max_in_flight = parse_typed(key, value, "integer")?
            }
            "gateway.fewshot" => self.gateway_fewshot = parse_typed(key, value, "integer")?,

            "augment.strategy" => self.augment_strategy = value.to_string(),
            "augment.p_switch" => self.augment_p_switch = parse_typed(key, value, "float")?,
            "augment.k_min" => self.augment_k_min = parse_typed(key, value, "integer")?,
            "augment.k_max" => self.augment_k_max = parse_typed(key, value, "integer")?,
            "augment.multiplicity" => {
                self.augment_multiplicity = parse_typed(key, value, "integer")?
            }
            "augment.seed" => self.augment_seed = parse_typed(key, value, "integer")?,

            "encoder.backend" => self.encoder_backend = value.to_string(),
            "encoder.dim" => self.encoder_dim = parse_typed(key, value, "integer")?,
            "encoder.buckets" => self.encoder_buckets = parse_typed(key, value, "integer")?,
            "encoder.max_tokens" => self.encoder_max_tokens = parse_typed(key, value, "integer")?,
            "encoder.seed" => self.encoder_seed = parse_typed(key, value, "integer")?,
            "encoder.vectors_path" => self.encoder_vectors_path = value.to_string(),
            "encoder.pooling" => self.encoder_pooling = value.to_string(),

            "fusion.d_f" => self.fusion_d_f = parse_typed(key, value, "integer")?,
            "fusion.seed" => self.fusion_seed = parse_typed(key, value, "integer")?,

            "train.epochs" => self.train_epochs = parse_typed(key, value, "integer")?,
            "train.batch_size" => self.train_batch_size = parse_typed(key, value, "integer")?,
            "train.lr" => self.train_lr = parse_typed(key, value, "float")?,
            "train.weight_decay" => self.train_weight_decay = parse_typed(key, value, "float")?,
            "train.warmup_ratio" => self.train_warmup_ratio = parse_typed(key, value, "float")?,
            "train.seeds" => self.train_seeds = parse_list(key, value, "integer list")?,
            "train.grad_clip" => self.train_grad_clip = parse_typed(key, value, "float")?,
            "train.head_hidden" => self.train_head_hidden = parse_list(key, value, "integer list")?,

            "loss.w_cls" => self.loss_w_cls = parse_typed(key, value, "float")?,
            "loss.w_syn" => self.loss_w_syn = parse_typed(key, value, "float")?,

            "eval.out_dir" => self.eval_out_dir = PathBuf::from(value),
            "eval.tsne_perplexity" => {
                self.eval_tsne_perplexity = parse_typed(key, value, "float")?
            }
            "eval.tsne_seed" => self.eval_tsne_seed = parse_typed(key, value, "integer")?,
            "eval.tsne_iterations" => {
                self.eval_tsne_iterations = parse_typed(key, value, "integer")?
            }

            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Canonical sorted `key = value` rendering of the effective config.
    pub fn canonical(&self) -> String {
        let seeds = self
            .train_seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let hidden = self
            .train_head_hidden
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut lines = vec![
            format!("augment.k_max = {}", self.augment_k_max),
            format!("augment.k_min = {}", self.augment_k_min),
            format!("augment.multiplicity = {}", self.augment_multiplicity),
            format!("augment.p_switch = {}", self.augment_p_switch),
            format!("augment.seed = {}", self.augment_seed),
            format!("augment.strategy = {}", self.augment_strategy),
            format!("corpus.path = {}", self.corpus_path.display()),
            format!("corpus.split_seed = {}", self.corpus_split_seed),
            format!("corpus.stratified = {}", self.corpus_stratified),
            format!("corpus.test_fraction = {}", self.corpus_test_fraction),
            format!("corpus.train_fraction = {}", self.corpus_train_fraction),
            format!("corpus.val_fraction = {}", self.corpus_val_fraction),
            format!("encoder.backend = {}", self.encoder_backend),
            format!("encoder.buckets = {}", self.encoder_buckets),
            format!("encoder.dim = {}", self.encoder_dim),
            format!("encoder.max_tokens = {}", self.encoder_max_tokens),
            format!("encoder.pooling = {}", self.encoder_pooling),
            format!("encoder.seed = {}", self.encoder_seed),
            format!("encoder.vectors_path = {}", self.encoder_vectors_path),
            format!("eval.out_dir = {}", self.eval_out_dir.display()),
            format!("eval.tsne_iterations = {}", self.eval_tsne_iterations),
            format!("eval.tsne_perplexity = {}", self.eval_tsne_perplexity),
            format!("eval.tsne_seed = {}", self.eval_tsne_seed),
            format!("fusion.d_f = {}", self.fusion_d_f),
            format!("fusion.seed = {}", self.fusion_seed),
            format!("gateway.backoff_ms = {}", self.gateway_backoff_ms),
            format!("gateway.base_url = {}", self.gateway_base_url),
            format!("gateway.cache_dir = {}", self.gateway_cache_dir.display()),
            format!("gateway.fewshot = {}", self.gateway_fewshot),
            format!("gateway.max_in_flight = {}", self.gateway_max_in_flight),
            format!("gateway.max_retries = {}", self.gateway_max_retries),
            format!("gateway.model = {}", self.gateway_model),
            format!("gateway.provider = {}", self.gateway_provider),
            format!("gateway.seed = {}", self.gateway_seed),
            format!("gateway.temperature = {}", self.gateway_temperature),
            format!("loss.w_cls = {}", self.loss_w_cls),
            format!("loss.w_syn = {}", self.loss_w_syn),
            format!("train.batch_size = {}", self.train_batch_size),
            format!("train.epochs = {}", self.train_epochs),
            format!("train.grad_clip = {}", self.train_grad_clip),
            format!("train.head_hidden = {hidden}"),
            format!("train.lr = {}", self.train_lr),
            format!("train.seeds = {seeds}"),
            format!("train.warmup_ratio = {}", self.train_warmup_ratio),
            format!("train.weight_decay = {}", self.train_weight_decay),
        ];
        lines.sort();
        lines.join("\n")
    }

    /// SHA-256 over the canonical rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.corpus_train_fraction,
            val_fraction: self.corpus_val_fraction,
            test_fraction: self.corpus_test_fraction,
            seed: self.corpus_split_seed,
            stratified: self.corpus_stratified,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            base_lr: self.train_lr,
            weight_decay: self.train_weight_decay,
            warmup_ratio: self.train_warmup_ratio,
            seeds: self.train_seeds.clone(),
            grad_clip: self.train_grad_clip,
            w_cls: self.loss_w_cls,
            w_syn: self.loss_w_syn,
            head_hidden: self.train_head_hidden.clone(),
        }
    }

    pub fn request_settings(&self) -> RequestSettings {
        RequestSettings {
            model_name: self.gateway_model.clone(),
            temperature: self.gateway_temperature,
            seed: self.gateway_seed,
        }
    }

    pub fn augment_config(&self, strategy: Strategy) -> AugmentConfig {
        AugmentConfig {
            strategy,
            p_switch: self.augment_p_switch,
            k_range: (self.augment_k_min, self.augment_k_max),
            multiplicity: self.augment_multiplicity,
            master_seed: self.augment_seed,
            settings: self.request_settings(),
        }
    }

    /// Builds the configured encoder; `seed` perturbs only the tiny backend's
    /// random table (the pretrained table is whatever the file holds).
    pub fn build_encoder(&self, seed: u64) -> Result<EmbeddingEncoder, ConfigError> {
        match self.encoder_backend.as_str() {
            "tiny" => Ok(EmbeddingEncoder::tiny(
                self.encoder_dim,
                self.encoder_buckets,
                self.encoder_max_tokens,
                seed,
            )),
            "pretrained" => {
                if self.encoder_vectors_path.is_empty() {
                    return Err(ConfigError::MissingKey("encoder.vectors_path".to_string()));
                }
                Ok(EmbeddingEncoder::from_embedding_file(
                    &self.encoder_vectors_path,
                    self.encoder_max_tokens,
                )?)
            }
            other => Err(ConfigError::TypeError {
                key: "encoder.backend".to_string(),
                expected: "tiny or pretrained",
                got: other.to_string(),
            }),
        }
    }

    pub fn pooling(&self) -> Result<Pooling, ConfigError> {
        match self.encoder_pooling.as_str() {
            "mean" => Ok(Pooling::Mean),
            "first_token" => Ok(Pooling::FirstToken),
            other => Err(ConfigError::TypeError {
                key: "encoder.pooling".to_string(),
                expected: "mean or first_token",
                got: other.to_string(),
            }),
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let provider: Box<dyn Provider> = match self.gateway_provider.as_str() {
            "mock" => Box::new(MockProvider),
            "http" => Box::new(HttpProvider::new("http", self.gateway_base_url.clone())),
            other => return Err(ConfigError::UnknownProvider(other.to_string())),
        };
        Ok(Gateway::new(provider, &self.gateway_cache_dir)?
            .with_retry(RetryPolicy {
                max_retries: self.gateway_max_retries,
                backoff_ms: self.gateway_backoff_ms,
            })
            .with_in_flight_limit(self.gateway_max_in_flight))
    }

    /// Providers label for experiment rows.
    pub fn llm_label(&self) -> String {
        format!("{}/{}", self.gateway_provider, self.gateway_model)
    }

    fn corpus_sibling(&self, suffix: &str) -> PathBuf {
        let stem = self
            .corpus_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "corpus".to_string());
        let parent = self
            .corpus_path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_default();
        parent.join(format!("{stem}{suffix}"))
    }

    /// Extraction artifacts live beside the corpus file.
    pub fn artifacts_dir(&self) -> PathBuf {
        self.corpus_sibling(".artifacts")
    }

    /// Synthetic corpus file for one strategy, beside the corpus file.
    pub fn synthetic_path(&self, strategy: Strategy) -> PathBuf {
        self.corpus_sibling(&format!(".synthetic-{strategy}.jsonl"))
    }
}
