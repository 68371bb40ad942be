//! End-to-end orchestration shared by the CLI and the experiment harnesses:
//! ingest → extract → augment → train → evaluate → grids → projection.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::augmentation::{
    augment_corpus, load_synthetic_corpus, write_synthetic_corpus, AugmentationError, FeaturePool,
    Strategy, SyntheticTranscript,
};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    default_speaker_markers, load_corpus, parse_transcript, split_corpus, write_corpus, Corpus,
    CorpusError, CorpusFormat, Label, Transcript,
};
use crate::encoding::Pooling;
use crate::evaluation::{
    ablation_grid, aggregate_seeds, evaluate, strategy_grid, train_full, AblationRow,
    AggregateReport, EvaluationError, GridContext, MetricsReport, ProviderSynthetics, StrategyRow,
};
use crate::extraction::{extract_corpus, ArtifactStore, ExtractStats, ExtractionError};
use crate::gateway::GatewayError;
use crate::planted::planted_corpus;
use crate::projection::{
    project_embeddings, read_embeddings_jsonl, write_embeddings_jsonl, write_projection_csv,
    EmbeddingRecord, PointMeta, Projection2D, ProjectionError, ProjectionMethod, ProjectionOptions,
};
use crate::training::{fit, InputMode, TrainedModel, TrainingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Augmentation(#[from] AugmentationError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loads the corpus named by the config and splits it per the split spec.
pub fn load_and_split(cfg: &RunConfig) -> Result<(Corpus, Corpus, Corpus, Corpus), PipelineError> {
    let corpus = load_corpus(&cfg.corpus_path, CorpusFormat::Jsonl)?;
    let (train, val, test) = split_corpus(&corpus, &cfg.split_spec())?;
    Ok((corpus, train, val, test))
}

/// Resolves an ingest input: `planted:N[:SEED]` for the shipped synthetic
/// builder, a directory of `<id>.<label>.txt` raw transcripts, or an existing
/// JSONL corpus to validate and normalize.
pub fn resolve_ingest_input(input: &str, default_seed: u64) -> Result<Corpus, PipelineError> {
    if let Some(spec) = input.strip_prefix("planted:") {
        let mut parts = spec.split(':');
        let n: usize = parts
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| PipelineError::Invalid(format!("bad planted spec `{input}`")))?;
        let seed: u64 = match parts.next() {
            Some(s) => s
                .parse()
                .map_err(|_| PipelineError::Invalid(format!("bad planted seed in `{input}`")))?,
            None => default_seed,
        };
        return Ok(planted_corpus(n, seed));
    }
    let path = Path::new(input);
    if path.is_dir() {
        return ingest_raw_dir(path);
    }
    Ok(load_corpus(path, CorpusFormat::Jsonl)?)
}

fn ingest_raw_dir(dir: &Path) -> Result<Corpus, PipelineError> {
    let markers = default_speaker_markers();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
        .collect();
    entries.sort();
    let mut transcripts = Vec::new();
    for path in entries {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        // Expected file name shape: <id>.<label>.txt
        let (id, label) = stem.rsplit_once('.').ok_or_else(|| {
            PipelineError::Invalid(format!(
                "raw transcript `{}` is not named <id>.<label>.txt",
                path.display()
            ))
        })?;
        let label = match label {
            "AD" => Label::AD,
            "NC" => Label::NC,
            other => {
                return Err(PipelineError::Invalid(format!(
                    "unknown label `{other}` in `{}`",
                    path.display()
                )))
            }
        };
        let raw = fs::read_to_string(&path)?;
        let utterances = parse_transcript(&raw, &markers)?;
        transcripts.push(Transcript {
            id: id.to_string(),
            label,
            utterances,
            source: path.display().to_string(),
        });
    }
    if transcripts.is_empty() {
        return Err(CorpusError::EmptyCorpus.into());
    }
    Ok(Corpus::new(transcripts)?)
}

pub struct IngestSummary {
    pub corpus: Corpus,
    pub output: PathBuf,
}

pub fn run_ingest(
    input: &str,
    output: &Path,
    default_seed: u64,
) -> Result<IngestSummary, PipelineError> {
    let corpus = resolve_ingest_input(input, default_seed)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_corpus(&corpus, output)?;
    Ok(IngestSummary {
        corpus,
        output: output.to_path_buf(),
    })
}

/// Distills atoms and markers for the whole corpus into the artifact store.
pub fn run_extract(cfg: &RunConfig) -> Result<ExtractStats, PipelineError> {
    let (corpus, train, _, _) = load_and_split(cfg)?;
    let gateway = cfg.build_gateway()?;
    let store = ArtifactStore::open(cfg.artifacts_dir())?;
    let stats = extract_corpus(
        &corpus,
        &train,
        cfg.gateway_fewshot,
        &store,
        &cfg.request_settings(),
        &gateway,
    )?;
    Ok(stats)
}

/// Generates the synthetic corpus for one strategy over the training split.
pub fn run_augment(
    cfg: &RunConfig,
    strategy: Strategy,
) -> Result<(PathBuf, Vec<SyntheticTranscript>), PipelineError> {
    let (_, train, _, _) = load_and_split(cfg)?;
    let gateway = cfg.build_gateway()?;
    let store = ArtifactStore::open(cfg.artifacts_dir())?;
    let samples = augment_corpus(
        &train,
        &cfg.augment_config(strategy),
        &store,
        &FeaturePool::default(),
        &gateway,
    )?;
    let path = cfg.synthetic_path(strategy);
    write_synthetic_corpus(&samples, &path)?;
    Ok((path, samples))
}

fn ensure_artifacts(cfg: &RunConfig, corpus: &Corpus) -> Result<ArtifactStore, PipelineError> {
    let store = ArtifactStore::open(cfg.artifacts_dir())?;
    let missing = corpus.transcripts().iter().any(|t| !store.contains(&t.id));
    if missing {
        run_extract(cfg)?;
    }
    Ok(store)
}

fn ensure_synthetic(
    cfg: &RunConfig,
    strategy: Strategy,
) -> Result<Vec<SyntheticTranscript>, PipelineError> {
    let path = cfg.synthetic_path(strategy);
    if path.exists() {
        Ok(load_synthetic_corpus(&path)?)
    } else {
        Ok(run_augment(cfg, strategy)?.1)
    }
}

fn grid_context<'a>(
    cfg: &'a RunConfig,
    train: &'a Corpus,
    test: &'a Corpus,
    artifacts: &'a ArtifactStore,
    train_cfg: &'a crate::training::TrainConfig,
    encoder_for_seed: &'a dyn Fn(u64) -> crate::encoding::EmbeddingEncoder,
    pooling: Pooling,
) -> GridContext<'a> {
    GridContext {
        train,
        test,
        artifacts,
        train_cfg,
        encoder_for_seed,
        d_f: cfg.fusion_d_f,
        fusion_seed: cfg.fusion_seed,
        pooling,
    }
}

pub struct TrainSummary {
    pub aggregate: AggregateReport,
    pub model_paths: Vec<PathBuf>,
    pub split_paths: Vec<PathBuf>,
    pub embedding_paths: Vec<PathBuf>,
}

fn encoder_seed_for(cfg: &RunConfig, run_seed: u64) -> u64 {
    cfg.encoder_seed ^ run_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains the full-component model for every configured seed, persists
/// checkpoints, split files, metrics, and Fig-style embedding exports.
pub fn run_train(
    cfg: &RunConfig,
    seed_override: Option<u64>,
) -> Result<TrainSummary, PipelineError> {
    let (corpus, train, val, test) = load_and_split(cfg)?;
    let artifacts = ensure_artifacts(cfg, &corpus)?;
    let strategy: Strategy = cfg
        .augment_strategy
        .parse()
        .map_err(PipelineError::Augmentation)?;
    let synthetic = ensure_synthetic(cfg, strategy)?;
    let pooling = cfg.pooling()?;

    let mut train_cfg = cfg.train_config();
    if let Some(seed) = seed_override {
        train_cfg.seeds = vec![seed];
    }

    let out_dir = &cfg.eval_out_dir;
    fs::create_dir_all(out_dir)?;

    let mut reports = Vec::new();
    let mut model_paths = Vec::new();
    let mut models: Vec<TrainedModel> = Vec::new();
    for &seed in &train_cfg.seeds {
        let trained = fit(
            &train_cfg,
            crate::training::FitInputs {
                train: &train,
                val: if val.is_empty() { None } else { Some(&val) },
                artifacts: &artifacts,
                synthetic: &synthetic,
                encoder: cfg.build_encoder(encoder_seed_for(cfg, seed))?,
                d_f: cfg.fusion_d_f,
                fusion_seed: cfg.fusion_seed,
                input_mode: InputMode::Amr,
                flags: Default::default(),
                pooling,
            },
            seed,
        )?;
        reports.push(evaluate(&trained.model, &test, &artifacts)?);
        let path = out_dir.join(format!("model-seed{seed}.json"));
        trained.save(&path)?;
        model_paths.push(path);
        models.push(trained);
    }
    let aggregate = aggregate_seeds(&reports)?;
    fs::write(
        out_dir.join("train-report.json"),
        serde_json::to_string_pretty(&aggregate).expect("report serializes"),
    )?;

    let mut split_paths = Vec::new();
    for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
        let path = out_dir.join(format!("split-{name}.jsonl"));
        write_corpus(split, &path)?;
        split_paths.push(path);
    }

    // Fig-style exports from the first seed's model: raw-transcript vs fused
    // representations of the test split.
    let mut embedding_paths = Vec::new();
    if let Some(first) = models.first() {
        let (raw, amr) = export_representation_records(first, &test, &artifacts)?;
        let raw_path = out_dir.join("embeddings-transcript.jsonl");
        write_embeddings_jsonl(&raw, &raw_path)?;
        let amr_path = out_dir.join("embeddings-amr.jsonl");
        write_embeddings_jsonl(&amr, &amr_path)?;
        embedding_paths.push(raw_path);
        embedding_paths.push(amr_path);
    }

    Ok(TrainSummary {
        aggregate,
        model_paths,
        split_paths,
        embedding_paths,
    })
}

fn export_representation_records(
    trained: &TrainedModel,
    split: &Corpus,
    artifacts: &ArtifactStore,
) -> Result<(Vec<EmbeddingRecord>, Vec<EmbeddingRecord>), PipelineError> {
    let model = &trained.model;
    let mut raw_records = Vec::new();
    let mut amr_records = Vec::new();
    for t in split.transcripts() {
        let artifact = artifacts
            .read(&t.id)?
            .ok_or_else(|| EvaluationError::MissingArtifact { id: t.id.clone() })?;
        let raw_vec = model
            .encoder
            .mean_rows(&model.encoder.token_rows(&t.dialogue_text()).0);
        let e_atom = model
            .encoder
            .mean_rows(&model.encoder.token_rows(&artifact.atom_text()).0);
        let marker_text = artifact.marker_text();
        let e_marker = if marker_text.trim().is_empty() {
            vec![0.0; model.encoder.dim()]
        } else {
            model
                .encoder
                .mean_rows(&model.encoder.token_rows(&marker_text).0)
        };
        let fused = crate::encoding::fuse_amr(&e_atom, &e_marker, &model.fusion)
            .map_err(TrainingError::Encoding)
            .map_err(PipelineError::Training)?;
        raw_records.push(EmbeddingRecord {
            id: t.id.clone(),
            label: t.label.to_string(),
            strategy: "original".to_string(),
            vector: raw_vec,
        });
        amr_records.push(EmbeddingRecord {
            id: t.id.clone(),
            label: t.label.to_string(),
            strategy: "amr".to_string(),
            vector: fused.vector,
        });
    }
    Ok((raw_records, amr_records))
}

/// Scores a saved checkpoint against a corpus file.
pub fn run_evaluate(
    cfg: &RunConfig,
    model_path: &Path,
    split_path: &Path,
) -> Result<MetricsReport, PipelineError> {
    let trained = TrainedModel::load(model_path)?;
    let split = load_corpus(split_path, CorpusFormat::Jsonl)?;
    let artifacts = ArtifactStore::open(cfg.artifacts_dir())?;
    Ok(evaluate(&trained.model, &split, &artifacts)?)
}

/// Runs the full 8-row component-ablation grid, regenerating artifacts and
/// synthetic data as needed, and writes one JSON row per line.
pub fn run_ablate(cfg: &RunConfig) -> Result<(Vec<AblationRow>, PathBuf), PipelineError> {
    let (corpus, train, _, test) = load_and_split(cfg)?;
    let artifacts = ensure_artifacts(cfg, &corpus)?;
    let synthetic = ensure_synthetic(cfg, Strategy::Lslp)?;
    let train_cfg = cfg.train_config();
    let pooling = cfg.pooling()?;
    let encoder_for_seed = |seed: u64| {
        cfg.build_encoder(encoder_seed_for(cfg, seed))
            .expect("encoder config validated before the grid")
    };
    let ctx = grid_context(
        cfg,
        &train,
        &test,
        &artifacts,
        &train_cfg,
        &encoder_for_seed,
        pooling,
    );
    // Validate the encoder config once so grid cells cannot panic.
    cfg.build_encoder(cfg.encoder_seed)?;
    let rows = ablation_grid(&ctx, &synthetic)?;

    fs::create_dir_all(&cfg.eval_out_dir)?;
    let path = cfg.eval_out_dir.join("ablation-report.jsonl");
    write_ablation_report(&rows, &train_cfg.seeds, &path)?;
    Ok((rows, path))
}

fn write_ablation_report(
    rows: &[AblationRow],
    seeds: &[u64],
    path: &Path,
) -> Result<(), PipelineError> {
    let mut out = String::new();
    for row in rows {
        let record = serde_json::json!({
            "atom": row.atom,
            "marker": row.marker,
            "lslp": row.lslp,
            "mean_acc": row.aggregate.mean_acc,
            "std_acc": row.aggregate.std_acc,
            "mean_f1": row.aggregate.mean_f1,
            "std_f1": row.aggregate.std_f1,
            "seeds": seeds,
        });
        out.push_str(&serde_json::to_string(&record).expect("row serializes"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs the input × strategy grid for the configured provider and exports the
/// synthetic-sample embeddings for cluster visualization.
pub fn run_compare(cfg: &RunConfig) -> Result<(Vec<StrategyRow>, PathBuf), PipelineError> {
    let (corpus, train, _, test) = load_and_split(cfg)?;
    let artifacts = ensure_artifacts(cfg, &corpus)?;
    let lslp = ensure_synthetic(cfg, Strategy::Lslp)?;
    let mimic = ensure_synthetic(cfg, Strategy::Mimic)?;
    let train_cfg = cfg.train_config();
    let pooling = cfg.pooling()?;
    cfg.build_encoder(cfg.encoder_seed)?;
    let encoder_for_seed = |seed: u64| {
        cfg.build_encoder(encoder_seed_for(cfg, seed))
            .expect("encoder config validated before the grid")
    };
    let ctx = grid_context(
        cfg,
        &train,
        &test,
        &artifacts,
        &train_cfg,
        &encoder_for_seed,
        pooling,
    );
    let providers = [ProviderSynthetics {
        llm: cfg.llm_label(),
        mimic: &mimic,
        lslp: &lslp,
    }];
    let rows = strategy_grid(&ctx, &providers)?;

    fs::create_dir_all(&cfg.eval_out_dir)?;
    let path = cfg.eval_out_dir.join("strategy-report.jsonl");
    let mut out = String::new();
    for row in &rows {
        let record = serde_json::json!({
            "llm": row.llm,
            "input": match row.input { InputMode::Amr => "amr", InputMode::Transcript => "transcript" },
            "strategy": row.strategy.as_str(),
            "mean_acc": row.aggregate.mean_acc,
            "std_acc": row.aggregate.std_acc,
            "mean_f1": row.aggregate.mean_f1,
            "std_f1": row.aggregate.std_f1,
            "seeds": train_cfg.seeds,
        });
        out.push_str(&serde_json::to_string(&record).expect("row serializes"));
        out.push('\n');
    }
    fs::write(&path, out)?;

    // Synthetic-sample embeddings under a fixed encoder for Fig-style plots.
    let encoder = cfg.build_encoder(cfg.encoder_seed)?;
    let mut records = Vec::new();
    for s in mimic.iter().chain(lslp.iter()) {
        records.push(EmbeddingRecord {
            id: s.id.clone(),
            label: s.label.to_string(),
            strategy: s.strategy.to_string(),
            vector: encoder.mean_rows(&encoder.token_rows(&s.text).0),
        });
    }
    write_embeddings_jsonl(&records, cfg.eval_out_dir.join("embeddings-synthetic.jsonl"))?;

    Ok((rows, path))
}

/// Projects an embeddings file to 2-D and writes the plot-ready CSV.
pub fn run_project(
    embeddings: &Path,
    method: ProjectionMethod,
    out: &Path,
    opts: &ProjectionOptions,
) -> Result<Projection2D, PipelineError> {
    let records = read_embeddings_jsonl(embeddings)?;
    let vectors: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    let meta: Vec<PointMeta> = records
        .iter()
        .map(|r| PointMeta {
            id: r.id.clone(),
            label: r.label.clone(),
            strategy: r.strategy.clone(),
        })
        .collect();
    let projection = project_embeddings(&vectors, &meta, method, opts)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_projection_csv(&projection, out)?;
    Ok(projection)
}

/// Convenience for FFI and smoke tests: train on the configured corpus with
/// the first seed only and return test-split metrics.
pub fn run_train_eval_once(cfg: &RunConfig) -> Result<MetricsReport, PipelineError> {
    let (corpus, train, _, test) = load_and_split(cfg)?;
    let artifacts = ensure_artifacts(cfg, &corpus)?;
    let strategy: Strategy = cfg
        .augment_strategy
        .parse()
        .map_err(PipelineError::Augmentation)?;
    let synthetic = ensure_synthetic(cfg, strategy)?;
    let mut train_cfg = cfg.train_config();
    train_cfg.seeds.truncate(1);
    let pooling = cfg.pooling()?;
    cfg.build_encoder(cfg.encoder_seed)?;
    let encoder_for_seed = |seed: u64| {
        cfg.build_encoder(encoder_seed_for(cfg, seed))
            .expect("encoder config validated above")
    };
    let ctx = grid_context(
        cfg,
        &train,
        &test,
        &artifacts,
        &train_cfg,
        &encoder_for_seed,
        pooling,
    );
    let (aggregate, _) = train_full(&ctx, &synthetic)?;
    Ok(aggregate.per_seed[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_config(dir: &Path, n: usize, extra: &str) -> RunConfig {
        let corpus_path = dir.join("corpus.jsonl");
        run_ingest(&format!("planted:{n}:11"), &corpus_path, 11).unwrap();
        let text = format!(
            "corpus.path = {}\ngateway.cache_dir = {}\neval.out_dir = {}\ntrain.epochs = 2\ntrain.seeds = 1\nencoder.dim = 16\nencoder.buckets = 256\n{extra}",
            corpus_path.display(),
            dir.join("cache").display(),
            dir.join("runs").display(),
        );
        RunConfig::parse_str(&text).unwrap()
    }

    #[test]
    fn ingest_planted_writes_a_loadable_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("c.jsonl");
        let summary = run_ingest("planted:10:3", &out, 3).unwrap();
        assert_eq!(summary.corpus.len(), 10);
        let loaded = load_corpus(&out, CorpusFormat::Jsonl).unwrap();
        assert_eq!(loaded.len(), 10);
    }

    #[test]
    fn ingest_raw_dir_parses_speaker_lines() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        fs::create_dir_all(&raw).unwrap();
        fs::write(raw.join("s01.AD.txt"), "INV: what do you see?\nPAR: uh the boy\n").unwrap();
        fs::write(raw.join("s02.NC.txt"), "PAR: the boy reaches while the water runs\n").unwrap();
        let out = dir.path().join("c.jsonl");
        let summary = run_ingest(raw.to_str().unwrap(), &out, 0).unwrap();
        assert_eq!(summary.corpus.len(), 2);
        assert_eq!(summary.corpus.count(Label::AD), 1);
    }

    #[test]
    fn extract_then_augment_then_train_eval() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture_config(dir.path(), 16, "");
        let stats = run_extract(&cfg).unwrap();
        assert_eq!(stats.transcripts, 16);
        let (path, samples) = run_augment(&cfg, Strategy::Lslp).unwrap();
        assert!(path.exists());
        assert_eq!(samples.len(), 12); // 0.8 × 16 train samples
        let report = run_train_eval_once(&cfg).unwrap();
        assert!(report.accuracy >= 0.0 && report.accuracy <= 1.0);
    }

    #[test]
    fn second_extract_run_is_fully_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture_config(dir.path(), 8, "");
        let first = run_extract(&cfg).unwrap();
        assert_eq!(first.cache_hits, 0);
        assert_eq!(first.provider_calls, first.requests);
        let second = run_extract(&cfg).unwrap();
        assert_eq!(second.provider_calls, 0);
        assert_eq!(second.cache_hits, second.requests);
    }

    #[test]
    fn train_writes_models_splits_and_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture_config(dir.path(), 16, "");
        let summary = run_train(&cfg, None).unwrap();
        assert_eq!(summary.model_paths.len(), 1);
        assert!(summary.model_paths[0].exists());
        assert_eq!(summary.split_paths.len(), 3);
        assert_eq!(summary.embedding_paths.len(), 2);
        // evaluate round-trips through the saved checkpoint and split file.
        let report = run_evaluate(
            &cfg,
            &summary.model_paths[0],
            &cfg.eval_out_dir.join("split-test.jsonl"),
        )
        .unwrap();
        assert!((report.accuracy - summary.aggregate.per_seed[0].accuracy).abs() < 1e-12);
    }

    #[test]
    fn ablate_writes_eight_deterministic_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture_config(dir.path(), 12, "");
        let (rows, path) = run_ablate(&cfg).unwrap();
        assert_eq!(rows.len(), 8);
        let first = fs::read(&path).unwrap();
        let (_, path2) = run_ablate(&cfg).unwrap();
        let second = fs::read(&path2).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn compare_emits_four_rows_and_synthetic_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture_config(dir.path(), 12, "");
        let (rows, path) = run_compare(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(path.exists());
        let emb = cfg.eval_out_dir.join("embeddings-synthetic.jsonl");
        let records = read_embeddings_jsonl(&emb).unwrap();
        // One mimic + one lslp sample per train transcript.
        assert_eq!(records.len(), 2 * 10);
        let proj = run_project(
            &emb,
            ProjectionMethod::Pca,
            &cfg.eval_out_dir.join("proj.csv"),
            &ProjectionOptions::default(),
        )
        .unwrap();
        assert_eq!(proj.points.len(), records.len());
    }
}
