//! Metrics, multi-seed aggregation, and the ablation / generation-strategy
//! experiment grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::{Strategy, SyntheticTranscript};
use crate::corpus::{Corpus, Label};
use crate::encoding::{EmbeddingEncoder, Pooling};
use crate::extraction::ArtifactStore;
use crate::training::{
    build_features, fit, ComponentFlags, DectModel, FitInputs, InputMode, TrainConfig,
    TrainedModel, TrainingError,
};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("no extraction artifact for split transcript `{id}`")]
    MissingArtifact { id: String },
    #[error("no reports to aggregate")]
    EmptyList,
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Extraction(#[from] crate::extraction::ExtractionError),
}

/// Binary confusion counts with AD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Accuracy and F1 (positive class AD) over one evaluation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let n = confusion.n();
        let accuracy = if n == 0 {
            0.0
        } else {
            (confusion.tp + confusion.tn) as f64 / n as f64
        };
        let denom = 2 * confusion.tp + confusion.fp + confusion.fn_;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * confusion.tp as f64 / denom as f64
        };
        MetricsReport {
            accuracy,
            f1,
            confusion,
            n,
        }
    }
}

/// Per-seed metrics with their mean and sample (n−1) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_seed: Vec<MetricsReport>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregates per-seed reports; a single report yields zero deviations.
pub fn aggregate_seeds(reports: &[MetricsReport]) -> Result<AggregateReport, EvaluationError> {
    if reports.is_empty() {
        return Err(EvaluationError::EmptyList);
    }
    let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let f1s: Vec<f64> = reports.iter().map(|r| r.f1).collect();
    let (mean_acc, std_acc) = mean_and_sample_std(&accs);
    let (mean_f1, std_f1) = mean_and_sample_std(&f1s);
    Ok(AggregateReport {
        per_seed: reports.to_vec(),
        mean_acc,
        std_acc,
        mean_f1,
        std_f1,
    })
}

/// Evaluates a trained model on a split via the fused-representation path;
/// the synthetic leg is never consulted.
pub fn evaluate(
    model: &DectModel,
    split: &Corpus,
    artifacts: &ArtifactStore,
) -> Result<MetricsReport, EvaluationError> {
    if split.is_empty() {
        return Err(EvaluationError::EmptySplit);
    }
    let needs_artifact =
        model.input_mode == InputMode::Amr && (model.flags.atom || model.flags.marker);
    let mut confusion = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for t in split.transcripts() {
        let artifact = if needs_artifact {
            Some(
                artifacts
                    .read(&t.id)?
                    .ok_or_else(|| EvaluationError::MissingArtifact { id: t.id.clone() })?,
            )
        } else {
            None
        };
        let texts = artifact.as_ref().map(|a| (a.atom_text(), a.marker_text()));
        let features = build_features(
            t,
            texts.as_ref().map(|(a, m)| (a.as_str(), m.as_str())),
            &model.encoder,
            model.flags,
            model.input_mode,
        )
        .map_err(|e| match e {
            TrainingError::MissingArtifact { id } => EvaluationError::MissingArtifact { id },
            other => EvaluationError::Training(other),
        })?;
        let predicted = model.predict(&features);
        match (predicted, t.label) {
            (Label::AD, Label::AD) => confusion.tp += 1,
            (Label::AD, Label::NC) => confusion.fp += 1,
            (Label::NC, Label::AD) => confusion.fn_ += 1,
            (Label::NC, Label::NC) => confusion.tn += 1,
        }
    }
    Ok(MetricsReport::from_confusion(confusion))
}

/// Everything a grid cell needs to train and score one configuration.
pub struct GridContext<'a> {
    pub train: &'a Corpus,
    pub test: &'a Corpus,
    pub artifacts: &'a ArtifactStore,
    pub train_cfg: &'a TrainConfig,
    pub encoder_for_seed: &'a dyn Fn(u64) -> EmbeddingEncoder,
    pub d_f: usize,
    pub fusion_seed: u64,
    pub pooling: Pooling,
}

fn run_cell(
    ctx: &GridContext<'_>,
    synthetic: &[SyntheticTranscript],
    flags: ComponentFlags,
    input_mode: InputMode,
) -> Result<(AggregateReport, Vec<TrainedModel>), EvaluationError> {
    let mut reports = Vec::with_capacity(ctx.train_cfg.seeds.len());
    let mut models = Vec::with_capacity(ctx.train_cfg.seeds.len());
    for &seed in &ctx.train_cfg.seeds {
        let trained = fit(
            ctx.train_cfg,
            FitInputs {
                train: ctx.train,
                val: None,
                artifacts: ctx.artifacts,
                synthetic,
                encoder: (ctx.encoder_for_seed)(seed),
                d_f: ctx.d_f,
                fusion_seed: ctx.fusion_seed,
                input_mode,
                flags,
                pooling: ctx.pooling,
            },
            seed,
        )?;
        reports.push(evaluate(&trained.model, ctx.test, ctx.artifacts)?);
        models.push(trained);
    }
    Ok((aggregate_seeds(&reports)?, models))
}

/// One row of the component-ablation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub atom: bool,
    pub marker: bool,
    pub lslp: bool,
    pub aggregate: AggregateReport,
}

/// All eight on/off combinations of {atom, marker, lslp}, each trained and
/// evaluated over the configured seeds. Row (false, false, false) is the
/// encoder-only baseline: raw transcript embedding, zero marker leg, no
/// synthetic loss.
pub fn ablation_grid(
    ctx: &GridContext<'_>,
    lslp_synthetic: &[SyntheticTranscript],
) -> Result<Vec<AblationRow>, EvaluationError> {
    let combos = [
        (false, false, false),
        (true, false, false),
        (false, true, false),
        (false, false, true),
        (true, true, false),
        (true, false, true),
        (false, true, true),
        (true, true, true),
    ];
    let mut rows = Vec::with_capacity(combos.len());
    for (atom, marker, lslp) in combos {
        let flags = ComponentFlags { atom, marker, lslp };
        let synthetic: &[SyntheticTranscript] = if lslp { lslp_synthetic } else { &[] };
        let (aggregate, _) = run_cell(ctx, synthetic, flags, InputMode::Amr)?;
        rows.push(AblationRow {
            atom,
            marker,
            lslp,
            aggregate,
        });
    }
    Ok(rows)
}

/// One row of the input × strategy × provider grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyRow {
    pub llm: String,
    pub input: InputMode,
    pub strategy: Strategy,
    pub aggregate: AggregateReport,
}

/// A provider's synthetic corpora, one per strategy.
pub struct ProviderSynthetics<'a> {
    pub llm: String,
    pub mimic: &'a [SyntheticTranscript],
    pub lslp: &'a [SyntheticTranscript],
}

/// Crosses {Transcript, AMR} inputs with {Mimic, LSLP} strategies for each
/// provider. The Transcript input bypasses fusion and feeds the pooled raw
/// transcript embedding to the head.
pub fn strategy_grid(
    ctx: &GridContext<'_>,
    providers: &[ProviderSynthetics<'_>],
) -> Result<Vec<StrategyRow>, EvaluationError> {
    let mut rows = Vec::new();
    for provider in providers {
        for input in [InputMode::Transcript, InputMode::Amr] {
            for strategy in [Strategy::Mimic, Strategy::Lslp] {
                let synthetic = match strategy {
                    Strategy::Mimic => provider.mimic,
                    Strategy::Lslp => provider.lslp,
                };
                let flags = ComponentFlags {
                    atom: input == InputMode::Amr,
                    marker: input == InputMode::Amr,
                    lslp: true,
                };
                let (aggregate, _) = run_cell(ctx, synthetic, flags, input)?;
                rows.push(StrategyRow {
                    llm: provider.llm.clone(),
                    input,
                    strategy,
                    aggregate,
                });
            }
        }
    }
    Ok(rows)
}

/// Trains the full-component model for each seed (the compare/export path).
pub fn train_full(
    ctx: &GridContext<'_>,
    synthetic: &[SyntheticTranscript],
) -> Result<(AggregateReport, Vec<TrainedModel>), EvaluationError> {
    run_cell(ctx, synthetic, ComponentFlags::default(), InputMode::Amr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::{augment_corpus, AugmentConfig};
    use crate::corpus::{split_corpus, SplitSpec};
    use crate::extraction::extract_corpus;
    use crate::gateway::providers::MockProvider;
    use crate::gateway::{Gateway, RequestSettings};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let r = MetricsReport::from_confusion(Confusion {
            tp: 6,
            fp: 0,
            fn_: 0,
            tn: 4,
        });
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.n, 10);
    }

    #[test]
    fn fixed_confusion_reproduces_reference_values() {
        let r = MetricsReport::from_confusion(Confusion {
            tp: 3,
            fp: 1,
            fn_: 1,
            tn: 5,
        });
        assert!((r.accuracy - 0.8).abs() < 1e-15);
        assert!((r.f1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn f1_is_zero_when_undefined() {
        let r = MetricsReport::from_confusion(Confusion {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 5,
        });
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.accuracy, 1.0);
    }

    fn report(acc: f64, f1: f64) -> MetricsReport {
        MetricsReport {
            accuracy: acc,
            f1,
            confusion: Confusion {
                tp: 0,
                fp: 0,
                fn_: 0,
                tn: 0,
            },
            n: 0,
        }
    }

    #[test]
    fn aggregation_matches_reference_sample_std() {
        let reports: Vec<MetricsReport> = [0.80, 0.82, 0.84, 0.86, 0.88]
            .iter()
            .map(|a| report(*a, *a))
            .collect();
        let agg = aggregate_seeds(&reports).unwrap();
        assert!((agg.mean_acc - 0.84).abs() < 1e-12);
        assert!((agg.std_acc - 0.031623).abs() < 1e-6);
        assert_eq!(agg.per_seed.len(), 5);
    }

    #[test]
    fn single_report_has_zero_std() {
        let agg = aggregate_seeds(&[report(0.9, 0.8)]).unwrap();
        assert_eq!(agg.std_acc, 0.0);
        assert_eq!(agg.std_f1, 0.0);
        assert_eq!(agg.mean_acc, 0.9);
    }

    #[test]
    fn empty_reports_are_rejected() {
        assert!(matches!(
            aggregate_seeds(&[]),
            Err(EvaluationError::EmptyList)
        ));
    }

    #[test]
    fn aggregation_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let reports: Vec<MetricsReport> = (0..5)
                .map(|_| report(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
                .collect();
            let agg = aggregate_seeds(&reports).unwrap();
            // Independent two-pass mean/std.
            let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
            let mean: f64 = accs.iter().sum::<f64>() / accs.len() as f64;
            let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
                / (accs.len() - 1) as f64)
                .sqrt();
            assert!((agg.mean_acc - mean).abs() < 1e-12);
            assert!((agg.std_acc - std).abs() < 1e-12);
        }
    }

    struct Fixture {
        train: Corpus,
        test: Corpus,
        store: ArtifactStore,
        synthetic: Vec<SyntheticTranscript>,
        mimic: Vec<SyntheticTranscript>,
        _dirs: Vec<tempfile::TempDir>,
    }

    fn pipeline_fixture(n: usize) -> Fixture {
        let corpus = crate::planted::planted_corpus(n, 7);
        let (train, _, test) = split_corpus(
            &corpus,
            &SplitSpec {
                train_fraction: 0.75,
                val_fraction: 0.0,
                test_fraction: 0.25,
                seed: 42,
                stratified: true,
            },
        )
        .unwrap();
        let art_dir = tempfile::tempdir().unwrap();
        let cache_dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(art_dir.path()).unwrap();
        let gw = Gateway::new(Box::new(MockProvider), cache_dir.path()).unwrap();
        extract_corpus(&corpus, &train, 2, &store, &RequestSettings::default(), &gw).unwrap();
        let synthetic = augment_corpus(
            &train,
            &AugmentConfig::default(),
            &store,
            &Default::default(),
            &gw,
        )
        .unwrap();
        let mimic = augment_corpus(
            &train,
            &AugmentConfig {
                strategy: Strategy::Mimic,
                ..AugmentConfig::default()
            },
            &store,
            &Default::default(),
            &gw,
        )
        .unwrap();
        Fixture {
            train,
            test,
            store,
            synthetic,
            mimic,
            _dirs: vec![art_dir, cache_dir],
        }
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            seeds: vec![1],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn evaluate_errors_on_empty_split_and_missing_artifacts() {
        let fx = pipeline_fixture(12);
        let cfg = quick_cfg();
        let ctx = GridContext {
            train: &fx.train,
            test: &fx.test,
            artifacts: &fx.store,
            train_cfg: &cfg,
            encoder_for_seed: &|seed| EmbeddingEncoder::tiny(16, 256, 128, seed),
            d_f: 0,
            fusion_seed: 0,
            pooling: Pooling::Mean,
        };
        let (_, models) = train_full(&ctx, &fx.synthetic).unwrap();
        let empty = Corpus::new(vec![]).unwrap();
        assert!(matches!(
            evaluate(&models[0].model, &empty, &fx.store),
            Err(EvaluationError::EmptySplit)
        ));
        let bare = tempfile::tempdir().unwrap();
        let bare_store = ArtifactStore::open(bare.path()).unwrap();
        assert!(matches!(
            evaluate(&models[0].model, &fx.test, &bare_store),
            Err(EvaluationError::MissingArtifact { .. })
        ));
    }

    #[test]
    fn ablation_grid_emits_all_eight_rows_once() {
        let fx = pipeline_fixture(16);
        let cfg = quick_cfg();
        let ctx = GridContext {
            train: &fx.train,
            test: &fx.test,
            artifacts: &fx.store,
            train_cfg: &cfg,
            encoder_for_seed: &|seed| EmbeddingEncoder::tiny(16, 256, 128, seed),
            d_f: 0,
            fusion_seed: 0,
            pooling: Pooling::Mean,
        };
        let rows = ablation_grid(&ctx, &fx.synthetic).unwrap();
        assert_eq!(rows.len(), 8);
        let mut combos: Vec<(bool, bool, bool)> =
            rows.iter().map(|r| (r.atom, r.marker, r.lslp)).collect();
        combos.sort();
        combos.dedup();
        assert_eq!(combos.len(), 8);
        for row in &rows {
            assert_eq!(row.aggregate.per_seed.len(), 1);
        }
    }

    #[test]
    fn baseline_row_needs_no_artifacts_and_no_provider() {
        // The (F,F,F) combination trains from raw transcripts alone: an empty
        // artifact store suffices and the provider is never invoked.
        let corpus = crate::planted::planted_corpus(12, 7);
        let (train, _, test) = split_corpus(
            &corpus,
            &SplitSpec {
                train_fraction: 0.75,
                val_fraction: 0.0,
                test_fraction: 0.25,
                seed: 42,
                stratified: true,
            },
        )
        .unwrap();
        let empty_dir = tempfile::tempdir().unwrap();
        let empty_store = ArtifactStore::open(empty_dir.path()).unwrap();
        let cache = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Box::new(MockProvider), cache.path()).unwrap();
        let calls_before = gw.provider_calls();
        let cfg = quick_cfg();
        let ctx = GridContext {
            train: &train,
            test: &test,
            artifacts: &empty_store,
            train_cfg: &cfg,
            encoder_for_seed: &|seed| EmbeddingEncoder::tiny(16, 256, 128, seed),
            d_f: 0,
            fusion_seed: 0,
            pooling: Pooling::Mean,
        };
        let flags = ComponentFlags {
            atom: false,
            marker: false,
            lslp: false,
        };
        let (aggregate, _) = run_cell(&ctx, &[], flags, InputMode::Amr).unwrap();
        assert!(aggregate.mean_acc >= 0.0);
        assert_eq!(gw.provider_calls(), calls_before);
    }

    #[test]
    fn fit_never_invokes_the_provider() {
        let fx = pipeline_fixture(12);
        let cache = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Box::new(MockProvider), cache.path()).unwrap();
        let calls_before = gw.provider_calls();
        let cfg = quick_cfg();
        let ctx = GridContext {
            train: &fx.train,
            test: &fx.test,
            artifacts: &fx.store,
            train_cfg: &cfg,
            encoder_for_seed: &|seed| EmbeddingEncoder::tiny(16, 256, 128, seed),
            d_f: 0,
            fusion_seed: 0,
            pooling: Pooling::Mean,
        };
        let _ = train_full(&ctx, &fx.synthetic).unwrap();
        assert_eq!(
            gw.provider_calls(),
            calls_before,
            "training must not touch the provider"
        );
    }

    #[test]
    fn strategy_grid_covers_inputs_times_strategies() {
        let fx = pipeline_fixture(12);
        let cfg = quick_cfg();
        let ctx = GridContext {
            train: &fx.train,
            test: &fx.test,
            artifacts: &fx.store,
            train_cfg: &cfg,
            encoder_for_seed: &|seed| EmbeddingEncoder::tiny(16, 256, 128, seed),
            d_f: 0,
            fusion_seed: 0,
            pooling: Pooling::Mean,
        };
        let providers = [ProviderSynthetics {
            llm: "mock/mock-1".to_string(),
            mimic: &fx.mimic,
            lslp: &fx.synthetic,
        }];
        let rows = strategy_grid(&ctx, &providers).unwrap();
        assert_eq!(rows.len(), 4);
        // Mimic rows consume corpora whose labels all match the source labels.
        for s in &fx.mimic {
            let src = fx.train.get(s.source_id()).unwrap();
            assert_eq!(s.label, src.label);
        }
        for row in &rows {
            assert_eq!(row.llm, "mock/mock-1");
            assert!(row.aggregate.mean_acc >= 0.0 && row.aggregate.mean_acc <= 1.0);
        }
    }
}
