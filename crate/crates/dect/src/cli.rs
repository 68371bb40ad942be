//! Command-line entry point: argument parsing, config/flag precedence,
//! manifests, and error rendering with stable exit codes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augmentation::Strategy;
use crate::config::RunConfig;
use crate::gateway::GatewayError;
use crate::pipeline::{self, PipelineError};
use crate::projection::{ProjectionMethod, ProjectionOptions};

#[derive(Parser, Debug)]
#[command(name = "dect", version, about = "LLM-assisted dementia-detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate/normalize a corpus, parse raw transcripts, or build the
    /// planted synthetic corpus (`--input planted:N[:SEED]`).
    Ingest {
        #[arg(long)]
        input: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Distill atoms and markers for every transcript into artifact files.
    Extract {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value = "dect.cfg")]
        config: PathBuf,
    },
    /// Generate a synthetic corpus over the training split.
    Augment {
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        p_switch: Option<f64>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        multiplicity: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "dect.cfg")]
        config: PathBuf,
    },
    /// Train over the configured seeds and write checkpoints plus reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a saved checkpoint on a corpus file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "dect.cfg")]
        config: PathBuf,
    },
    /// Run the 8-row component-ablation grid end to end.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the input × strategy generation-comparison grid end to end.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Project an embeddings file to 2-D (PCA or t-SNE) as plot-ready CSV.
    Project {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        perplexity: Option<f64>,
    },
}

/// Record of one CLI run, written on success and failure alike.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
    pub exit_status: String,
    pub timestamp_unix: u64,
}

impl RunManifest {
    fn write(&self, out_dir: &Path) {
        if std::fs::create_dir_all(out_dir).is_err() {
            return;
        }
        let path = out_dir.join(format!("manifest-{}.json", self.command));
        if let Ok(json) = serde_json::to_string_pretty(self) {
            let _ = std::fs::write(path, json);
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn render_error(e: &PipelineError) -> String {
    let mut msg = format!("error: {e}");
    let provider_unavailable = matches!(
        e,
        PipelineError::Gateway(GatewayError::ProviderUnavailable { .. })
            | PipelineError::Config(crate::config::ConfigError::Gateway(
                GatewayError::ProviderUnavailable { .. }
            ))
            | PipelineError::Extraction(crate::extraction::ExtractionError::Gateway(
                GatewayError::ProviderUnavailable { .. }
            ))
            | PipelineError::Augmentation(crate::augmentation::AugmentationError::Gateway(
                GatewayError::ProviderUnavailable { .. }
            ))
    );
    if provider_unavailable {
        msg.push_str(
            "\nhint: set DECT_LLM_API_KEY for the http provider, or use gateway.provider = mock",
        );
    }
    msg
}

struct CommandOutcome {
    config_hash: String,
    seeds: Vec<u64>,
    artifacts: Vec<String>,
    out_dir: PathBuf,
    result: Result<Vec<String>, PipelineError>,
}

/// Parses argv and dispatches. Returns the process exit code: 0 on success,
/// 1 on pipeline errors, 2 on usage errors (unknown command or flags).
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    let command_name = command_name(&cli.command);
    let outcome = dispatch(cli.command);

    let (exit_code, exit_status, summary) = match &outcome.result {
        Ok(lines) => (0, "success".to_string(), lines.clone()),
        Err(e) => (1, format!("error: {e}"), vec![render_error(e)]),
    };
    for line in &summary {
        if exit_code == 0 {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }

    RunManifest {
        command: command_name,
        config_hash: outcome.config_hash,
        seeds: outcome.seeds,
        artifacts: outcome.artifacts,
        exit_status,
        timestamp_unix: now_unix(),
    }
    .write(&outcome.out_dir);

    exit_code
}

fn command_name(command: &Command) -> String {
    match command {
        Command::Ingest { .. } => "ingest",
        Command::Extract { .. } => "extract",
        Command::Augment { .. } => "augment",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Ablate { .. } => "ablate",
        Command::Compare { .. } => "compare",
        Command::Project { .. } => "project",
    }
    .to_string()
}

fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::parse_file(path)?;
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> CommandOutcome {
    match command {
        Command::Ingest {
            input,
            output,
            seed,
        } => {
            let result = pipeline::run_ingest(&input, &output, seed).map(|summary| {
                let counts = summary.corpus.class_counts();
                vec![format!(
                    "ingested {} transcripts ({}) -> {}",
                    summary.corpus.len(),
                    counts
                        .iter()
                        .map(|(label, count)| format!("{label}:{count}"))
                        .collect::<Vec<_>>()
                        .join(", "),
                    summary.output.display()
                )]
            });
            CommandOutcome {
                config_hash: String::new(),
                seeds: vec![seed],
                artifacts: vec![output.display().to_string()],
                out_dir: sibling_runs_dir(&output),
                result,
            }
        }
        Command::Extract {
            corpus,
            provider,
            cache_dir,
            config,
        } => {
            let mut overrides = Vec::new();
            if let Some(corpus) = &corpus {
                overrides.push(("corpus.path".to_string(), corpus.display().to_string()));
            }
            if let Some(provider) = &provider {
                overrides.push(("gateway.provider".to_string(), provider.clone()));
            }
            if let Some(cache_dir) = &cache_dir {
                overrides.push((
                    "gateway.cache_dir".to_string(),
                    cache_dir.display().to_string(),
                ));
            }
            with_config(&config, &overrides, |cfg| {
                let stats = pipeline::run_extract(cfg)?;
                Ok((
                    vec![format!(
                        "extracted {} transcripts: {} requests, {} provider calls, {} cache hits -> {}",
                        stats.transcripts,
                        stats.requests,
                        stats.provider_calls,
                        stats.cache_hits,
                        cfg.artifacts_dir().display()
                    )],
                    vec![cfg.artifacts_dir().display().to_string()],
                    cfg.train_seeds.clone(),
                ))
            })
        }
        Command::Augment {
            strategy,
            p_switch,
            k_min,
            k_max,
            multiplicity,
            seed,
            corpus,
            config,
        } => {
            let mut overrides = vec![("augment.strategy".to_string(), strategy.clone())];
            if let Some(corpus) = &corpus {
                overrides.push(("corpus.path".to_string(), corpus.display().to_string()));
            }
            if let Some(v) = p_switch {
                overrides.push(("augment.p_switch".to_string(), v.to_string()));
            }
            if let Some(v) = k_min {
                overrides.push(("augment.k_min".to_string(), v.to_string()));
            }
            if let Some(v) = k_max {
                overrides.push(("augment.k_max".to_string(), v.to_string()));
            }
            if let Some(v) = multiplicity {
                overrides.push(("augment.multiplicity".to_string(), v.to_string()));
            }
            if let Some(v) = seed {
                overrides.push(("augment.seed".to_string(), v.to_string()));
            }
            with_config(&config, &overrides, |cfg| {
                let strategy: Strategy = cfg
                    .augment_strategy
                    .parse()
                    .map_err(PipelineError::Augmentation)?;
                let (path, samples) = pipeline::run_augment(cfg, strategy)?;
                Ok((
                    vec![format!(
                        "generated {} synthetic transcripts ({strategy}) -> {}",
                        samples.len(),
                        path.display()
                    )],
                    vec![path.display().to_string()],
                    vec![cfg.augment_seed],
                ))
            })
        }
        Command::Train { config, seed } => with_config(&config, &[], |cfg| {
            let summary = pipeline::run_train(cfg, seed)?;
            let seeds = match seed {
                Some(s) => vec![s],
                None => cfg.train_seeds.clone(),
            };
            let mut artifacts: Vec<String> = summary
                .model_paths
                .iter()
                .chain(summary.split_paths.iter())
                .chain(summary.embedding_paths.iter())
                .map(|p| p.display().to_string())
                .collect();
            artifacts.push(
                cfg.eval_out_dir
                    .join("train-report.json")
                    .display()
                    .to_string(),
            );
            Ok((
                vec![format!(
                    "trained {} seed(s): mean acc {:.4} ± {:.4}, mean F1 {:.4} ± {:.4}",
                    seeds.len(),
                    summary.aggregate.mean_acc,
                    summary.aggregate.std_acc,
                    summary.aggregate.mean_f1,
                    summary.aggregate.std_f1
                )],
                artifacts,
                seeds,
            ))
        }),
        Command::Evaluate {
            model,
            split,
            config,
        } => with_config(&config, &[], |cfg| {
            let report = pipeline::run_evaluate(cfg, &model, &split)?;
            Ok((
                vec![format!(
                    "accuracy {:.4}, F1 {:.4} on {} samples (tp {}, fp {}, fn {}, tn {})",
                    report.accuracy,
                    report.f1,
                    report.n,
                    report.confusion.tp,
                    report.confusion.fp,
                    report.confusion.fn_,
                    report.confusion.tn
                )],
                vec![],
                cfg.train_seeds.clone(),
            ))
        }),
        Command::Ablate { config } => with_config(&config, &[], |cfg| {
            let (rows, path) = pipeline::run_ablate(cfg)?;
            let mut lines =
                vec!["atom  marker lslp   mean_acc  std_acc  mean_f1  std_f1".to_string()];
            for r in &rows {
                lines.push(format!(
                    "{:5} {:6} {:5}  {:.4}    {:.4}   {:.4}   {:.4}",
                    r.atom,
                    r.marker,
                    r.lslp,
                    r.aggregate.mean_acc,
                    r.aggregate.std_acc,
                    r.aggregate.mean_f1,
                    r.aggregate.std_f1
                ));
            }
            lines.push(format!("wrote {}", path.display()));
            Ok((
                lines,
                vec![path.display().to_string()],
                cfg.train_seeds.clone(),
            ))
        }),
        Command::Compare { config } => with_config(&config, &[], |cfg| {
            let (rows, path) = pipeline::run_compare(cfg)?;
            let mut lines =
                vec!["llm           input       strategy  mean_acc  mean_f1".to_string()];
            for r in &rows {
                let input = match r.input {
                    crate::training::InputMode::Amr => "amr",
                    crate::training::InputMode::Transcript => "transcript",
                };
                lines.push(format!(
                    "{:13} {:10}  {:8}  {:.4}    {:.4}",
                    r.llm,
                    input,
                    r.strategy.as_str(),
                    r.aggregate.mean_acc,
                    r.aggregate.mean_f1
                ));
            }
            lines.push(format!("wrote {}", path.display()));
            Ok((
                lines,
                vec![path.display().to_string()],
                cfg.train_seeds.clone(),
            ))
        }),
        Command::Project {
            embeddings,
            method,
            out,
            seed,
            perplexity,
        } => {
            let result = (|| {
                let method: ProjectionMethod =
                    method.parse().map_err(PipelineError::Projection)?;
                let mut opts = ProjectionOptions::default();
                if let Some(s) = seed {
                    opts.seed = s;
                }
                if let Some(p) = perplexity {
                    opts.perplexity = p;
                }
                let projection = pipeline::run_project(&embeddings, method, &out, &opts)?;
                Ok(vec![format!(
                    "projected {} points -> {}",
                    projection.points.len(),
                    out.display()
                )])
            })();
            CommandOutcome {
                config_hash: String::new(),
                seeds: seed.map(|s| vec![s]).unwrap_or_default(),
                artifacts: vec![out.display().to_string()],
                out_dir: sibling_runs_dir(&out),
                result,
            }
        }
    }
}

fn with_config(
    config_path: &Path,
    overrides: &[(String, String)],
    body: impl FnOnce(&RunConfig) -> Result<(Vec<String>, Vec<String>, Vec<u64>), PipelineError>,
) -> CommandOutcome {
    match load_config(config_path, overrides) {
        Ok(cfg) => {
            let config_hash = cfg.hash();
            let out_dir = cfg.eval_out_dir.clone();
            match body(&cfg) {
                Ok((lines, artifacts, seeds)) => CommandOutcome {
                    config_hash,
                    seeds,
                    artifacts,
                    out_dir,
                    result: Ok(lines),
                },
                Err(e) => CommandOutcome {
                    config_hash,
                    seeds: vec![],
                    artifacts: vec![],
                    out_dir,
                    result: Err(e),
                },
            }
        }
        Err(e) => CommandOutcome {
            config_hash: "invalid-config".to_string(),
            seeds: vec![],
            artifacts: vec![],
            out_dir: sibling_runs_dir(config_path),
            result: Err(e),
        },
    }
}

/// `runs/` next to the file that drove the command, so manifests never land
/// in an unrelated working directory. An anchor already inside a `runs`
/// directory keeps its manifest there rather than nesting another level.
fn sibling_runs_dir(anchor: &Path) -> PathBuf {
    match anchor.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => {
            if parent.file_name().is_some_and(|n| n == "runs") {
                parent.to_path_buf()
            } else {
                parent.join("runs")
            }
        }
        _ => PathBuf::from("runs"),
    }
}
