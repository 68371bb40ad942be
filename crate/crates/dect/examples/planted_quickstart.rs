//! Builds the planted synthetic corpus and runs the full pipeline on it with
//! the mock provider: extract, augment, train over three seeds, evaluate.

use dect::config::RunConfig;
use dect::pipeline;

fn main() {
    let dir = std::env::temp_dir().join("dect-planted-quickstart");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let corpus_path = dir.join("corpus.jsonl");
    pipeline::run_ingest("planted:200:42", &corpus_path, 42).unwrap();

    let text = format!(
        "corpus.path = {}\ngateway.cache_dir = {}\neval.out_dir = {}\ntrain.seeds = 1,2,3\n",
        corpus_path.display(),
        dir.join("cache").display(),
        dir.join("runs").display(),
    );
    let cfg = RunConfig::parse_str(&text).unwrap();
    let summary = pipeline::run_train(&cfg, None).unwrap();
    println!(
        "held-out accuracy {:.4} ± {:.4}, F1 {:.4} ± {:.4}",
        summary.aggregate.mean_acc,
        summary.aggregate.std_acc,
        summary.aggregate.mean_f1,
        summary.aggregate.std_f1
    );
    for (path, report) in summary.model_paths.iter().zip(&summary.aggregate.per_seed) {
        println!("  {} -> acc {:.4}", path.display(), report.accuracy);
    }
}
