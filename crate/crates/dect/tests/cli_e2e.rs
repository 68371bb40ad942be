//! End-to-end CLI walkthrough: every subcommand in sequence against the
//! planted corpus, plus manifest and exit-code behavior.

use std::fs;
use std::path::Path;

use dect::cli;

fn arg_vec(args: &[&str]) -> Vec<String> {
    let mut v = vec!["dect".to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    v
}

fn run(args: &[&str]) -> i32 {
    cli::run(arg_vec(args))
}

fn read_manifest(dir: &Path, command: &str) -> serde_json::Value {
    let raw = fs::read_to_string(dir.join(format!("manifest-{command}.json"))).unwrap();
    serde_json::from_str(&raw).unwrap()
}

#[test]
fn full_command_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let runs = dir.path().join("runs");
    let config = dir.path().join("dect.cfg");
    fs::write(
        &config,
        format!(
            "corpus.path = {}\ngateway.cache_dir = {}\neval.out_dir = {}\ntrain.epochs = 2\ntrain.seeds = 1\nencoder.dim = 16\nencoder.buckets = 512\n",
            corpus.display(),
            dir.path().join("cache").display(),
            runs.display(),
        ),
    )
    .unwrap();

    assert_eq!(
        run(&["ingest", "--input", "planted:20:5", "--output", corpus.to_str().unwrap()]),
        0
    );
    assert_eq!(
        run(&["extract", "--config", config.to_str().unwrap()]),
        0
    );
    let ingest_manifest = read_manifest(&dir.path().join("runs"), "ingest");
    assert_eq!(ingest_manifest["exit_status"], "success");
    let extract_manifest = read_manifest(&runs, "extract");
    assert_eq!(extract_manifest["exit_status"], "success");
    assert!(extract_manifest["config_hash"].as_str().unwrap().len() == 64);

    assert_eq!(
        run(&["augment", "--strategy", "lslp", "--config", config.to_str().unwrap()]),
        0
    );
    assert_eq!(
        run(&[
            "augment",
            "--strategy",
            "mimic",
            "--multiplicity",
            "1",
            "--config",
            config.to_str().unwrap()
        ]),
        0
    );
    assert!(dir.path().join("corpus.synthetic-lslp.jsonl").exists());
    assert!(dir.path().join("corpus.synthetic-mimic.jsonl").exists());

    assert_eq!(
        run(&["train", "--config", config.to_str().unwrap(), "--seed", "7"]),
        0
    );
    let model = runs.join("model-seed7.json");
    assert!(model.exists());
    let split = runs.join("split-test.jsonl");
    assert!(split.exists());

    assert_eq!(
        run(&[
            "evaluate",
            "--model",
            model.to_str().unwrap(),
            "--split",
            split.to_str().unwrap(),
            "--config",
            config.to_str().unwrap()
        ]),
        0
    );

    assert_eq!(run(&["ablate", "--config", config.to_str().unwrap()]), 0);
    assert!(runs.join("ablation-report.jsonl").exists());
    let report = fs::read_to_string(runs.join("ablation-report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 8);

    assert_eq!(run(&["compare", "--config", config.to_str().unwrap()]), 0);
    assert!(runs.join("strategy-report.jsonl").exists());
    let report = fs::read_to_string(runs.join("strategy-report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 4);

    let emb = runs.join("embeddings-synthetic.jsonl");
    assert!(emb.exists());
    let proj = runs.join("projection.csv");
    assert_eq!(
        run(&[
            "project",
            "--embeddings",
            emb.to_str().unwrap(),
            "--method",
            "pca",
            "--out",
            proj.to_str().unwrap()
        ]),
        0
    );
    let csv = fs::read_to_string(&proj).unwrap();
    assert!(csv.starts_with("id,x,y,label,strategy\n"));

    let tsne_out = runs.join("projection-tsne.csv");
    assert_eq!(
        run(&[
            "project",
            "--embeddings",
            emb.to_str().unwrap(),
            "--method",
            "tsne",
            "--out",
            tsne_out.to_str().unwrap(),
            "--seed",
            "3",
            "--perplexity",
            "5"
        ]),
        0
    );
    assert!(tsne_out.exists());

    for command in ["augment", "train", "evaluate", "ablate", "compare"] {
        let manifest = read_manifest(&runs, command);
        assert_eq!(manifest["exit_status"], "success", "{command}");
    }
}

#[test]
fn unknown_command_exits_2() {
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn seed_flag_overrides_config_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let runs = dir.path().join("runs");
    let config = dir.path().join("dect.cfg");
    fs::write(
        &config,
        format!(
            "corpus.path = {}\ngateway.cache_dir = {}\neval.out_dir = {}\ntrain.epochs = 1\ntrain.seeds = 1,2,3,4,5\nencoder.dim = 8\nencoder.buckets = 128\n",
            corpus.display(),
            dir.path().join("cache").display(),
            runs.display(),
        ),
    )
    .unwrap();
    assert_eq!(
        run(&["ingest", "--input", "planted:12:5", "--output", corpus.to_str().unwrap()]),
        0
    );
    assert_eq!(
        run(&["train", "--config", config.to_str().unwrap(), "--seed", "7"]),
        0
    );
    // Only the override seed ran.
    assert!(runs.join("model-seed7.json").exists());
    assert!(!runs.join("model-seed1.json").exists());
    let manifest = read_manifest(&runs, "train");
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
}

#[test]
fn config_errors_exit_1_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("dect.cfg");
    fs::write(&config, "corpus.path = x\ntrain.epcohs = 50\n").unwrap();
    assert_eq!(run(&["ablate", "--config", config.to_str().unwrap()]), 1);
    let manifest = read_manifest(&dir.path().join("runs"), "ablate");
    assert_eq!(manifest["config_hash"], "invalid-config");
    assert!(manifest["exit_status"]
        .as_str()
        .unwrap()
        .contains("train.epcohs"));
}

#[test]
fn http_provider_without_key_renders_remediation_hint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let config = dir.path().join("dect.cfg");
    std::env::remove_var("DECT_LLM_API_KEY");
    fs::write(
        &config,
        format!(
            "corpus.path = {}\ngateway.cache_dir = {}\ngateway.base_url = http://localhost:9\ngateway.backoff_ms = 1\neval.out_dir = {}\n",
            corpus.display(),
            dir.path().join("cache").display(),
            dir.path().join("runs").display(),
        ),
    )
    .unwrap();
    assert_eq!(
        run(&["ingest", "--input", "planted:4:1", "--output", corpus.to_str().unwrap()]),
        0
    );
    let code = run(&[
        "extract",
        "--provider",
        "http",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    let manifest = read_manifest(&dir.path().join("runs"), "extract");
    assert!(manifest["exit_status"]
        .as_str()
        .unwrap()
        .contains("provider unavailable"));
}

#[test]
fn rerunning_augment_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let config = dir.path().join("dect.cfg");
    fs::write(
        &config,
        format!(
            "corpus.path = {}\ngateway.cache_dir = {}\neval.out_dir = {}\n",
            corpus.display(),
            dir.path().join("cache").display(),
            dir.path().join("runs").display(),
        ),
    )
    .unwrap();
    assert_eq!(
        run(&["ingest", "--input", "planted:10:5", "--output", corpus.to_str().unwrap()]),
        0
    );
    assert_eq!(run(&["extract", "--config", config.to_str().unwrap()]), 0);
    let args = [
        "augment",
        "--strategy",
        "lslp",
        "--seed",
        "42",
        "--config",
        config.to_str().unwrap(),
    ];
    assert_eq!(run(&args), 0);
    let path = dir.path().join("corpus.synthetic-lslp.jsonl");
    let first = fs::read(&path).unwrap();
    assert_eq!(run(&args), 0);
    assert_eq!(first, fs::read(&path).unwrap());
}
