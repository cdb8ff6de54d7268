use std::fs;
use std::path::Path;
use std::process::Command;

use crs_cli::commands::{self, SweepParam};
use crs_cli::config::ECHO_NAME;
use crs_cli::RunConfig;
use crs_core::checkpoint::load_model;
use crs_core::dataset::{DatasetKind, PreparedData};
use crs_core::report::EvalReport;
use crs_core::{CrsError, CrsModel, TrainState};

const TINY: &str = r#"
d_model = 16
heads = 2
ffn_dim = 32
encoder_layers = 1
decoder_layers = 1
max_positions = 64
rgcn_dim = 8
max_context_len = 48
epochs = 1
warmup_updates = 5
max_tokens_per_batch = 512
update_frequency = 1
eval_limit = 20
max_new_tokens = 8
lm_order = 2
"#;

/// Synthetic raw data plus a tiny config rooted at `dir`.
fn workspace(dir: &Path) -> RunConfig {
    commands::synth(&dir.join("raw"), 60, 3, 0.25).unwrap();
    let mut cfg = RunConfig::from_toml(TINY).unwrap();
    cfg.aliases = Some("raw/aliases.tsv".into());
    cfg.resolve_paths(Some(dir));
    cfg
}

fn prepared(dir: &Path) -> RunConfig {
    let cfg = workspace(dir);
    commands::preprocess(&cfg).unwrap();
    cfg
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn preprocess_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    let first = files(&cfg.prepared_dir);
    cfg.prepared_dir = tmp.path().join("again");
    commands::preprocess(&cfg).unwrap();
    let mut second = files(&cfg.prepared_dir);
    // The echoed config names its own output directory.
    for (name, body) in second.iter_mut() {
        if name == ECHO_NAME {
            *body = first.iter().find(|(n, _)| n == ECHO_NAME).unwrap().1.clone();
        }
    }
    assert_eq!(first, second);
    assert!(first.iter().any(|(n, _)| n == "conversations.jsonl"));
}

#[test]
fn preprocess_rejects_an_empty_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = workspace(tmp.path());
    fs::write(&cfg.corpus, "").unwrap();
    assert!(matches!(commands::preprocess(&cfg), Err(CrsError::Empty(_))));
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    cfg.epochs = 0;
    let summary = commands::train(&cfg, false).unwrap();
    assert_eq!(summary.state, TrainState::default());

    let (saved, _) = load_model(&cfg.checkpoint).unwrap();
    let data = PreparedData::load(&cfg.prepared_dir).unwrap();
    let fresh = CrsModel::new(cfg.model(), data.kg, data.aliases, data.catalog, data.vocab, cfg.seed).unwrap();
    let dump = |m: &CrsModel| serde_json::to_string(&m.store.export_prefix("")).unwrap();
    assert_eq!(dump(&saved), dump(&fresh));
}

#[test]
fn resume_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    let first = commands::train(&cfg, false).unwrap();
    assert_eq!(first.state.epoch, 1);
    cfg.epochs = 2;
    let second = commands::train(&cfg, true).unwrap();
    assert_eq!(second.epochs_run, 1);
    assert_eq!(second.state.epoch, 2);
    assert_eq!(second.state.step, 2 * first.state.step);

    let steps: Vec<usize> = fs::read_to_string(&second.metrics)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap() as usize)
        .collect();
    assert_eq!(steps, (1..=second.state.step).collect::<Vec<_>>());
}

#[test]
fn eval_report_round_trips_and_follows_the_dataset_cutoffs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    commands::train(&cfg, false).unwrap();

    cfg.eval_limit = Some(10);
    let report = commands::eval(&cfg).unwrap();
    let keys: Vec<&str> = report.recall.keys().map(String::as_str).collect();
    assert_eq!(keys, ["recall@1", "recall@10", "recall@50"]);
    for k in ["dist-2", "bleu-2", "bleu-4", "ppl"] {
        assert!(report.generation.contains_key(k), "missing {k}");
    }
    let text = fs::read_to_string(cfg.output_dir.join("eval_report.json")).unwrap();
    assert_eq!(serde_json::from_str::<EvalReport>(&text).unwrap(), report);
    let outputs = fs::read_to_string(cfg.output_dir.join("outputs.jsonl")).unwrap();
    assert_eq!(outputs.lines().count(), 10);

    cfg.dataset = DatasetKind::Opendialkg;
    cfg.generate = false;
    let report = commands::eval(&cfg).unwrap();
    let mut keys: Vec<usize> = report
        .recall
        .keys()
        .map(|k| k.trim_start_matches("recall@").parse().unwrap())
        .collect();
    keys.sort();
    assert_eq!(keys, [1, 3, 5, 10, 25]);
    assert!(report.generation.is_empty());
}

#[test]
fn sweep_has_one_row_per_grid_value() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    cfg.generate = false;
    commands::train(&cfg, false).unwrap();

    let one = commands::sweep(&cfg, SweepParam::Mu, &[0.5], false).unwrap();
    assert_eq!(one.len(), 1);
    let grid = [0.5, 1.0, 1.5, 2.0, 3.0];
    let rows = commands::sweep(&cfg, SweepParam::Lambda, &grid, false).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), grid);
    let table = commands::sweep_table(&rows);
    assert_eq!(table.lines().count(), grid.len() + 1);
    assert!(table.starts_with("lambda\t"));
    let lines = fs::read_to_string(cfg.output_dir.join("sweep.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), grid.len());
    assert!(commands::sweep(&cfg, SweepParam::Lambda, &[], false).is_err());
}

#[test]
fn effective_config_is_echoed_beside_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = prepared(tmp.path());
    cfg.lambda = 2.5;
    commands::train(&cfg, false).unwrap();
    for dir in [&cfg.prepared_dir, &cfg.output_dir] {
        let echoed = RunConfig::load(dir.join(ECHO_NAME)).unwrap();
        assert_eq!(echoed.rgcn_dim, 8);
    }
    let echoed = RunConfig::load(cfg.output_dir.join(ECHO_NAME)).unwrap();
    assert_eq!(echoed, cfg);
}

fn crs(args: &[&str], data_dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_crs"))
        .args(args)
        .env("CRS_DATA_DIR", data_dir)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

#[test]
fn binary_runs_the_pipeline_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = dir.join("run.toml");
    fs::write(&config, format!("{TINY}aliases = \"raw/aliases.tsv\"\n")).unwrap();
    let config = config.to_str().unwrap();

    assert!(crs(&["synth", "--out", dir.join("raw").to_str().unwrap(), "--conversations", "40"], dir).status.success());
    assert!(crs(&["preprocess", "--config", config], dir).status.success());
    let out = crs(&["train", "--config", config, "--epochs", "0", "--lambda", "2", "--variant", "entity-timea"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["state"]["step"], 0);

    let echoed = RunConfig::load(dir.join("runs").join(ECHO_NAME)).unwrap();
    assert_eq!(echoed.lambda, 2.0);
    assert_eq!(echoed.variant.name(), "entity-timea");
    assert_eq!(echoed.prepared_dir, dir.join("prepared"));
}

#[test]
fn binary_fails_with_a_one_line_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad = dir.join("bad.toml");
    fs::write(&bad, "lamda = 1.0\n").unwrap();
    for args in [
        vec!["train", "--config", bad.to_str().unwrap()],
        vec!["eval", "--config", "missing.toml"],
        vec!["train", "--mu", "1.5"],
        vec!["sweep", "--param", "gamma", "--grid", "1"],
    ] {
        let out = crs(&args, dir);
        assert!(!out.status.success(), "{args:?} succeeded");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(stderr.trim_end().lines().count(), 1, "{args:?}: {stderr}");
        assert!(stderr.starts_with("error: "), "{stderr}");
    }
}
