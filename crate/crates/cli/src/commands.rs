//! The work behind each subcommand, callable without a process boundary.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::info;

use crs_core::checkpoint::{load_model, save_model};
use crs_core::corpus::synthetic::{generate, SyntheticConfig};
use crs_core::corpus::{load_opendialkg, load_redial, read_canonical, LoadedCorpus, Split, TrainingExample};
use crs_core::dataset::{prepare, DatasetKind, PrepareStats, PreparedData};
use crs_core::evaluation::KneserNeyLm;
use crs_core::kg::AliasIndex;
use crs_core::report::{self, EvalReport};
use crs_core::training::{self, TrainHooks, TrainReport};
use crs_core::{CrsError, CrsModel, KnowledgeGraph, Result, TrainState};

use crate::config::RunConfig;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CrsError + '_ {
    move |e| CrsError::io(path, e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, body).map_err(io_err(path))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn load_corpus(kind: DatasetKind, path: &Path) -> Result<LoadedCorpus> {
    match kind {
        DatasetKind::Redial => load_redial(path),
        DatasetKind::Opendialkg => load_opendialkg(path),
        DatasetKind::Canonical => {
            let conversations = read_canonical(path)?;
            // Canonical files carry no display names; items are named by id.
            let item_names: BTreeMap<String, String> = conversations
                .iter()
                .flat_map(|c| &c.utterances)
                .flat_map(|u| &u.item_mentions)
                .map(|m| (m.item_id.clone(), m.item_id.clone()))
                .collect();
            Ok(LoadedCorpus {
                conversations,
                item_names,
                skipped: 0,
            })
        }
    }
}

/// Reads the raw corpus, graph and aliases, links them and writes the
/// prepared dataset plus a config echo.
pub fn preprocess(cfg: &RunConfig) -> Result<PrepareStats> {
    let corpus = load_corpus(cfg.dataset, &cfg.corpus)?;
    let kg = KnowledgeGraph::load_triples(&cfg.kg, cfg.inverse_relations)?;
    let mut aliases = AliasIndex::from_entity_names(&kg);
    if let Some(path) = &cfg.aliases {
        let skipped = aliases.load_tsv(path, &kg)?;
        info!(total = aliases.len(), skipped, "aliases loaded");
    }
    let data = prepare(corpus, kg, aliases, &HashMap::new(), &cfg.vocab())?;
    data.save(&cfg.prepared_dir)?;
    cfg.echo(&cfg.prepared_dir)?;
    Ok(data.stats)
}

/// Writes a synthetic corpus in the ReDial release format together with
/// its triples and aliases.
pub fn synth(dir: &Path, conversations: usize, seed: u64, cold_start_fraction: f64) -> Result<()> {
    let corpus = generate(&SyntheticConfig {
        conversations,
        seed,
        cold_start_fraction,
        ..Default::default()
    });
    corpus.write_to_dir(dir)
}

fn examples(data: &PreparedData, split: Split, cfg: &RunConfig) -> Vec<TrainingExample> {
    data.examples(split, &cfg.examples())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub state: TrainState,
    pub best_epoch: Option<usize>,
    pub best_recall: Option<f64>,
    pub epochs_run: usize,
}

/// Trains from scratch, or continues from `cfg.checkpoint` when `resume`
/// is set and the file exists. The checkpoint is rewritten whenever the
/// validation recall improves and once more at the end.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = PreparedData::load(&cfg.prepared_dir)?;
    let (mut model, start) = if resume && cfg.checkpoint.exists() {
        let (model, state) = load_model(&cfg.checkpoint)?;
        info!(epoch = state.epoch, step = state.step, "resuming");
        (model, state)
    } else {
        let model = CrsModel::new(
            cfg.model(),
            data.kg.clone(),
            data.aliases.clone(),
            data.catalog.clone(),
            data.vocab.clone(),
            cfg.seed,
        )?;
        (model, TrainState::default())
    };
    let train_set = examples(&data, Split::Train, cfg);
    let valid_set = examples(&data, Split::Valid, cfg);

    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let metrics_path = cfg.output_dir.join("metrics.jsonl");
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(start.step > 0)
        .write(true)
        .truncate(start.step == 0)
        .open(&metrics_path)
        .map_err(io_err(&metrics_path))?;
    let ckpt = cfg.checkpoint.clone();
    let mut save = |m: &CrsModel, s: TrainState| save_model(m, s, &ckpt);
    let report: TrainReport = training::train(
        &mut model,
        &train_set,
        &valid_set,
        &cfg.train(),
        &cfg.fusion(),
        start,
        TrainHooks {
            metrics: Some(&mut metrics),
            on_checkpoint: Some(&mut save),
        },
    )?;
    save_model(&model, report.state, &cfg.checkpoint)?;
    cfg.echo(parent_dir(&cfg.checkpoint))?;
    cfg.echo(&cfg.output_dir)?;
    if report.clamped > 0 {
        info!(clamped = report.clamped, "target probabilities were clamped");
    }
    Ok(TrainSummary {
        checkpoint: cfg.checkpoint.clone(),
        metrics: metrics_path,
        state: report.state,
        best_epoch: report.best_epoch,
        best_recall: report.best_recall,
        epochs_run: report.epochs.len(),
    })
}

fn eval_examples(data: &PreparedData, cfg: &RunConfig) -> Vec<TrainingExample> {
    let mut ex = examples(data, cfg.eval_split, cfg);
    if let Some(n) = cfg.eval_limit {
        ex.truncate(n);
    }
    ex
}

/// Reference-trained language model used for perplexity.
fn reference_lm(model: &CrsModel, data: &PreparedData, cfg: &RunConfig) -> Result<KneserNeyLm> {
    let refs: Vec<Vec<String>> = examples(data, Split::Train, cfg)
        .iter()
        .map(|ex| report::reference_words(model, ex))
        .collect();
    KneserNeyLm::train(&refs, cfg.lm_order)
}

/// Recommendation metrics, and generation metrics when enabled.
pub fn evaluate(cfg: &RunConfig, model: &CrsModel, data: &PreparedData) -> Result<(EvalReport, Vec<report::GeneratedOutput>)> {
    let ex = eval_examples(data, cfg);
    if ex.is_empty() {
        return Err(CrsError::Empty(format!("no {:?} examples to evaluate", cfg.eval_split)));
    }
    let fusion = cfg.fusion();
    let mut rep = report::evaluate_recommendation(model, &ex, &fusion, cfg.dataset.recall_cutoffs(), cfg.exclude_seen)?;
    let mut outputs = Vec::new();
    if cfg.generate {
        let generated = report::generate_outputs(model, &ex, &fusion, &cfg.decode(), cfg.exclude_seen)?;
        let refs: Vec<Vec<String>> = ex.iter().map(|e| report::reference_words(model, e)).collect();
        let hyps: Vec<Vec<String>> = generated.iter().map(|(_, w)| w.clone()).collect();
        let lm = reference_lm(model, data, cfg)?;
        rep.generation = report::generation_report(&hyps, &refs, Some(&lm))?;
        outputs = generated.into_iter().map(|(o, _)| o).collect();
    }
    Ok((rep, outputs))
}

pub fn write_outputs(path: &Path, outputs: &[report::GeneratedOutput]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for o in outputs {
        writeln!(w, "{}", serde_json::to_string(o).expect("serializable")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Evaluates the checkpoint and writes `eval_report.json`, the generated
/// outputs and a config echo under the output directory.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let (model, _) = load_model(&cfg.checkpoint)?;
    let data = PreparedData::load(&cfg.prepared_dir)?;
    let (rep, outputs) = evaluate(cfg, &model, &data)?;
    write_json(&cfg.output_dir.join("eval_report.json"), &rep)?;
    if cfg.generate {
        write_outputs(&cfg.output_dir.join("outputs.jsonl"), &outputs)?;
    }
    cfg.echo(&cfg.output_dir)?;
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Mu,
    LengthPenalty,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "mu" => Ok(SweepParam::Mu),
            "length_penalty" | "length-penalty" => Ok(SweepParam::LengthPenalty),
            other => Err(CrsError::Config(format!("cannot sweep {other:?}"))),
        }
    }

    fn set(self, cfg: &mut RunConfig, v: f64) {
        match self {
            SweepParam::Lambda => cfg.lambda = v,
            SweepParam::Mu => cfg.mu = v,
            SweepParam::LengthPenalty => cfg.length_penalty = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub report: EvalReport,
}

/// One evaluation per grid value. Fusion parameters can either be applied
/// to the trained checkpoint as is, or, with `retrain`, used to train a
/// fresh model per value. Length penalty only affects decoding.
pub fn sweep(cfg: &RunConfig, param: SweepParam, grid: &[f64], retrain: bool) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(CrsError::Config("empty sweep grid".into()));
    }
    let data = PreparedData::load(&cfg.prepared_dir)?;
    let base = if retrain { None } else { Some(load_model(&cfg.checkpoint)?.0) };
    let mut rows = Vec::with_capacity(grid.len());
    for &v in grid {
        let mut c = cfg.clone();
        param.set(&mut c, v);
        if param != SweepParam::LengthPenalty {
            c.generate = false;
        }
        c.validate()?;
        let report = match &base {
            Some(model) => evaluate(&c, model, &data)?.0,
            None => {
                c.checkpoint = cfg.output_dir.join(format!("sweep-{v}.ckpt"));
                train(&c, false)?;
                let (model, _) = load_model(&c.checkpoint)?;
                evaluate(&c, &model, &data)?.0
            }
        };
        info!(?param, value = v, "sweep point done");
        rows.push(SweepRow { param, value: v, report });
    }
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let path = cfg.output_dir.join("sweep.jsonl");
    let body: String = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
        .collect();
    fs::write(&path, body).map_err(io_err(&path))?;
    cfg.echo(&cfg.output_dir)?;
    Ok(rows)
}

/// Tab-separated table: the swept value followed by every metric.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let keys: Vec<&String> = first.report.recall.keys().chain(first.report.generation.keys()).collect();
    let name = serde_json::to_value(first.param).expect("serializable");
    let mut out = format!("{}", name.as_str().unwrap_or("value"));
    for k in &keys {
        out.push('\t');
        out.push_str(k);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.value.to_string());
        for k in &keys {
            let v = r.report.recall.get(*k).or_else(|| r.report.generation.get(*k)).copied();
            out.push_str(&format!("\t{:.2}", v.unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}
