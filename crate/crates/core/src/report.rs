//! Batch inference over examples and the evaluation report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{RenderMode, TokenId, TrainingExample, Vocabulary};
use crate::error::{CrsError, Result};
use crate::evaluation::{self, BucketRecall, KneserNeyLm, RecEvalInstance};
use crate::generator::DecodeConfig;
use crate::model::CrsModel;
use crate::nn::Mat;
use crate::recommender::{self, FusionConfig, RankedItem};

/// Items kept per ranking; enough for every reported cutoff.
pub const RANK_DEPTH: usize = 100;

fn table_for(model: &CrsModel) -> Result<Mat> {
    if model.config.variant.uses_entities() {
        model.entity_table()
    } else {
        Ok(model.empty_table())
    }
}

/// Ranked items for one example. With `exclude_seen`, entities already in
/// the history are removed before ranking.
pub fn rank_example(
    model: &CrsModel,
    table: &Mat,
    ex: &TrainingExample,
    fusion: &FusionConfig,
    exclude_seen: bool,
    depth: usize,
) -> Result<Vec<RankedItem>> {
    let rec = model.recommend(table, &ex.context_tokens, &ex.history, fusion)?;
    let p = if exclude_seen {
        rec.p_rec.exclude(ex.history.entities())
    } else {
        rec.p_rec
    };
    Ok(recommender::top_k_items(&p, depth, &model.catalog))
}

/// One instance per (example, linked target item).
pub fn rec_instances(
    model: &CrsModel,
    examples: &[TrainingExample],
    fusion: &FusionConfig,
    exclude_seen: bool,
) -> Result<Vec<RecEvalInstance>> {
    let table = table_for(model)?;
    let per_example: Vec<Result<Vec<RecEvalInstance>>> = examples
        .par_iter()
        .map(|ex| {
            let targets: Vec<&String> = ex
                .target_items
                .iter()
                .filter(|id| model.catalog.entity_of(id).is_some_and(|e| model.support()[e.index()]))
                .collect();
            if targets.is_empty() {
                return Ok(Vec::new());
            }
            let ranked: Vec<String> = rank_example(model, &table, ex, fusion, exclude_seen, RANK_DEPTH)?
                .into_iter()
                .map(|r| r.item_id)
                .collect();
            Ok(targets
                .into_iter()
                .map(|t| RecEvalInstance {
                    ranked: ranked.clone(),
                    target: t.clone(),
                    history_length: ex.history_item_count,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_example {
        out.extend(r?);
    }
    Ok(out)
}

/// One line of the model-output interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedOutput {
    pub context_id: String,
    pub generated_text: String,
    pub ranked_items: Vec<String>,
}

/// Generated text, decoded with the recommendation bias, for each example.
/// The second element holds the plain-word renderings used for metrics.
pub fn generate_outputs(
    model: &CrsModel,
    examples: &[TrainingExample],
    fusion: &FusionConfig,
    decode: &DecodeConfig,
    exclude_seen: bool,
) -> Result<Vec<(GeneratedOutput, Vec<String>)>> {
    decode.validate()?;
    let table = table_for(model)?;
    examples
        .par_iter()
        .map(|ex| {
            let rec = model.recommend(&table, &ex.context_tokens, &ex.history, fusion)?;
            let p = if exclude_seen {
                rec.p_rec.exclude(ex.history.entities())
            } else {
                rec.p_rec
            };
            let ranked = recommender::top_k_items(&p, 10, &model.catalog);
            let bias = model.build_bias(&p)?;
            let hyps = model.generate(&ex.context_tokens, Some(&bias), decode)?;
            let best = hyps.first().map(|h| h.tokens.clone()).unwrap_or_default();
            let text = model.vocab.decode(&best, &model.catalog, RenderMode::Names).text;
            let words = token_words(model, &best);
            Ok((
                GeneratedOutput {
                    context_id: format!("{}:{}", ex.conversation_id, ex.turn_index),
                    generated_text: text,
                    ranked_items: ranked.into_iter().map(|r| r.item_id).collect(),
                },
                words,
            ))
        })
        .collect()
}

/// Metric tokens of a decoded sequence: words as they are, items as
/// `@id` markers, stopping at EOS and skipping other specials.
pub fn token_words(model: &CrsModel, tokens: &[TokenId]) -> Vec<String> {
    let vocab = &model.vocab;
    tokens
        .iter()
        .take_while(|t| **t != Vocabulary::EOS)
        .filter(|t| **t == Vocabulary::UNK || **t > Vocabulary::EOT)
        .map(|t| match vocab.item_of(*t) {
            Some(i) => format!("@{}", vocab.item_ids()[i]),
            None => vocab.token_str(*t).to_lowercase(),
        })
        .collect()
}

/// Metric tokens of an example's reference response.
pub fn reference_words(model: &CrsModel, ex: &TrainingExample) -> Vec<String> {
    token_words(model, &ex.target_tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub instances: usize,
    /// `"recall@k"` → percentage.
    pub recall: BTreeMap<String, f64>,
    /// Recall at the largest cutoff by history-length bucket.
    pub cold_start: BTreeMap<usize, BucketRecall>,
    pub cold_start_k: usize,
    /// `"dist-n"` / `"bleu-n"` / `"ppl"` → value; empty when generation was
    /// skipped.
    pub generation: BTreeMap<String, f64>,
}

pub fn recall_report(
    instances: &[RecEvalInstance],
    cutoffs: &[usize],
) -> Result<(BTreeMap<String, f64>, BTreeMap<usize, BucketRecall>, usize)> {
    let mut recall = BTreeMap::new();
    for k in cutoffs {
        recall.insert(format!("recall@{k}"), evaluation::recall_at_k(instances, *k)?);
    }
    let k = *cutoffs.iter().max().ok_or_else(|| CrsError::Config("no recall cutoffs".into()))?;
    Ok((recall, evaluation::recall_by_history_length(instances, k), k))
}

/// Distinct-n, BLEU and n-gram perplexity of generated word sequences.
pub fn generation_report(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    lm: Option<&KneserNeyLm>,
) -> Result<BTreeMap<String, f64>> {
    if hyps.len() != refs.len() {
        return Err(CrsError::Misaligned(format!(
            "{} generated responses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut out = BTreeMap::new();
    for n in [2, 3, 4] {
        out.insert(format!("dist-{n}"), evaluation::dist_n(hyps, n));
    }
    let pairs: Vec<(Vec<String>, Vec<String>)> = hyps.iter().cloned().zip(refs.iter().cloned()).collect();
    for n in [2, 4] {
        out.insert(format!("bleu-{n}"), evaluation::bleu_n(&pairs, n)?);
    }
    if let Some(lm) = lm {
        out.insert("ppl".into(), evaluation::ngram_ppl(hyps, lm)?);
    }
    Ok(out)
}

/// Recall-only report, the shape used during training and sweeps.
pub fn evaluate_recommendation(
    model: &CrsModel,
    examples: &[TrainingExample],
    fusion: &FusionConfig,
    cutoffs: &[usize],
    exclude_seen: bool,
) -> Result<EvalReport> {
    let instances = rec_instances(model, examples, fusion, exclude_seen)?;
    let (recall, cold_start, cold_start_k) = recall_report(&instances, cutoffs)?;
    Ok(EvalReport {
        variant: model.config.variant.name().to_string(),
        instances: instances.len(),
        recall,
        cold_start,
        cold_start_k,
        generation: BTreeMap::new(),
    })
}
