//! Entity-level user preference: history summaries and the masked entity
//! distribution.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::kg::EntityId;
use crate::nn::{Graph, Mat, Var};

/// Entities in order of appearance, earliest first. Repeats are kept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceHistory(Vec<EntityId>);

impl PreferenceHistory {
    pub fn new(entities: Vec<EntityId>) -> Self {
        PreferenceHistory(entities)
    }

    pub fn entities(&self) -> &[EntityId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, e: EntityId) {
        self.0.push(e);
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|e| e.index()).collect()
    }

    /// Keeps each entity once, at its latest position.
    pub fn dedup_keep_latest(&self) -> Self {
        let mut out: Vec<EntityId> = Vec::with_capacity(self.0.len());
        for (i, e) in self.0.iter().enumerate() {
            if !self.0[i + 1..].contains(e) {
                out.push(*e);
            }
        }
        PreferenceHistory(out)
    }

    pub fn reversed(&self) -> Self {
        PreferenceHistory(self.0.iter().rev().copied().collect())
    }
}

/// How a history is reduced to one preference vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Summarizer {
    /// Geometric recency weights with ratio `lambda`.
    TimeAware { lambda: f64 },
    /// Softmax over learned per-entity scores.
    SelfAttention,
}

/// Weights `λ^{i-1} / Σ_j λ^{j-1}` for positions `1..=len`, computed as
/// `λ^{i-len}` so the largest term is 1.
pub fn time_aware_weights(len: usize, lambda: f64) -> Vec<f64> {
    let raw: Vec<f64> = if lambda >= 1.0 {
        (0..len).map(|i| lambda.powi(i as i32 - (len as i32 - 1))).collect()
    } else {
        (0..len).map(|i| lambda.powi(i as i32)).collect()
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn check_history(history: &PreferenceHistory, table: &Mat) -> Result<()> {
    if history.is_empty() {
        return Err(CrsError::ColdStart);
    }
    if let Some(e) = history.entities().iter().find(|e| e.index() >= table.nrows()) {
        return Err(CrsError::Shape(format!(
            "history entity {} outside table of {} rows",
            e.0,
            table.nrows()
        )));
    }
    Ok(())
}

pub fn time_aware_summary(history: &PreferenceHistory, table: &Mat, lambda: f64) -> Result<Array1<f64>> {
    if !(lambda > 0.0) {
        return Err(CrsError::Config(format!("lambda must be positive, got {lambda}")));
    }
    check_history(history, table)?;
    let weights = time_aware_weights(history.len(), lambda);
    let mut out = Array1::zeros(table.ncols());
    for (w, e) in weights.iter().zip(history.entities()) {
        out.scaled_add(*w, &table.row(e.index()));
    }
    Ok(out)
}

/// Convex combination of history embeddings with weights
/// `softmax(h_i · a)` for a learned scoring vector `a`.
pub fn self_attention_summary(
    history: &PreferenceHistory,
    table: &Mat,
    scorer: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_history(history, table)?;
    let weights = self_attention_weights(history, table, scorer);
    let mut out = Array1::zeros(table.ncols());
    for (w, e) in weights.iter().zip(history.entities()) {
        out.scaled_add(*w, &table.row(e.index()));
    }
    Ok(out)
}

pub fn self_attention_weights(history: &PreferenceHistory, table: &Mat, scorer: ArrayView1<f64>) -> Vec<f64> {
    let scores: Vec<f64> = history
        .entities()
        .iter()
        .map(|e| table.row(e.index()).dot(&scorer))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / total).collect()
}

/// Differentiable history summary inside a graph. `table` is `[|E|, d]`,
/// `scorer` (self-attention only) is a `[1, d]` row. Returns a `[1, d]` row.
pub fn summary_var(
    g: &mut Graph,
    table: Var,
    history: &PreferenceHistory,
    summarizer: Summarizer,
    scorer: Option<Var>,
) -> Result<Var> {
    if history.is_empty() {
        return Err(CrsError::ColdStart);
    }
    let rows = g.gather(table, &history.indices());
    let weights = match summarizer {
        Summarizer::TimeAware { lambda } => {
            let w = time_aware_weights(history.len(), lambda);
            g.constant(Array2::from_shape_vec((1, w.len()), w).expect("row shape"))
        }
        Summarizer::SelfAttention => {
            let a = scorer.ok_or_else(|| CrsError::Config("self-attention needs a scoring vector".into()))?;
            let scores = g.matmul_t(a, rows);
            g.softmax(scores)
        }
    };
    Ok(g.matmul(weights, rows))
}

/// Probability vector over entities with an item support mask. Off-support
/// entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationDistribution {
    probs: Vec<f64>,
    support: Arc<[bool]>,
}

impl RecommendationDistribution {
    pub fn new(probs: Vec<f64>, support: Arc<[bool]>) -> Result<Self> {
        if probs.len() != support.len() {
            return Err(CrsError::Shape(format!(
                "{} probabilities for a support of {}",
                probs.len(),
                support.len()
            )));
        }
        Ok(RecommendationDistribution { probs, support })
    }

    /// Masked softmax of raw scores.
    pub fn from_logits(logits: &[f64], support: Arc<[bool]>) -> Result<Self> {
        let probs = masked_softmax(logits, &support)?;
        Self::new(probs, support)
    }

    /// Uniform over the support.
    pub fn uniform(support: Arc<[bool]>) -> Result<Self> {
        Self::from_logits(&vec![0.0; support.len()], support)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> &Arc<[bool]> {
        &self.support
    }

    pub fn prob(&self, e: EntityId) -> f64 {
        self.probs[e.index()]
    }

    pub fn same_support(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.support, &other.support) || self.support == other.support
    }

    /// Zeroes the given entities and renormalizes; leaves the distribution
    /// alone if that would remove all mass.
    pub fn exclude(&self, entities: &[EntityId]) -> Self {
        let mut probs = self.probs.clone();
        for e in entities {
            probs[e.index()] = 0.0;
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return self.clone();
        }
        probs.iter_mut().for_each(|p| *p /= total);
        RecommendationDistribution {
            probs,
            support: self.support.clone(),
        }
    }
}

/// Softmax with masked-out entries fixed at exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(CrsError::Shape(format!("{} logits for a mask of {}", logits.len(), mask.len())));
    }
    if !mask.iter().any(|m| *m) {
        return Err(CrsError::Config("item mask selects no entity".into()));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Additive mask row: 0 on the support, `-inf` elsewhere.
pub fn mask_row(mask: &[bool]) -> Mat {
    Array2::from_shape_fn((1, mask.len()), |(_, j)| if mask[j] { 0.0 } else { f64::NEG_INFINITY })
}

/// `p_e = softmax(mask(h · Hᵀ))`.
pub fn entity_scores(
    summary: ArrayView1<f64>,
    table: &Mat,
    support: Arc<[bool]>,
) -> Result<RecommendationDistribution> {
    if summary.len() != table.ncols() {
        return Err(CrsError::Shape(format!(
            "summary of width {} against table of width {}",
            summary.len(),
            table.ncols()
        )));
    }
    if table.nrows() != support.len() {
        return Err(CrsError::Shape(format!(
            "table has {} rows but mask has {}",
            table.nrows(),
            support.len()
        )));
    }
    let logits = table.dot(&summary).to_vec();
    RecommendationDistribution::from_logits(&logits, support)
}
