//! Fusion of entity-level and contextual-level distributions, and ranking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::ItemCatalog;
use crate::error::{CrsError, Result};
use crate::kg::EntityId;
use crate::preference::RecommendationDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStartPolicy {
    /// Use the contextual distribution alone.
    ContextOnly,
    /// Treat the entity distribution as uniform over items and fuse.
    UniformEntity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mu: f64,
    pub lambda: f64,
    pub cold_start_policy: ColdStartPolicy,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mu: 0.5,
            lambda: 1.5,
            cold_start_policy: ColdStartPolicy::ContextOnly,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(CrsError::Config(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(CrsError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Which path produced a fused distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionBranch {
    Fused,
    ContextOnly,
    UniformEntity,
}

/// `p_rec = μ p_e + (1 − μ) p_c`. `p_e = None` marks a cold start.
pub fn fuse(
    p_e: Option<&RecommendationDistribution>,
    p_c: &RecommendationDistribution,
    cfg: &FusionConfig,
) -> Result<(RecommendationDistribution, FusionBranch)> {
    cfg.validate()?;
    let (p_e, branch) = match p_e {
        Some(p) => (p.clone(), FusionBranch::Fused),
        None => match cfg.cold_start_policy {
            ColdStartPolicy::ContextOnly => return Ok((p_c.clone(), FusionBranch::ContextOnly)),
            ColdStartPolicy::UniformEntity => (
                RecommendationDistribution::uniform(p_c.support().clone())?,
                FusionBranch::UniformEntity,
            ),
        },
    };
    if !p_e.same_support(p_c) {
        return Err(CrsError::SupportMismatch);
    }
    let mu = cfg.mu;
    let probs = p_e
        .probs()
        .iter()
        .zip(p_c.probs())
        .map(|(a, b)| {
            if mu == 1.0 {
                *a
            } else if mu == 0.0 {
                *b
            } else {
                mu * a + (1.0 - mu) * b
            }
        })
        .collect();
    Ok((RecommendationDistribution::new(probs, p_e.support().clone())?, branch))
}

/// Support entries ranked by descending probability; equal probabilities
/// are ordered by `tie_key`.
fn rank_by<K: Ord>(
    p: &RecommendationDistribution,
    k: usize,
    tie_key: impl Fn(EntityId) -> K,
) -> Vec<(EntityId, f64)> {
    let mut entries: Vec<(EntityId, f64)> = p
        .support()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(i, _)| (EntityId(i as u32), p.probs()[i]))
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| tie_key(a.0).cmp(&tie_key(b.0)))
    });
    entries.truncate(k);
    entries
}

/// Top `k` support entities, ties by ascending entity id. `k` larger than
/// the support returns the full ranking.
pub fn top_k(p: &RecommendationDistribution, k: usize) -> Vec<(EntityId, f64)> {
    rank_by(p, k, |e| e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub name: String,
    pub entity: EntityId,
    pub prob: f64,
}

/// Top `k` catalog items, ties by ascending item id.
pub fn top_k_items(p: &RecommendationDistribution, k: usize, catalog: &ItemCatalog) -> Vec<RankedItem> {
    let id_of = |e: EntityId| catalog.item_for_entity(e).map(|i| i.id.clone()).unwrap_or_default();
    rank_by(p, k, id_of)
        .into_iter()
        .filter_map(|(e, prob)| {
            catalog.item_for_entity(e).map(|item| RankedItem {
                item_id: item.id.clone(),
                name: item.name.clone(),
                entity: e,
                prob,
            })
        })
        .collect()
}
