//! Response decoding with a recommendation-driven vocabulary bias.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemCatalog, TokenId, Vocabulary};
use crate::error::{CrsError, Result};
use crate::preference::RecommendationDistribution;

/// Additive bias over the extended vocabulary: zero on word tokens, the
/// recommendation probability of each item on its item token.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabBias {
    values: Vec<f64>,
    item_start: usize,
    total: f64,
}

impl VocabBias {
    pub fn zeros(vocab: &Vocabulary) -> Self {
        VocabBias {
            values: vec![0.0; vocab.len()],
            item_start: vocab.base_len(),
            total: 0.0,
        }
    }

    pub fn from_values(values: Vec<f64>, item_start: usize) -> Result<Self> {
        if values[..item_start.min(values.len())].iter().any(|v| *v != 0.0) {
            return Err(CrsError::Config("bias must be zero on word tokens".into()));
        }
        let total = values.iter().sum();
        Ok(VocabBias {
            values,
            item_start,
            total,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn item_start(&self) -> usize {
        self.item_start
    }

    pub fn is_item(&self, token: usize) -> bool {
        token >= self.item_start && token < self.values.len()
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// `b = [0; G(p_rec)]`, where `G` reads each catalog item's entity
/// probability in vocabulary item order. Unlinked items get 0.
pub fn build_bias(p_rec: &RecommendationDistribution, vocab: &Vocabulary, catalog: &ItemCatalog) -> Result<VocabBias> {
    vocab.check_aligned(catalog)?;
    let mut values = vec![0.0; vocab.len()];
    for (i, item) in catalog.items().iter().enumerate() {
        if let Some(e) = item.entity {
            if e.index() >= p_rec.probs().len() {
                return Err(CrsError::Misaligned(format!(
                    "item {} links to entity {} outside the distribution",
                    item.id, e.0
                )));
            }
            values[vocab.base_len() + i] = p_rec.prob(e);
        }
    }
    VocabBias::from_values(values, vocab.base_len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam,
    DiverseBeam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// `p' = (p + b) / (1 + Σb)`.
    Probability,
    /// `p' = softmax(logits + b)`.
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub groups: usize,
    pub length_penalty: f64,
    pub max_new_tokens: usize,
    /// The bias applies only when an item token is among this many most
    /// probable tokens.
    pub bias_trigger_k: usize,
    pub diversity_strength: f64,
    pub bias_mode: BiasMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::DiverseBeam,
            beam_size: 4,
            groups: 2,
            length_penalty: 1.0,
            max_new_tokens: 30,
            bias_trigger_k: 50,
            diversity_strength: 0.5,
            bias_mode: BiasMode::Probability,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_new_tokens == 0 || self.bias_trigger_k == 0 {
            return Err(CrsError::Config(
                "beam size, max new tokens and trigger k must be positive".into(),
            ));
        }
        if self.strategy == Strategy::DiverseBeam && (self.groups == 0 || self.beam_size % self.groups != 0) {
            return Err(CrsError::Config(format!(
                "groups {} must divide beam size {}",
                self.groups, self.beam_size
            )));
        }
        if !self.length_penalty.is_finite() || self.diversity_strength < 0.0 {
            return Err(CrsError::Config("invalid length penalty or diversity strength".into()));
        }
        Ok(())
    }
}

/// Source of next-token logits over the extended vocabulary.
pub trait StepScorer {
    /// `prefix` starts with BOS.
    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

impl<F> StepScorer for F
where
    F: FnMut(&[TokenId]) -> Result<Vec<f64>>,
{
    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self(prefix)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Token indices of the `k` largest probabilities, ties by lower id.
fn top_indices(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    let cmp = |a: &usize, b: &usize| p[*b].partial_cmp(&p[*a]).unwrap_or(Ordering::Equal).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Whether the bias fires for these unbiased probabilities.
pub fn bias_triggers(p: &[f64], bias: &VocabBias, k: usize) -> bool {
    top_indices(p, k).into_iter().any(|t| bias.is_item(t))
}

/// One step's adjusted distribution (as probabilities) and whether the
/// bias fired.
pub fn adjust_step(logits: &[f64], bias: Option<&VocabBias>, cfg: &DecodeConfig) -> (Vec<f64>, bool) {
    let p = softmax(logits);
    match bias {
        Some(b) if b.total() > 0.0 && bias_triggers(&p, b, cfg.bias_trigger_k) => {
            let adjusted = match cfg.bias_mode {
                BiasMode::Probability => {
                    let z = 1.0 + b.total();
                    p.iter().zip(b.values()).map(|(p, b)| (p + b) / z).collect()
                }
                BiasMode::Logit => {
                    let shifted: Vec<f64> = logits.iter().zip(b.values()).map(|(l, b)| l + b).collect();
                    softmax(&shifted)
                }
            };
            (adjusted, true)
        }
        _ => (p, false),
    }
}

/// Adjusted log-probabilities for search. Without an active bias this is
/// exactly `log_softmax(logits)`.
pub fn step_log_probs(logits: &[f64], bias: Option<&VocabBias>, cfg: &DecodeConfig) -> Vec<f64> {
    match bias {
        Some(b) if b.total() > 0.0 => {
            let (p, fired) = adjust_step(logits, Some(b), cfg);
            if !fired {
                return log_softmax(logits);
            }
            match cfg.bias_mode {
                BiasMode::Probability => p.into_iter().map(f64::ln).collect(),
                BiasMode::Logit => {
                    let shifted: Vec<f64> = logits.iter().zip(b.values()).map(|(l, b)| l + b).collect();
                    log_softmax(&shifted)
                }
            }
        }
        _ => log_softmax(logits),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens (no BOS); ends with EOS unless cut at the limit.
    pub tokens: Vec<TokenId>,
    /// Sum of step log-probabilities used by the search.
    pub log_prob: f64,
    /// `log_prob / len^length_penalty`.
    pub score: f64,
}

fn normalized(log_prob: f64, len: usize, length_penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(length_penalty)
}

pub fn decode(
    scorer: &mut dyn StepScorer,
    bias: Option<&VocabBias>,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Greedy => greedy(scorer, bias, cfg).map(|h| vec![h]),
        Strategy::Beam => search(scorer, bias, cfg, 1),
        Strategy::DiverseBeam => search(scorer, bias, cfg, cfg.groups),
    }
}

fn greedy(scorer: &mut dyn StepScorer, bias: Option<&VocabBias>, cfg: &DecodeConfig) -> Result<Hypothesis> {
    let mut prefix = vec![Vocabulary::BOS];
    let mut log_prob = 0.0;
    for _ in 0..cfg.max_new_tokens {
        let logits = scorer.next_logits(&prefix)?;
        let lp = step_log_probs(&logits, bias, cfg);
        let best = argmax(&lp);
        log_prob += lp[best];
        prefix.push(best as TokenId);
        if best as TokenId == Vocabulary::EOS {
            break;
        }
    }
    let tokens = prefix[1..].to_vec();
    let score = normalized(log_prob, tokens.len(), cfg.length_penalty);
    Ok(Hypothesis {
        tokens,
        log_prob,
        score,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
struct Beam {
    tokens: Vec<TokenId>,
    log_prob: f64,
}

struct Group {
    beams: Vec<Beam>,
    finished: Vec<Hypothesis>,
    size: usize,
}

impl Group {
    fn done(&self) -> bool {
        self.finished.len() >= self.size || self.beams.is_empty()
    }
}

/// Beam search split into `groups` groups. Each group keeps
/// `beam_size / groups` beams; a group's candidate tokens are penalized by
/// `diversity_strength` times the number of earlier groups that picked the
/// same token at this step. With one group this is plain beam search.
fn search(
    scorer: &mut dyn StepScorer,
    bias: Option<&VocabBias>,
    cfg: &DecodeConfig,
    groups: usize,
) -> Result<Vec<Hypothesis>> {
    let size = cfg.beam_size / groups;
    let mut state: Vec<Group> = (0..groups)
        .map(|_| Group {
            beams: vec![Beam {
                tokens: vec![Vocabulary::BOS],
                log_prob: 0.0,
            }],
            finished: Vec::new(),
            size,
        })
        .collect();

    for step in 0..cfg.max_new_tokens {
        let last = step + 1 == cfg.max_new_tokens;
        let mut picked_this_step: Vec<TokenId> = Vec::new();
        for group in state.iter_mut() {
            if group.done() {
                continue;
            }
            let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
            for (b, beam) in group.beams.iter().enumerate() {
                let logits = scorer.next_logits(&beam.tokens)?;
                let mut lp = step_log_probs(&logits, bias, cfg);
                for t in &picked_this_step {
                    lp[*t as usize] -= cfg.diversity_strength;
                }
                candidates.extend(lp.iter().enumerate().map(|(t, l)| (beam.log_prob + l, b, t as TokenId)));
            }
            candidates.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            candidates.truncate(2 * size);
            let mut next = Vec::with_capacity(size);
            for (rank, (cum, b, t)) in candidates.into_iter().enumerate() {
                let mut tokens = group.beams[b].tokens.clone();
                tokens.push(t);
                if t == Vocabulary::EOS {
                    // Only EOS candidates within the top `size` finish.
                    if rank < size && group.finished.len() < size {
                        let gen = tokens[1..].to_vec();
                        let score = normalized(cum, gen.len(), cfg.length_penalty);
                        group.finished.push(Hypothesis {
                            tokens: gen,
                            log_prob: cum,
                            score,
                        });
                    }
                    continue;
                }
                if next.len() < size {
                    picked_this_step.push(t);
                    next.push(Beam { tokens, log_prob: cum });
                }
            }
            group.beams = if group.finished.len() >= size { Vec::new() } else { next };
            if last {
                for beam in group.beams.drain(..) {
                    let gen = beam.tokens[1..].to_vec();
                    let score = normalized(beam.log_prob, gen.len(), cfg.length_penalty);
                    group.finished.push(Hypothesis {
                        tokens: gen,
                        log_prob: beam.log_prob,
                        score,
                    });
                }
            }
        }
        if state.iter().all(Group::done) {
            break;
        }
    }
    let mut out: Vec<Hypothesis> = state.into_iter().flat_map(|g| g.finished).collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    out.truncate(cfg.beam_size);
    Ok(out)
}
