use serde::{Deserialize, Serialize};

use super::{Conversation, ItemCatalog, Speaker, TokenId, Utterance, Vocabulary};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::preference::PreferenceHistory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleConfig {
    /// Maximum context length in tokens, separators included.
    pub max_len: usize,
    /// Include non-item entity mentions in the history.
    pub text_entities: bool,
    /// Keep only the latest occurrence of each entity in the history.
    pub dedup_history: bool,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        ExampleConfig {
            max_len: 256,
            text_entities: true,
            dedup_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub conversation_id: String,
    /// Index of the target utterance within its conversation.
    pub turn_index: usize,
    pub context_tokens: Vec<TokenId>,
    /// Response tokens followed by EOS.
    pub target_tokens: Vec<TokenId>,
    /// Items mentioned in the response, in order of first appearance.
    pub target_items: Vec<String>,
    pub history: PreferenceHistory,
    /// Item mentions in the full (untruncated) context.
    pub history_item_count: usize,
}

/// Entities appearing in `utterances`, in textual order. Item mentions map
/// through the catalog; unmapped items are ignored.
pub fn preference_history(
    utterances: &[Utterance],
    catalog: &ItemCatalog,
    kg: &KnowledgeGraph,
    cfg: &ExampleConfig,
) -> (PreferenceHistory, usize) {
    let mut entities = Vec::new();
    let mut item_count = 0;
    for utt in utterances {
        let mut found: Vec<(usize, EntityId)> = Vec::new();
        for m in &utt.item_mentions {
            item_count += 1;
            if let Some(e) = catalog.entity_of(&m.item_id) {
                found.push((m.span.start, e));
            }
        }
        if cfg.text_entities {
            for m in &utt.entity_mentions {
                if let Some(e) = kg.entity_id(&m.entity_id) {
                    found.push((m.span.start, e));
                }
            }
        }
        found.sort();
        entities.extend(found.into_iter().map(|(_, e)| e));
    }
    let mut history = PreferenceHistory::new(entities);
    if cfg.dedup_history {
        history = history.dedup_keep_latest();
    }
    (history, item_count)
}

/// Serializes utterances as `t_1 <eot> ... t_m <eot>`, dropping whole
/// utterances from the oldest side until the result fits `max_len`. A single
/// utterance that alone exceeds the limit keeps its last `max_len` tokens.
pub fn serialize_context(utterances: &[Utterance], vocab: &Vocabulary, max_len: usize) -> Vec<TokenId> {
    let pieces: Vec<Vec<TokenId>> = utterances
        .iter()
        .map(|u| {
            let mut t = vocab.encode_utterance(u);
            t.push(Vocabulary::EOT);
            t
        })
        .collect();
    let mut total: usize = pieces.iter().map(Vec::len).sum();
    let mut first = 0;
    while total > max_len && first + 1 < pieces.len() {
        total -= pieces[first].len();
        first += 1;
    }
    let mut out: Vec<TokenId> = pieces[first..].concat();
    if out.len() > max_len {
        out.drain(..out.len() - max_len);
    }
    out
}

/// One example per recommender utterance that has at least one token and
/// at least one preceding utterance.
pub fn build_examples(
    conversations: &[Conversation],
    catalog: &ItemCatalog,
    vocab: &Vocabulary,
    kg: &KnowledgeGraph,
    cfg: &ExampleConfig,
) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for conv in conversations {
        for (turn, utt) in conv.utterances.iter().enumerate() {
            if utt.speaker != Speaker::Recommender || turn == 0 {
                continue;
            }
            let mut target_tokens = vocab.encode_utterance(utt);
            if target_tokens.is_empty() {
                continue;
            }
            target_tokens.push(Vocabulary::EOS);
            let mut target_items: Vec<String> = Vec::new();
            for m in &utt.item_mentions {
                if !target_items.contains(&m.item_id) {
                    target_items.push(m.item_id.clone());
                }
            }
            let prior = &conv.utterances[..turn];
            let (history, history_item_count) = preference_history(prior, catalog, kg, cfg);
            out.push(TrainingExample {
                conversation_id: conv.id.clone(),
                turn_index: turn,
                context_tokens: serialize_context(prior, vocab, cfg.max_len),
                target_tokens,
                target_items,
                history,
                history_item_count,
            });
        }
    }
    out
}
