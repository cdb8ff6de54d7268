//! Conversation data model, dataset loaders and example construction.

mod canonical;
mod catalog;
mod examples;
mod opendialkg;
mod redial;
pub mod synthetic;
mod tokenizer;

use serde::{Deserialize, Serialize};

pub use canonical::{read_canonical, write_canonical};
pub use catalog::{CatalogItem, ItemCatalog};
pub use examples::{build_examples, preference_history, serialize_context, ExampleConfig, TrainingExample};
pub use opendialkg::load_opendialkg;
pub use redial::{corpus_from_records, load_redial, write_redial_record, RedialMessage, RedialRecord};
pub use tokenizer::{split_words, DecodedText, RenderMode, TokenId, Vocabulary};

use crate::error::{CrsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Recommender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Byte range `[start, end)` into an utterance's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMention {
    pub item_id: String,
    pub span: Span,
}

/// Mention of a knowledge-graph entity, keyed by its identifier string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_id: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub item_mentions: Vec<ItemMention>,
    #[serde(default)]
    pub entity_mentions: Vec<EntityMention>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Utterance {
            speaker,
            text: text.into(),
            item_mentions: Vec::new(),
            entity_mentions: Vec::new(),
        }
    }

    /// Spans lie on char boundaries inside the text and never overlap.
    pub fn validate(&self) -> Result<()> {
        let mut spans: Vec<Span> = self
            .item_mentions
            .iter()
            .map(|m| m.span)
            .chain(self.entity_mentions.iter().map(|m| m.span))
            .collect();
        spans.sort();
        for s in &spans {
            if s.start >= s.end
                || s.end > self.text.len()
                || !self.text.is_char_boundary(s.start)
                || !self.text.is_char_boundary(s.end)
            {
                return Err(CrsError::parse(
                    "utterance",
                    format!("span {}..{} outside text of {} bytes", s.start, s.end, self.text.len()),
                ));
            }
        }
        for pair in spans.windows(2) {
            if pair[0].overlaps(&pair[1]) {
                return Err(CrsError::parse("utterance", "overlapping mention spans"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        if self.utterances.len() < 2 {
            return Err(CrsError::parse(
                format!("conversation {}", self.id),
                "fewer than 2 utterances",
            ));
        }
        self.utterances.iter().try_for_each(Utterance::validate)
    }
}

/// Conversations plus what the loader learned along the way.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub conversations: Vec<Conversation>,
    /// Display names for every item id seen in mention annotations.
    pub item_names: std::collections::BTreeMap<String, String>,
    /// Records dropped as malformed.
    pub skipped: usize,
}

impl LoadedCorpus {
    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(|c| c.utterances.len()).sum()
    }
}

/// Reassigns splits by position: the first `train` fraction, then `valid`,
/// then the rest.
pub fn assign_splits(conversations: &mut [Conversation], train: f64, valid: f64) {
    let total = conversations.len();
    for (i, conv) in conversations.iter_mut().enumerate() {
        conv.split = positional_split(i, total, train, valid);
    }
}

/// Positional split: the first `train` fraction, then `valid`, then the rest.
pub(crate) fn positional_split(index: usize, total: usize, train: f64, valid: f64) -> Split {
    let pos = index as f64 / total.max(1) as f64;
    if pos < train {
        Split::Train
    } else if pos < train + valid {
        Split::Valid
    } else {
        Split::Test
    }
}
