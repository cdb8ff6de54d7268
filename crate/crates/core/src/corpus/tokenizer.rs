use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ItemCatalog, ItemMention, Span, Utterance};
use crate::error::{CrsError, Result};

pub type TokenId = u32;

/// Splits text into word tokens with their byte spans. A word is a run of
/// alphanumerics, optionally joined by inner apostrophes or hyphens; every
/// other non-space character is its own token.
pub fn split_words(text: &str) -> Vec<(Span, &str)> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_alphanumeric() {
            let mut j = i + 1;
            while j < chars.len() {
                let cj = chars[j].1;
                if cj.is_alphanumeric() {
                    j += 1;
                } else if (cj == '\'' || cj == '-')
                    && j + 1 < chars.len()
                    && chars[j + 1].1.is_alphanumeric()
                {
                    j += 2;
                } else {
                    break;
                }
            }
            let end = chars.get(j).map_or(text.len(), |(b, _)| *b);
            out.push((Span::new(start, end), &text[start..end]));
            i = j;
        } else {
            let end = start + c.len_utf8();
            out.push((Span::new(start, end), &text[start..end]));
            i += 1;
        }
    }
    out
}

/// How item tokens are rendered when decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Catalog display names.
    Names,
    /// `@{item_id}` markers.
    Machine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedText {
    pub text: String,
    pub item_mentions: Vec<ItemMention>,
}

/// Word vocabulary extended with one token per catalog item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    base: Vec<String>,
    items: Vec<String>,
    #[serde(skip)]
    base_index: HashMap<String, TokenId>,
    #[serde(skip)]
    item_index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const PAD: TokenId = 0;
    pub const UNK: TokenId = 1;
    pub const BOS: TokenId = 2;
    pub const EOS: TokenId = 3;
    pub const EOT: TokenId = 4;
    const SPECIALS: [&'static str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<eot>"];

    /// Base vocabulary from word counts over `texts`, most frequent first.
    /// Words seen fewer than `min_count` times map to UNK.
    pub fn build<'a, I>(texts: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for (_, w) in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(max) = max_size {
            words.truncate(max.saturating_sub(Self::SPECIALS.len()));
        }
        let base = Self::SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Self::from_parts(base, Vec::new())
    }

    /// Word vocabulary over utterance texts with item-mention spans cut out.
    pub fn build_from_utterances<'a, I>(utterances: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a Utterance>,
    {
        let pieces: Vec<String> = utterances
            .into_iter()
            .map(|u| {
                let mut text = u.text.clone();
                let mut spans: Vec<Span> = u.item_mentions.iter().map(|m| m.span).collect();
                spans.sort();
                for s in spans.iter().rev() {
                    text.replace_range(s.start..s.end, " ");
                }
                text
            })
            .collect();
        Self::build(pieces.iter().map(|s| s.as_str()), min_count, max_size)
    }

    pub fn from_parts(base: Vec<String>, items: Vec<String>) -> Self {
        let mut v = Vocabulary {
            base,
            items,
            base_index: HashMap::new(),
            item_index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.base_index = self
            .base
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let offset = self.base.len();
        self.item_index = self
            .items
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), (offset + i) as TokenId))
            .collect();
    }

    /// Appends one token per catalog item, in catalog order.
    pub fn extend_with_items(&mut self, catalog: &ItemCatalog) {
        self.items = catalog.items().iter().map(|i| i.id.clone()).collect();
        self.reindex();
    }

    pub fn base_len(&self) -> usize {
        self.base.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item_ids(&self) -> &[String] {
        &self.items
    }

    /// Catalog index of an item token.
    pub fn item_of(&self, token: TokenId) -> Option<usize> {
        let t = token as usize;
        (t >= self.base.len() && t < self.len()).then(|| t - self.base.len())
    }

    pub fn is_item(&self, token: TokenId) -> bool {
        self.item_of(token).is_some()
    }

    pub fn item_token(&self, item_id: &str) -> Option<TokenId> {
        self.item_index.get(item_id).copied()
    }

    pub fn word_token(&self, word: &str) -> TokenId {
        self.base_index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn token_str(&self, token: TokenId) -> &str {
        let t = token as usize;
        if t < self.base.len() {
            &self.base[t]
        } else {
            &self.items[t - self.base.len()]
        }
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        split_words(text).into_iter().map(|(_, w)| self.word_token(w)).collect()
    }

    /// Tokens of an utterance; each item mention becomes a single item token.
    /// Mentions of items outside the vocabulary fall back to their words.
    pub fn encode_utterance(&self, utt: &Utterance) -> Vec<TokenId> {
        let mut mentions: Vec<&ItemMention> = utt.item_mentions.iter().collect();
        mentions.sort_by_key(|m| m.span.start);
        let mut out = Vec::new();
        let mut cursor = 0;
        for m in mentions {
            if m.span.start < cursor {
                continue;
            }
            out.extend(self.encode_text(&utt.text[cursor..m.span.start]));
            match self.item_token(&m.item_id) {
                Some(tok) => out.push(tok),
                None => out.extend(self.encode_text(&utt.text[m.span.start..m.span.end])),
            }
            cursor = m.span.end;
        }
        out.extend(self.encode_text(&utt.text[cursor..]));
        out
    }

    /// Detokenizes, stopping at EOS and dropping other special tokens.
    pub fn decode(&self, tokens: &[TokenId], catalog: &ItemCatalog, mode: RenderMode) -> DecodedText {
        let mut text = String::new();
        let mut item_mentions = Vec::new();
        for &tok in tokens {
            if tok == Self::EOS {
                break;
            }
            if (tok as usize) < Self::SPECIALS.len() && tok != Self::UNK {
                continue;
            }
            let (piece, item) = match self.item_of(tok) {
                Some(idx) => {
                    let id = &self.items[idx];
                    let piece = match mode {
                        RenderMode::Names => catalog
                            .get(id)
                            .map(|i| i.name.clone())
                            .unwrap_or_else(|| format!("@{id}")),
                        RenderMode::Machine => format!("@{id}"),
                    };
                    (piece, Some(id.clone()))
                }
                None => (self.token_str(tok).to_string(), None),
            };
            let attach = item.is_none()
                && piece.chars().count() == 1
                && matches!(piece.chars().next(), Some('.' | ',' | '!' | '?' | ':' | ';' | ')'));
            if !text.is_empty() && !attach && !text.ends_with(['(', '@']) {
                text.push(' ');
            }
            let start = text.len();
            text.push_str(&piece);
            if let Some(item_id) = item {
                item_mentions.push(ItemMention {
                    item_id,
                    span: Span::new(start, text.len()),
                });
            }
        }
        DecodedText { text, item_mentions }
    }

    /// Item block length and ids must equal the catalog's.
    pub fn check_aligned(&self, catalog: &ItemCatalog) -> Result<()> {
        if self.items.len() != catalog.len() {
            return Err(CrsError::Misaligned(format!(
                "{} item tokens vs {} catalog items",
                self.items.len(),
                catalog.len()
            )));
        }
        for (i, item) in catalog.items().iter().enumerate() {
            if self.items[i] != item.id {
                return Err(CrsError::Misaligned(format!(
                    "item token {i} is {} but catalog has {}",
                    self.items[i], item.id
                )));
            }
        }
        Ok(())
    }
}
