use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{EntityId, KnowledgeGraph};
use crate::corpus::Span;
use crate::error::{CrsError, Result};

/// Lowercased alphanumeric runs with their byte spans.
fn surface_tokens(text: &str) -> Vec<(Span, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push((Span::new(s, i), text[s..i].to_lowercase()));
        }
    }
    if let Some(s) = start {
        out.push((Span::new(s, text.len()), text[s..].to_lowercase()));
    }
    out
}

/// Lowercases and folds punctuation and whitespace runs to single spaces.
pub fn normalize_surface(text: &str) -> String {
    surface_tokens(text)
        .into_iter()
        .map(|(_, t)| t)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Surface form to entity lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasIndex {
    map: BTreeMap<String, Vec<EntityId>>,
    max_tokens: usize,
}

impl AliasIndex {
    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, EntityId)>,
    {
        let mut idx = AliasIndex::default();
        for (alias, e) in pairs {
            idx.insert(alias, e);
        }
        idx
    }

    pub fn insert(&mut self, alias: &str, e: EntityId) {
        let key = normalize_surface(alias);
        if key.is_empty() {
            return;
        }
        self.max_tokens = self.max_tokens.max(key.split(' ').count());
        let ids = self.map.entry(key).or_default();
        if let Err(pos) = ids.binary_search(&e) {
            ids.insert(pos, e);
        }
    }

    /// Every entity name in the graph as its own alias.
    pub fn from_entity_names(kg: &KnowledgeGraph) -> Self {
        let mut idx = AliasIndex::default();
        for i in 0..kg.num_entities() {
            let e = EntityId(i as u32);
            idx.insert(kg.entity_name(e), e);
        }
        idx
    }

    /// Adds `alias<TAB>entity name` lines. Names absent from the graph are
    /// skipped; the count of skipped lines is returned.
    pub fn load_tsv(&mut self, path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<usize> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CrsError::io(path, e))?;
        let mut skipped = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((alias, name)) = line.split_once('\t') else {
                return Err(CrsError::parse(
                    format!("{}:{}", path.display(), i + 1),
                    "expected alias<TAB>entity",
                ));
            };
            match kg.entity_id(name.trim()) {
                Some(e) => self.insert(alias, e),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            warn!(file = %path.display(), skipped, "aliases name unknown entities");
        }
        Ok(skipped)
    }

    /// Entities for a surface form, ascending by id.
    pub fn lookup(&self, surface: &str) -> &[EntityId] {
        self.map
            .get(&normalize_surface(surface))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }
}

/// Finds alias occurrences in `text`. Longer matches (in tokens) win; among
/// equal lengths the earliest start wins; an ambiguous alias resolves to its
/// smallest entity id. Matches never overlap each other or `exclude`.
pub fn link_entities(text: &str, aliases: &AliasIndex, exclude: &[Span]) -> Vec<(Span, EntityId)> {
    let tokens = surface_tokens(text);
    let mut candidates: Vec<(usize, usize, Span, EntityId)> = Vec::new();
    for i in 0..tokens.len() {
        let mut key = String::new();
        for j in i..tokens.len().min(i + aliases.max_tokens) {
            if j > i {
                key.push(' ');
            }
            key.push_str(&tokens[j].1);
            if let Some(ids) = aliases.map.get(&key) {
                let span = Span::new(tokens[i].0.start, tokens[j].0.end);
                candidates.push((j + 1 - i, i, span, ids[0]));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));
    let mut taken: Vec<Span> = exclude.to_vec();
    let mut out = Vec::new();
    for (_, _, span, e) in candidates {
        if taken.iter().any(|t| t.overlaps(&span)) {
            continue;
        }
        taken.push(span);
        out.push((span, e));
    }
    out.sort_by_key(|(s, _)| s.start);
    out
}
