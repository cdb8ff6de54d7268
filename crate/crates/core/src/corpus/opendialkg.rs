//! Reader for the OpenDialKG release (`opendialkg.csv`).
//!
//! Each row carries a JSON list of chat messages interleaved with
//! knowledge-graph walk actions. A walk's path annotates the next chat
//! message from the same sender: any path entity whose name occurs in that
//! message becomes a mention. Path tails that the assistant then says out
//! loud form the item set; every other annotated entity is a text entity.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde_json::Value;
use tracing::warn;

use super::{
    positional_split, Conversation, EntityMention, ItemMention, LoadedCorpus, Span, Speaker,
    Utterance,
};
use crate::error::{CrsError, Result};

struct RawMessage {
    speaker: Speaker,
    text: String,
    /// Entities from the preceding walk path of this sender.
    path_entities: Vec<String>,
    /// Tail of the preceding walk path.
    path_tail: Option<String>,
}

fn parse_messages(json: &str) -> Option<Vec<RawMessage>> {
    let value: Value = serde_json::from_str(json).ok()?;
    let list = value.as_array()?;
    let mut pending: BTreeMap<&'static str, (Vec<String>, Option<String>)> = BTreeMap::new();
    let mut out = Vec::new();
    for msg in list {
        let sender = match msg.get("sender")?.as_str()? {
            "user" => "user",
            "assistant" => "assistant",
            _ => return None,
        };
        match msg.get("type").and_then(Value::as_str) {
            Some("chat") => {
                let text = msg.get("message")?.as_str()?.to_string();
                let (path_entities, path_tail) = pending.remove(sender).unwrap_or_default();
                out.push(RawMessage {
                    speaker: if sender == "user" { Speaker::Seeker } else { Speaker::Recommender },
                    text,
                    path_entities,
                    path_tail,
                });
            }
            Some("action") => {
                let triples = msg
                    .get("metadata")
                    .and_then(|m| m.get("path"))
                    .and_then(|p| p.get(1))
                    .and_then(Value::as_array);
                if let Some(triples) = triples {
                    let mut entities = Vec::new();
                    let mut tail = None;
                    for t in triples {
                        let parts: Vec<&str> = t.as_array()?.iter().filter_map(Value::as_str).collect();
                        if parts.len() != 3 {
                            return None;
                        }
                        entities.push(parts[0].to_string());
                        entities.push(parts[2].to_string());
                        tail = Some(parts[2].to_string());
                    }
                    pending.insert(sender, (entities, tail));
                }
            }
            _ => {}
        }
    }
    Some(out)
}

/// Case-insensitive occurrences of `needle` on word boundaries.
fn find_mentions(text: &str, needle: &str) -> Vec<Span> {
    if needle.is_empty() {
        return Vec::new();
    }
    let hay = text.to_lowercase();
    let pat = needle.to_lowercase();
    // Lowercasing can change byte lengths outside ASCII; only trust exact maps.
    if hay.len() != text.len() {
        return Vec::new();
    }
    let bytes = hay.as_bytes();
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&pat) {
        let start = from + pos;
        let end = start + pat.len();
        let left_ok = start == 0 || !bytes[start - 1].is_ascii_alphanumeric();
        let right_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if left_ok && right_ok {
            out.push(Span::new(start, end));
        }
        from = start + 1;
    }
    out
}

pub fn load_opendialkg(path: impl AsRef<Path>) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(|e| CrsError::io(path, e))?;
    let mut corpus = LoadedCorpus::default();
    if data.trim().is_empty() {
        return Ok(corpus);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(data.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CrsError::parse(path.display().to_string(), e.to_string()))?
        .clone();
    let msg_col = headers.iter().position(|h| h == "Messages").unwrap_or(0);

    let mut dialogues = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let parsed = record
            .ok()
            .and_then(|r| r.get(msg_col).map(str::to_string))
            .and_then(|m| parse_messages(&m));
        match parsed {
            Some(msgs) if msgs.len() >= 2 => dialogues.push((row, msgs)),
            _ => {
                corpus.skipped += 1;
                warn!(file = %path.display(), row = row + 1, "skipping malformed OpenDialKG row");
            }
        }
    }

    // Items: walk tails the assistant actually mentions.
    let mut items: BTreeSet<String> = BTreeSet::new();
    for (_, msgs) in &dialogues {
        for m in msgs {
            if m.speaker == Speaker::Recommender {
                if let Some(tail) = &m.path_tail {
                    if !find_mentions(&m.text, tail).is_empty() {
                        items.insert(tail.clone());
                    }
                }
            }
        }
    }

    let total = dialogues.len();
    for (i, (row, msgs)) in dialogues.into_iter().enumerate() {
        let utterances = msgs
            .into_iter()
            .map(|m| {
                let mut u = Utterance::new(m.speaker, m.text);
                let mut taken: Vec<Span> = Vec::new();
                let mut names: Vec<&String> = m.path_entities.iter().collect();
                names.sort_by_key(|n| std::cmp::Reverse(n.len()));
                names.dedup();
                for name in names {
                    for span in find_mentions(&u.text, name) {
                        if taken.iter().any(|t| t.overlaps(&span)) {
                            continue;
                        }
                        taken.push(span);
                        if items.contains(name) {
                            u.item_mentions.push(ItemMention { item_id: name.clone(), span });
                            corpus.item_names.entry(name.clone()).or_insert_with(|| name.clone());
                        } else {
                            u.entity_mentions.push(EntityMention { entity_id: name.clone(), span });
                        }
                    }
                }
                u.item_mentions.sort_by_key(|m| m.span.start);
                u.entity_mentions.sort_by_key(|m| m.span.start);
                u
            })
            .collect();
        corpus.conversations.push(Conversation {
            id: format!("odkg-{row}"),
            split: positional_split(i, total, 0.70, 0.15),
            utterances,
        });
    }
    Ok(corpus)
}
