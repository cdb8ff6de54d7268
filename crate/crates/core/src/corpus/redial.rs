//! Reader for the ReDial line-delimited release format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{positional_split, Conversation, ItemMention, LoadedCorpus, Span, Speaker, Utterance};
use crate::error::{CrsError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RedialMessage {
    #[serde(default)]
    pub time_offset: i64,
    pub text: String,
    pub sender_worker_id: i64,
    #[serde(default)]
    pub message_id: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RedialRecord {
    /// Item id to display name. Older dumps use `[]` when empty.
    #[serde(default)]
    pub movie_mentions: serde_json::Value,
    #[serde(default)]
    pub respondent_questions: serde_json::Value,
    #[serde(default)]
    pub initiator_questions: serde_json::Value,
    pub messages: Vec<RedialMessage>,
    pub conversation_id: serde_json::Value,
    pub respondent_worker_id: i64,
    pub initiator_worker_id: i64,
}

impl RedialRecord {
    fn mention_map(&self) -> BTreeMap<String, String> {
        match &self.movie_mentions {
            serde_json::Value::Object(map) => map
                .iter()
                .filter_map(|(k, v)| v.as_str().map(|name| (k.clone(), name.to_string())))
                .collect(),
            _ => BTreeMap::new(),
        }
    }

    fn id(&self) -> String {
        match &self.conversation_id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

pub fn write_redial_record(record: &RedialRecord) -> String {
    serde_json::to_string(record).expect("record serializes")
}

/// Finds `@<digits>` patterns and resolves them against the mention map.
fn resolve_mentions(text: &str, names: &BTreeMap<String, String>) -> Vec<ItemMention> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'@' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 {
                let id = &text[i + 1..j];
                if names.contains_key(id) {
                    out.push(ItemMention {
                        item_id: id.to_string(),
                        span: Span::new(i, j),
                    });
                }
                i = j;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn input_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CrsError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn convert(record: &RedialRecord) -> Option<(Conversation, BTreeMap<String, String>)> {
    let names = record.mention_map();
    let utterances: Vec<Utterance> = record
        .messages
        .iter()
        .map(|m| {
            let speaker = if m.sender_worker_id == record.initiator_worker_id {
                Speaker::Seeker
            } else {
                Speaker::Recommender
            };
            let mut u = Utterance::new(speaker, m.text.clone());
            u.item_mentions = resolve_mentions(&m.text, &names);
            u
        })
        .collect();
    let conv = Conversation {
        id: record.id(),
        split: super::Split::Train,
        utterances,
    };
    conv.validate().ok()?;
    Some((conv, names))
}

/// Loads ReDial records from a `.jsonl` file or a directory of them (read
/// in name order) and assigns an 80/10/10 split by record position.
pub fn load_redial(path: impl AsRef<Path>) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut skipped = 0;
    for file in input_files(path)? {
        let f = fs::File::open(&file).map_err(|e| CrsError::io(&file, e))?;
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| CrsError::io(&file, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RedialRecord>(&line) {
                Ok(r) => records.push(r),
                Err(_) => {
                    skipped += 1;
                    warn!(file = %file.display(), line = lineno + 1, "skipping malformed ReDial record");
                }
            }
        }
    }
    let mut corpus = corpus_from_records(&records);
    corpus.skipped += skipped;
    Ok(corpus)
}

/// Converts parsed records, dropping invalid ones, and assigns the 80/10/10
/// positional split.
pub fn corpus_from_records(records: &[RedialRecord]) -> LoadedCorpus {
    let mut corpus = LoadedCorpus::default();
    for r in records {
        match convert(r) {
            Some((conv, names)) => {
                for (id, name) in names {
                    corpus.item_names.entry(id).or_insert(name);
                }
                corpus.conversations.push(conv);
            }
            None => {
                corpus.skipped += 1;
                warn!(conversation = %r.id(), "skipping invalid ReDial record");
            }
        }
    }
    let total = corpus.conversations.len();
    for (i, conv) in corpus.conversations.iter_mut().enumerate() {
        conv.split = positional_split(i, total, 0.8, 0.1);
    }
    corpus
}
