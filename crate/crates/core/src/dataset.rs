//! Turning a loaded corpus plus knowledge graph into everything training
//! and serving need: linked catalog, entity annotations, vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::corpus::{
    build_examples, read_canonical, write_canonical, Conversation, EntityMention, ExampleConfig, ItemCatalog,
    LoadedCorpus, Split, TrainingExample, Utterance, Vocabulary,
};
use crate::error::{CrsError, Result};
use crate::kg::{link_entities, AliasIndex, EntityId, KnowledgeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Redial,
    Opendialkg,
    Canonical,
}

impl DatasetKind {
    /// Recall cutoffs reported for this dataset.
    pub fn recall_cutoffs(self) -> &'static [usize] {
        match self {
            DatasetKind::Opendialkg => &[1, 3, 5, 10, 25],
            DatasetKind::Redial | DatasetKind::Canonical => &[1, 10, 50],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "redial" => Ok(DatasetKind::Redial),
            "opendialkg" => Ok(DatasetKind::Opendialkg),
            "canonical" => Ok(DatasetKind::Canonical),
            other => Err(CrsError::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub min_count: usize,
    pub max_size: Option<usize>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_count: 1,
            max_size: None,
        }
    }
}

/// Counts reported after preparation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub conversations: usize,
    pub utterances: usize,
    pub items: usize,
    pub linked_items: usize,
    pub link_conflicts: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub entity_mentions: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub conversations: Vec<Conversation>,
    pub kg: KnowledgeGraph,
    pub aliases: AliasIndex,
    pub catalog: ItemCatalog,
    pub vocab: Vocabulary,
    pub stats: PrepareStats,
}

/// Adds entity mentions found through `aliases` to utterances that carry
/// none, skipping text already covered by item mentions.
pub fn annotate_entities(utt: &mut Utterance, kg: &KnowledgeGraph, aliases: &AliasIndex) {
    if !utt.entity_mentions.is_empty() {
        return;
    }
    let exclude: Vec<_> = utt.item_mentions.iter().map(|m| m.span).collect();
    utt.entity_mentions = link_entities(&utt.text, aliases, &exclude)
        .into_iter()
        .map(|(span, e)| EntityMention {
            entity_id: kg.entity_name(e).to_string(),
            span,
        })
        .collect();
}

/// Links the catalog to the graph, marks items, annotates entity mentions
/// and builds the vocabulary from training-split text.
pub fn prepare(
    corpus: LoadedCorpus,
    mut kg: KnowledgeGraph,
    mut aliases: AliasIndex,
    overrides: &HashMap<String, String>,
    vocab_cfg: &VocabConfig,
) -> Result<PreparedData> {
    if corpus.conversations.is_empty() {
        return Err(CrsError::Empty("corpus has no conversations".into()));
    }
    // Entity names always resolve to themselves.
    for i in 0..kg.num_entities() {
        let e = EntityId(i as u32);
        aliases.insert(kg.entity_name(e), e);
    }
    let mut catalog = ItemCatalog::from_names(&corpus.item_names);
    let link_conflicts = catalog.link_to_kg(&kg, &aliases, overrides);
    kg.set_items(catalog.items().iter().filter_map(|i| i.entity));

    let mut conversations = corpus.conversations;
    let mut entity_mentions = 0;
    for conv in &mut conversations {
        for utt in &mut conv.utterances {
            annotate_entities(utt, &kg, &aliases);
            entity_mentions += utt.entity_mentions.len();
        }
    }
    let mut vocab = Vocabulary::build_from_utterances(
        conversations
            .iter()
            .filter(|c| c.split == Split::Train)
            .flat_map(|c| c.utterances.iter()),
        vocab_cfg.min_count,
        vocab_cfg.max_size,
    );
    vocab.extend_with_items(&catalog);

    let stats = PrepareStats {
        conversations: conversations.len(),
        utterances: conversations.iter().map(|c| c.utterances.len()).sum(),
        items: catalog.len(),
        linked_items: catalog.mapped_count(),
        link_conflicts,
        entities: kg.num_entities(),
        relations: kg.num_relations(),
        triples: kg.triples().len(),
        entity_mentions,
        vocab_size: vocab.len(),
    };
    info!(?stats, "dataset prepared");
    if stats.linked_items == 0 {
        return Err(CrsError::Config("no catalog item could be linked to the knowledge graph".into()));
    }
    Ok(PreparedData {
        conversations,
        kg,
        aliases,
        catalog,
        vocab,
        stats,
    })
}

const CONVERSATIONS: &str = "conversations.jsonl";
const KG: &str = "kg.json";
const ALIASES: &str = "aliases.json";
const CATALOG: &str = "catalog.json";
const VOCAB: &str = "vocab.json";
const STATS: &str = "stats.json";

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let p = dir.join(name);
    let body = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(&p, body + "\n").map_err(|e| CrsError::io(&p, e))
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let p = dir.join(name);
    let text = fs::read_to_string(&p).map_err(|e| CrsError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CrsError::parse(p.display().to_string(), e.to_string()))
}

impl PreparedData {
    /// Writes the prepared dataset as plain files under `dir`. Output is a
    /// pure function of the data, so reruns are byte-identical.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CrsError::io(dir, e))?;
        write_canonical(dir.join(CONVERSATIONS), &self.conversations)?;
        write_json(dir, KG, &self.kg)?;
        write_json(dir, ALIASES, &self.aliases)?;
        write_json(dir, CATALOG, &self.catalog)?;
        write_json(dir, VOCAB, &self.vocab)?;
        write_json(dir, STATS, &self.stats)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let conversations = read_canonical(dir.join(CONVERSATIONS))?;
        let mut kg: KnowledgeGraph = read_json(dir, KG)?;
        kg.rebuild();
        let aliases = read_json(dir, ALIASES)?;
        let mut catalog: ItemCatalog = read_json(dir, CATALOG)?;
        catalog.reindex();
        let mut vocab: Vocabulary = read_json(dir, VOCAB)?;
        vocab.reindex();
        vocab.check_aligned(&catalog)?;
        let stats = read_json(dir, STATS)?;
        Ok(PreparedData {
            conversations,
            kg,
            aliases,
            catalog,
            vocab,
            stats,
        })
    }

    pub fn split(&self, split: Split) -> Vec<Conversation> {
        self.conversations.iter().filter(|c| c.split == split).cloned().collect()
    }

    pub fn examples(&self, split: Split, cfg: &ExampleConfig) -> Vec<TrainingExample> {
        build_examples(&self.split(split), &self.catalog, &self.vocab, &self.kg, cfg)
    }
}
