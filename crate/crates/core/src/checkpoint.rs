//! Single-file model checkpoints with named sections.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemCatalog, Vocabulary};
use crate::error::{CrsError, Result};
use crate::kg::{AliasIndex, KnowledgeGraph};
use crate::model::{CrsModel, ModelConfig, SCORER};
use crate::nn::{ParamStore, StoredMatrix};
use crate::training::TrainState;

pub const FORMAT: &str = "crs-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSection {
    pub kg: KnowledgeGraph,
    pub aliases: AliasIndex,
    pub params: BTreeMap<String, StoredMatrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabSection {
    pub vocab: Vocabulary,
    pub catalog: ItemCatalog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub state: TrainState,
    pub config: ModelConfig,
    pub backbone: BTreeMap<String, StoredMatrix>,
    pub graph_encoder: GraphSection,
    pub preference: BTreeMap<String, StoredMatrix>,
    pub context_head: BTreeMap<String, StoredMatrix>,
    pub vocab: VocabSection,
}

impl Checkpoint {
    pub fn from_model(model: &CrsModel, state: TrainState) -> Self {
        let store = &model.store;
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            state,
            config: model.config,
            backbone: store.export_prefix("bb."),
            graph_encoder: GraphSection {
                kg: model.kg.clone(),
                aliases: model.aliases.clone(),
                params: store.export_prefix("rgcn."),
            },
            preference: store.export_prefix(SCORER),
            context_head: store.export_prefix("ctx."),
            vocab: VocabSection {
                vocab: model.vocab.clone(),
                catalog: model.catalog.clone(),
            },
        }
    }

    pub fn into_model(self) -> Result<(CrsModel, TrainState)> {
        if self.format != FORMAT {
            return Err(CrsError::Checkpoint(format!("unexpected format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(CrsError::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        let mut kg = self.graph_encoder.kg;
        kg.rebuild();
        let mut vocab = self.vocab.vocab;
        vocab.reindex();
        let mut catalog = self.vocab.catalog;
        catalog.reindex();
        let mut store = ParamStore::new();
        for section in [
            &self.backbone,
            &self.graph_encoder.params,
            &self.preference,
            &self.context_head,
        ] {
            store.import(section)?;
        }
        let model = CrsModel::from_parts(self.config, store, kg, self.graph_encoder.aliases, catalog, vocab)?;
        Ok((model, self.state))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CrsError::io(parent, e))?;
        }
        // Write beside the target and rename so a crash never leaves a
        // truncated checkpoint behind.
        let tmp = path.with_extension("tmp");
        let body = serde_json::to_vec(self).expect("checkpoint serializes");
        fs::write(&tmp, body).map_err(|e| CrsError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CrsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| CrsError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CrsError::Checkpoint(format!("{}: {e}", path.display())))
    }
}

pub fn save_model(model: &CrsModel, state: TrainState, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_model(model, state).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(CrsModel, TrainState)> {
    Checkpoint::load(path)?.into_model()
}
