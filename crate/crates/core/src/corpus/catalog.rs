use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::kg::{AliasIndex, EntityId, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: String,
    pub name: String,
    /// Linked knowledge-graph entity, if any.
    pub entity: Option<EntityId>,
}

/// Recommendable items in a fixed order. The order defines the item-token
/// block of the vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCatalog {
    items: Vec<CatalogItem>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    by_entity: HashMap<EntityId, usize>,
}

impl ItemCatalog {
    pub fn from_names(names: &BTreeMap<String, String>) -> Self {
        let mut c = ItemCatalog::default();
        for (id, name) in names {
            c.insert(id, name);
        }
        c
    }

    /// Adds an item; a repeated id keeps its first name.
    pub fn insert(&mut self, id: &str, name: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.items.len();
        self.items.push(CatalogItem {
            id: id.to_string(),
            name: name.to_string(),
            entity: None,
        });
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn reindex(&mut self) {
        self.index = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.id.clone(), i))
            .collect();
        self.by_entity = self
            .items
            .iter()
            .enumerate()
            .filter_map(|(i, it)| it.entity.map(|e| (e, i)))
            .collect();
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&CatalogItem> {
        self.position(id).map(|i| &self.items[i])
    }

    pub fn entity_of(&self, id: &str) -> Option<EntityId> {
        self.get(id).and_then(|i| i.entity)
    }

    pub fn item_for_entity(&self, e: EntityId) -> Option<&CatalogItem> {
        self.by_entity.get(&e).map(|&i| &self.items[i])
    }

    pub fn mapped_count(&self) -> usize {
        self.by_entity.len()
    }

    /// Links item names to knowledge-graph entities by exact normalized
    /// name, retrying without a trailing `(year)`. `overrides` maps item ids
    /// to entity identifiers and wins over name matching. A second item
    /// resolving to an already-claimed entity stays unmapped. Returns the
    /// number of such conflicts.
    pub fn link_to_kg(
        &mut self,
        kg: &KnowledgeGraph,
        aliases: &AliasIndex,
        overrides: &HashMap<String, String>,
    ) -> usize {
        let mut claimed: HashMap<EntityId, usize> = HashMap::new();
        let mut conflicts = 0;
        for (i, item) in self.items.iter_mut().enumerate() {
            item.entity = None;
            let found = match overrides.get(&item.id) {
                Some(name) => kg.entity_id(name),
                None => resolve_name(&item.name, kg, aliases),
            };
            if let Some(e) = found {
                if claimed.contains_key(&e) {
                    conflicts += 1;
                } else {
                    claimed.insert(e, i);
                    item.entity = Some(e);
                }
            }
        }
        self.reindex();
        conflicts
    }
}

fn resolve_name(name: &str, kg: &KnowledgeGraph, aliases: &AliasIndex) -> Option<EntityId> {
    if let Some(e) = kg.entity_id(name) {
        return Some(e);
    }
    if let Some(e) = aliases.lookup(name).first() {
        return Some(*e);
    }
    let trimmed = strip_year(name);
    if trimmed != name {
        if let Some(e) = aliases.lookup(trimmed).first() {
            return Some(*e);
        }
    }
    None
}

fn strip_year(name: &str) -> &str {
    let t = name.trim_end();
    if t.ends_with(')') {
        if let Some(open) = t.rfind('(') {
            let inner = &t[open + 1..t.len() - 1];
            if !inner.is_empty() && inner.chars().all(|c| c.is_ascii_digit()) {
                return t[..open].trim_end();
            }
        }
    }
    name
}
