//! Relational knowledge graph and alias-based entity linking.

mod alias;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use alias::{link_entities, normalize_surface, AliasIndex};

use crate::error::{CrsError, Result};

/// Dense entity index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Directed edge list for one message-passing relation: `(source, target)`
/// means the source's state flows into the target.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEdges {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    relations: Vec<String>,
    /// Deduplicated `(head, relation, tail)` in first-seen order.
    triples: Vec<(u32, u32, u32)>,
    /// Also pass messages tail to head under a separate inverse relation.
    inverse: bool,
    item_mask: Vec<bool>,
    #[serde(skip)]
    entity_index: HashMap<String, EntityId>,
    #[serde(skip)]
    edges: Vec<RelationEdges>,
}

impl KnowledgeGraph {
    pub fn from_triples<'a, I>(triples: I, inverse: bool) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut kg = KnowledgeGraph {
            entities: Vec::new(),
            relations: Vec::new(),
            triples: Vec::new(),
            inverse,
            item_mask: Vec::new(),
            entity_index: HashMap::new(),
            edges: Vec::new(),
        };
        let mut rel_index: HashMap<String, u32> = HashMap::new();
        let mut seen = BTreeSet::new();
        for (h, r, t) in triples {
            let h = kg.ensure_entity(h).0;
            let t = kg.ensure_entity(t).0;
            let r = *rel_index.entry(r.to_string()).or_insert_with(|| {
                kg.relations.push(r.to_string());
                (kg.relations.len() - 1) as u32
            });
            if seen.insert((h, r, t)) {
                kg.triples.push((h, r, t));
            }
        }
        kg.rebuild();
        kg
    }

    /// Reads tab-separated `head<TAB>relation<TAB>tail` lines. Blank lines
    /// and lines starting with `#` are ignored; duplicates collapse.
    pub fn load_triples(path: impl AsRef<Path>, inverse: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CrsError::io(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
                return Err(CrsError::parse(
                    format!("{}:{}", path.display(), i + 1),
                    "expected head<TAB>relation<TAB>tail",
                ));
            }
            rows.push((parts[0], parts[1], parts[2]));
        }
        Ok(Self::from_triples(rows, inverse))
    }

    pub fn write_triples(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for &(h, r, t) in &self.triples {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.entities[h as usize], self.relations[r as usize], self.entities[t as usize]
            ));
        }
        fs::write(path, out).map_err(|e| CrsError::io(path, e))
    }

    /// Adds an isolated entity if the name is new.
    pub fn ensure_entity(&mut self, name: &str) -> EntityId {
        if let Some(e) = self.entity_index.get(name) {
            return *e;
        }
        let e = EntityId(self.entities.len() as u32);
        self.entities.push(name.to_string());
        self.entity_index.insert(name.to_string(), e);
        self.item_mask.push(false);
        if !self.edges.is_empty() {
            // keep adjacency consistent for graphs that are already built
            self.rebuild();
        }
        e
    }

    /// Recomputes lookup tables and adjacency after construction or load.
    pub fn rebuild(&mut self) {
        self.entity_index = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), EntityId(i as u32)))
            .collect();
        self.item_mask.resize(self.entities.len(), false);
        let mut edges = vec![RelationEdges::default(); self.num_edge_relations()];
        let base = self.relations.len();
        for &(h, r, t) in &self.triples {
            let fwd = &mut edges[r as usize];
            fwd.sources.push(h as usize);
            fwd.targets.push(t as usize);
            if self.inverse {
                let inv = &mut edges[base + r as usize];
                inv.sources.push(t as usize);
                inv.targets.push(h as usize);
            }
        }
        self.edges = edges;
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Relations named in the triples.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relations carrying explicit edges (doubled with inverses).
    pub fn num_edge_relations(&self) -> usize {
        if self.inverse {
            2 * self.relations.len()
        } else {
            self.relations.len()
        }
    }

    /// Edge relations plus the implicit self loop, which comes last.
    pub fn num_message_relations(&self) -> usize {
        self.num_edge_relations() + 1
    }

    pub fn self_loop(&self) -> usize {
        self.num_edge_relations()
    }

    pub fn inverse(&self) -> bool {
        self.inverse
    }

    pub fn edges(&self, relation: usize) -> &RelationEdges {
        &self.edges[relation]
    }

    pub fn triples(&self) -> &[(u32, u32, u32)] {
        &self.triples
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entities[e.index()]
    }

    pub fn relation_name(&self, r: usize) -> String {
        let base = self.relations.len();
        if r < base {
            self.relations[r].clone()
        } else if r < self.num_edge_relations() {
            format!("{}^-1", self.relations[r - base])
        } else {
            "self".to_string()
        }
    }

    /// Entities `e'` with an edge `e' -> e` under `relation`.
    pub fn neighbors(&self, e: EntityId, relation: usize) -> Vec<EntityId> {
        let edges = &self.edges[relation];
        let mut out: Vec<EntityId> = edges
            .targets
            .iter()
            .zip(&edges.sources)
            .filter(|(t, _)| **t == e.index())
            .map(|(_, s)| EntityId(*s as u32))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn set_items<I: IntoIterator<Item = EntityId>>(&mut self, items: I) {
        self.item_mask = vec![false; self.entities.len()];
        for e in items {
            self.item_mask[e.index()] = true;
        }
    }

    pub fn item_mask(&self) -> &[bool] {
        &self.item_mask
    }

    pub fn is_item(&self, e: EntityId) -> bool {
        self.item_mask[e.index()]
    }
}
