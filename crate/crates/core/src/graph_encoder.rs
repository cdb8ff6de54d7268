//! Relational graph convolution over the knowledge graph.
//!
//! One layer computes, for every entity `e`,
//! `h_e' = ReLU(Σ_r Σ_{e' ∈ N_r(e)} W_r h_e')` with the normalizer fixed
//! at 1, no bias, and an implicit self-loop relation contributing
//! `W_self h_e`. Rows of the entity table are representations, so the
//! product is computed as `h · W_rᵀ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::kg::KnowledgeGraph;
use crate::nn::{Graph, Mat, ParamGroup, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgcnConfig {
    pub dim: usize,
    pub layers: usize,
    /// Share `W_r` through this many basis matrices instead of one free
    /// matrix per relation.
    pub bases: Option<usize>,
}

impl Default for RgcnConfig {
    fn default() -> Self {
        RgcnConfig {
            dim: 128,
            layers: 1,
            bases: None,
        }
    }
}

pub const EMBEDDING: &str = "rgcn.embedding";

fn weight_name(layer: usize, relation: usize) -> String {
    format!("rgcn.l{layer}.w{relation}")
}

fn basis_name(layer: usize, b: usize) -> String {
    format!("rgcn.l{layer}.basis{b}")
}

fn coef_name(layer: usize) -> String {
    format!("rgcn.l{layer}.coef")
}

/// Adds entity input embeddings and relation weights to `store`, drawn
/// uniformly from `[-1/√d, 1/√d]`.
pub fn init_params(store: &mut ParamStore, kg: &KnowledgeGraph, cfg: &RgcnConfig, seed: u64) -> Result<()> {
    if cfg.dim == 0 || cfg.layers == 0 {
        return Err(CrsError::Config("R-GCN needs dim > 0 and at least one layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.dim;
    let scale = 1.0 / (d as f64).sqrt();
    let relations = kg.num_message_relations();
    store.insert_uniform(EMBEDDING, (kg.num_entities(), d), scale, ParamGroup::New, &mut rng);
    for layer in 0..cfg.layers {
        match cfg.bases {
            None => {
                for r in 0..relations {
                    store.insert_uniform(weight_name(layer, r), (d, d), scale, ParamGroup::New, &mut rng);
                }
            }
            Some(b) => {
                if b == 0 {
                    return Err(CrsError::Config("basis count must be positive".into()));
                }
                for i in 0..b {
                    store.insert_uniform(basis_name(layer, i), (d, d), scale, ParamGroup::New, &mut rng);
                }
                let c = 1.0 / (b as f64).sqrt();
                store.insert_uniform(coef_name(layer), (relations, b), c, ParamGroup::New, &mut rng);
            }
        }
    }
    Ok(())
}

/// Standalone parameter set for the encoder alone.
pub fn init_store(kg: &KnowledgeGraph, cfg: &RgcnConfig, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    init_params(&mut store, kg, cfg, seed)?;
    Ok(store)
}

fn relation_weight(g: &mut Graph, cfg: &RgcnConfig, layer: usize, r: usize) -> Var {
    match cfg.bases {
        None => g.param_named(&weight_name(layer, r)),
        Some(b) => {
            let coef = g.param_named(&coef_name(layer));
            let mut acc = None;
            for i in 0..b {
                let basis = g.param_named(&basis_name(layer, i));
                let c = g.entry(coef, r, i);
                let term = g.scale_by(basis, c);
                acc = Some(match acc {
                    None => term,
                    Some(a) => g.add(a, term),
                });
            }
            acc.expect("at least one basis")
        }
    }
}

/// Validates stored shapes against the graph before any compute.
pub fn check_params(store: &ParamStore, kg: &KnowledgeGraph, cfg: &RgcnConfig) -> Result<()> {
    let emb = store
        .get(EMBEDDING)
        .ok_or_else(|| CrsError::Config("missing entity embeddings".into()))?;
    if emb.dim() != (kg.num_entities(), cfg.dim) {
        return Err(CrsError::Config(format!(
            "entity embeddings are {:?}, expected ({}, {})",
            emb.dim(),
            kg.num_entities(),
            cfg.dim
        )));
    }
    for layer in 0..cfg.layers {
        let names: Vec<String> = match cfg.bases {
            None => (0..kg.num_message_relations()).map(|r| weight_name(layer, r)).collect(),
            Some(b) => (0..b).map(|i| basis_name(layer, i)).collect(),
        };
        for name in names {
            match store.get(&name) {
                Some(w) if w.dim() == (cfg.dim, cfg.dim) => {}
                Some(w) => {
                    return Err(CrsError::Config(format!("{name} is {:?}, expected square {}", w.dim(), cfg.dim)))
                }
                None => return Err(CrsError::Config(format!("missing parameter {name}"))),
            }
        }
        if cfg.bases.is_some() {
            let coef = store
                .get(&coef_name(layer))
                .ok_or_else(|| CrsError::Config("missing basis coefficients".into()))?;
            if coef.nrows() != kg.num_message_relations() {
                return Err(CrsError::Config("basis coefficients do not match relation count".into()));
            }
        }
    }
    Ok(())
}

/// Records the forward pass on `g` and returns the `[|E|, d]` table.
pub fn rgcn_forward(g: &mut Graph, kg: &KnowledgeGraph, cfg: &RgcnConfig) -> Var {
    let mut h = g.param_named(EMBEDDING);
    let n = kg.num_entities();
    for layer in 0..cfg.layers {
        let w_self = relation_weight(g, cfg, layer, kg.self_loop());
        let mut acc = g.matmul_t(h, w_self);
        for r in 0..kg.num_edge_relations() {
            let edges = kg.edges(r);
            if edges.sources.is_empty() {
                continue;
            }
            let w = relation_weight(g, cfg, layer, r);
            let src = g.gather(h, &edges.sources);
            let msg = g.matmul_t(src, w);
            let agg = g.scatter_add(msg, &edges.targets, n);
            acc = g.add(acc, agg);
        }
        h = g.relu(acc);
    }
    h
}

/// Entity table for inference.
pub fn entity_table(store: &ParamStore, kg: &KnowledgeGraph, cfg: &RgcnConfig) -> Result<Mat> {
    check_params(store, kg, cfg)?;
    let mut g = Graph::with_params(store);
    let h = rgcn_forward(&mut g, kg, cfg);
    Ok(g.value(h).clone())
}
