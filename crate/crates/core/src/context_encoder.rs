//! Contextual-level preference: pooled encoder states through an affine
//! head onto the entity space.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};
use crate::nn::{self, Graph, Mat, ParamGroup, ParamStore, Var};
use crate::preference::{mask_row, RecommendationDistribution};

pub use crate::backbone::{encode, pooled, ContextEncoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextHeadConfig {
    /// Insert a ReLU hidden layer of width `d_model` before the projection.
    pub hidden_layer: bool,
    /// Restrict the training softmax to items. Inference always restricts.
    pub masked: bool,
}

impl Default for ContextHeadConfig {
    fn default() -> Self {
        ContextHeadConfig {
            hidden_layer: false,
            masked: true,
        }
    }
}

const HIDDEN: &str = "ctx.hidden";
const HEAD: &str = "ctx.head";

pub fn init_params(
    store: &mut ParamStore,
    cfg: &ContextHeadConfig,
    d_model: usize,
    num_entities: usize,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if cfg.hidden_layer {
        nn::init_linear(store, HIDDEN, d_model, d_model, ParamGroup::New, &mut rng);
    }
    nn::init_linear(store, HEAD, d_model, num_entities, ParamGroup::New, &mut rng);
}

/// Unmasked head output `[1, |E|]` for a `[1, d]` pooled vector.
pub fn head_logits(g: &mut Graph, pooled: Var, cfg: &ContextHeadConfig) -> Var {
    let x = if cfg.hidden_layer {
        let h = nn::linear(g, pooled, HIDDEN);
        g.relu(h)
    } else {
        pooled
    };
    nn::linear(g, x, HEAD)
}

/// Head logits with the item mask added when `cfg.masked`.
pub fn training_logits(g: &mut Graph, pooled: Var, cfg: &ContextHeadConfig, support: &[bool]) -> Var {
    let logits = head_logits(g, pooled, cfg);
    if cfg.masked {
        let m = g.constant(mask_row(support));
        g.add(logits, m)
    } else {
        logits
    }
}

/// `p_c` for an already pooled context vector.
pub fn context_scores(
    pooled: ArrayView1<f64>,
    store: &ParamStore,
    cfg: &ContextHeadConfig,
    support: Arc<[bool]>,
) -> Result<RecommendationDistribution> {
    let w = store
        .get(&format!("{HEAD}.w"))
        .ok_or_else(|| CrsError::Config("context head is not initialised".into()))?;
    if w.nrows() != pooled.len() || w.ncols() != support.len() {
        return Err(CrsError::Shape(format!(
            "context head is {:?}, pooled width {}, support {}",
            w.dim(),
            pooled.len(),
            support.len()
        )));
    }
    let mut g = Graph::with_params(store);
    let x: Mat = Array2::from_shape_vec((1, pooled.len()), pooled.to_vec()).expect("row");
    let x = g.constant(x);
    let logits = head_logits(&mut g, x, cfg);
    RecommendationDistribution::from_logits(g.value(logits).row(0).as_slice().expect("contiguous"), support)
}
