//! Minimal differentiable building blocks for the model.

pub mod graph;
pub mod optim;
pub mod params;

pub use graph::{log_softmax_rows, softmax_rows, Gradients, Graph, Mat, Var};
pub use optim::{Adam, AdamConfig, WarmupPolyDecay};
pub use params::{ParamGroup, ParamId, ParamStore, StoredMatrix};

use ndarray::Array2;
use rand::Rng;

pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    group: ParamGroup,
    rng: &mut R,
) {
    let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
    store.insert_uniform(format!("{prefix}.w"), (fan_in, fan_out), scale, group, rng);
    store.insert(format!("{prefix}.b"), Array2::zeros((1, fan_out)), group);
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize, group: ParamGroup) {
    store.insert(format!("{prefix}.gain"), Array2::ones((1, dim)), group);
    store.insert(format!("{prefix}.bias"), Array2::zeros((1, dim)), group);
}

pub fn linear(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let w = g.param_named(&format!("{prefix}.w"));
    let b = g.param_named(&format!("{prefix}.b"));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

pub fn layer_norm(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let gain = g.param_named(&format!("{prefix}.gain"));
    let bias = g.param_named(&format!("{prefix}.bias"));
    g.layer_norm(x, gain, bias, 1e-5)
}

/// Multi-head scaled dot-product attention. `mask` is added to the raw
/// scores (use `-inf` to block a key).
pub fn attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    prefix: &str,
    heads: usize,
    mask: Option<&Mat>,
) -> Var {
    let q = linear(g, queries, &format!("{prefix}.q"));
    let k = linear(g, keys_values, &format!("{prefix}.k"));
    let v = linear(g, keys_values, &format!("{prefix}.v"));
    let d = g.shape(q).1;
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mask = mask.map(|m| g.constant(m.clone()));
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim);
        let kh = g.slice_cols(k, h * head_dim, head_dim);
        let vh = g.slice_cols(v, h * head_dim, head_dim);
        let scores = g.matmul_t(qh, kh);
        let mut scores = g.scale(scores, scale);
        if let Some(m) = mask {
            scores = g.add(scores, m);
        }
        let weights = g.softmax(scores);
        outs.push(g.matmul(weights, vh));
    }
    let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
    linear(g, joined, &format!("{prefix}.o"))
}

pub fn init_attention<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    dim: usize,
    group: ParamGroup,
    rng: &mut R,
) {
    for part in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.{part}"), dim, dim, group, rng);
    }
}

pub fn feed_forward(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let h = linear(g, x, &format!("{prefix}.fc1"));
    let h = g.relu(h);
    linear(g, h, &format!("{prefix}.fc2"))
}

pub fn init_feed_forward<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    dim: usize,
    hidden: usize,
    group: ParamGroup,
    rng: &mut R,
) {
    init_linear(store, &format!("{prefix}.fc1"), dim, hidden, group, rng);
    init_linear(store, &format!("{prefix}.fc2"), hidden, dim, group, rng);
}
