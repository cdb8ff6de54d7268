//! Small pre-layer-norm transformer encoder–decoder with a tied output
//! projection over the extended vocabulary.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{CrsError, Result};
use crate::nn::{self, Graph, Mat, ParamGroup, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            max_positions: 256,
        }
    }
}

pub const TOK_BASE: &str = "bb.tok_base";
pub const TOK_ITEMS: &str = "bb.tok_items";
const POS: &str = "bb.pos";
const OUT_BIAS: &str = "bb.out_bias";

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(CrsError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.max_positions == 0 {
            return Err(CrsError::Config("backbone needs at least one layer per stack".into()));
        }
        Ok(())
    }
}

/// Adds backbone parameters. Word embeddings and transformer weights go in
/// `group`; item-token embeddings are always new.
pub fn init_params(
    store: &mut ParamStore,
    cfg: &BackboneConfig,
    vocab: &Vocabulary,
    group: ParamGroup,
    seed: u64,
) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    let emb_scale = 1.0 / (d as f64).sqrt();
    store.insert_uniform(TOK_BASE, (vocab.base_len(), d), emb_scale, group, &mut rng);
    store.insert_uniform(TOK_ITEMS, (vocab.item_count(), d), emb_scale, ParamGroup::New, &mut rng);
    store.insert_uniform(POS, (cfg.max_positions + 1, d), emb_scale, group, &mut rng);
    store.insert(OUT_BIAS, Array2::zeros((1, vocab.len())), group);
    for l in 0..cfg.encoder_layers {
        let p = format!("bb.enc{l}");
        nn::init_layer_norm(store, &format!("{p}.ln1"), d, group);
        nn::init_attention(store, &format!("{p}.att"), d, group, &mut rng);
        nn::init_layer_norm(store, &format!("{p}.ln2"), d, group);
        nn::init_feed_forward(store, &format!("{p}.ffn"), d, cfg.ffn_dim, group, &mut rng);
    }
    nn::init_layer_norm(store, "bb.enc.ln", d, group);
    for l in 0..cfg.decoder_layers {
        let p = format!("bb.dec{l}");
        nn::init_layer_norm(store, &format!("{p}.ln1"), d, group);
        nn::init_attention(store, &format!("{p}.self"), d, group, &mut rng);
        nn::init_layer_norm(store, &format!("{p}.ln2"), d, group);
        nn::init_attention(store, &format!("{p}.cross"), d, group, &mut rng);
        nn::init_layer_norm(store, &format!("{p}.ln3"), d, group);
        nn::init_feed_forward(store, &format!("{p}.ffn"), d, cfg.ffn_dim, group, &mut rng);
    }
    nn::init_layer_norm(store, "bb.dec.ln", d, group);
    Ok(())
}

/// Replaces the item-token block after the catalog changed, keeping word
/// embeddings.
pub fn resize_items(store: &mut ParamStore, vocab: &Vocabulary, d: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store.insert_uniform(TOK_ITEMS, (vocab.item_count(), d), 1.0 / (d as f64).sqrt(), ParamGroup::New, &mut rng);
    let bias = store.get(OUT_BIAS).cloned().unwrap_or_else(|| Array2::zeros((1, 0)));
    let mut fresh = Array2::zeros((1, vocab.len()));
    let keep = bias.ncols().min(vocab.base_len());
    fresh
        .slice_mut(ndarray::s![.., ..keep])
        .assign(&bias.slice(ndarray::s![.., ..keep]));
    let group = store.id(OUT_BIAS).map(|id| store.group(id)).unwrap_or(ParamGroup::New);
    store.insert(OUT_BIAS, fresh, group);
}

/// Encoder output for one context.
pub struct ContextEncoding {
    /// `[n, d]` states of the non-pad positions.
    pub states: Var,
    /// `[n_all, d]` states of every position, for cross-attention.
    pub memory: Var,
    /// Additive key mask over `memory` rows.
    pub memory_mask: Option<Mat>,
}

fn full_embedding(g: &mut Graph) -> Var {
    let base = g.param_named(TOK_BASE);
    let items = g.param_named(TOK_ITEMS);
    g.concat_rows(&[base, items])
}

fn embed(g: &mut Graph, table: Var, tokens: &[TokenId], offset: usize, cfg: &BackboneConfig) -> Result<Var> {
    let vocab_size = g.shape(table).0;
    if let Some(&bad) = tokens.iter().find(|t| **t as usize >= vocab_size) {
        return Err(CrsError::TokenOutOfRange {
            id: bad as usize,
            size: vocab_size,
        });
    }
    if offset + tokens.len() > cfg.max_positions {
        return Err(CrsError::Overlength {
            len: offset + tokens.len(),
            max: cfg.max_positions,
        });
    }
    let idx: Vec<usize> = tokens.iter().map(|t| *t as usize).collect();
    let tok = g.gather(table, &idx);
    let pos_table = g.param_named(POS);
    let positions: Vec<usize> = (offset..offset + tokens.len()).map(|p| p + 1).collect();
    let pos = g.gather(pos_table, &positions);
    Ok(g.add(tok, pos))
}

fn key_mask(queries: usize, keys: &[TokenId]) -> Option<Mat> {
    if !keys.contains(&Vocabulary::PAD) {
        return None;
    }
    Some(Array2::from_shape_fn((queries, keys.len()), |(_, j)| {
        if keys[j] == Vocabulary::PAD {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }))
}

pub fn encode(g: &mut Graph, cfg: &BackboneConfig, tokens: &[TokenId]) -> Result<ContextEncoding> {
    let real: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i] != Vocabulary::PAD).collect();
    if real.is_empty() {
        return Err(CrsError::Empty("context has no tokens".into()));
    }
    let table = full_embedding(g);
    let mut x = embed(g, table, tokens, 0, cfg)?;
    let mask = key_mask(tokens.len(), tokens);
    for l in 0..cfg.encoder_layers {
        let p = format!("bb.enc{l}");
        let h = nn::layer_norm(g, x, &format!("{p}.ln1"));
        let a = nn::attention(g, h, h, &format!("{p}.att"), cfg.heads, mask.as_ref());
        x = g.add(x, a);
        let h = nn::layer_norm(g, x, &format!("{p}.ln2"));
        let f = nn::feed_forward(g, h, &format!("{p}.ffn"));
        x = g.add(x, f);
    }
    let memory = nn::layer_norm(g, x, "bb.enc.ln");
    let states = if real.len() == tokens.len() {
        memory
    } else {
        g.gather(memory, &real)
    };
    Ok(ContextEncoding {
        states,
        memory,
        memory_mask: mask.map(|m| m.row(0).to_owned().insert_axis(ndarray::Axis(0))),
    })
}

/// Masked mean of the encoder states, `[1, d]`.
pub fn pooled(g: &mut Graph, enc: &ContextEncoding) -> Var {
    g.mean_rows(enc.states)
}

fn causal_mask(n: usize) -> Mat {
    Array2::from_shape_fn((n, n), |(i, j)| if j > i { f64::NEG_INFINITY } else { 0.0 })
}

/// Decoder logits over the extended vocabulary, one row per input token.
pub fn decode_logits(
    g: &mut Graph,
    cfg: &BackboneConfig,
    enc: &ContextEncoding,
    inputs: &[TokenId],
) -> Result<Var> {
    let table = full_embedding(g);
    let mut x = embed(g, table, inputs, 0, cfg)?;
    let n = inputs.len();
    let self_mask = causal_mask(n);
    let cross_mask = enc.memory_mask.as_ref().map(|row| {
        let cols = row.ncols();
        Array2::from_shape_fn((n, cols), |(_, j)| row[[0, j]])
    });
    for l in 0..cfg.decoder_layers {
        let p = format!("bb.dec{l}");
        let h = nn::layer_norm(g, x, &format!("{p}.ln1"));
        let a = nn::attention(g, h, h, &format!("{p}.self"), cfg.heads, Some(&self_mask));
        x = g.add(x, a);
        let h = nn::layer_norm(g, x, &format!("{p}.ln2"));
        let c = nn::attention(g, h, enc.memory, &format!("{p}.cross"), cfg.heads, cross_mask.as_ref());
        x = g.add(x, c);
        let h = nn::layer_norm(g, x, &format!("{p}.ln3"));
        let f = nn::feed_forward(g, h, &format!("{p}.ffn"));
        x = g.add(x, f);
    }
    let h = nn::layer_norm(g, x, "bb.dec.ln");
    let logits = g.matmul_t(h, table);
    let bias = g.param_named(OUT_BIAS);
    Ok(g.add_row(logits, bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemCatalog;

    fn setup() -> (ParamStore, BackboneConfig, Vocabulary) {
        let mut catalog = ItemCatalog::default();
        catalog.insert("1", "A");
        let mut vocab = Vocabulary::build(["a b c d"], 1, None);
        vocab.extend_with_items(&catalog);
        let cfg = BackboneConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 16,
        };
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, &vocab, ParamGroup::Pretrained, 3).unwrap();
        (store, cfg, vocab)
    }

    #[test]
    fn one_state_per_token() {
        let (store, cfg, vocab) = setup();
        let mut g = Graph::with_params(&store);
        let toks: Vec<TokenId> = vocab.encode_text("a b c");
        let enc = encode(&mut g, &cfg, &toks).unwrap();
        assert_eq!(g.shape(enc.states), (3, 8));
        let logits = decode_logits(&mut g, &cfg, &enc, &[Vocabulary::BOS, toks[0]]).unwrap();
        assert_eq!(g.shape(logits), (2, vocab.len()));
    }

    #[test]
    fn trailing_pads_do_not_change_pooling() {
        let (store, cfg, vocab) = setup();
        let toks = vocab.encode_text("a b c");
        let mut padded = toks.clone();
        padded.extend([Vocabulary::PAD, Vocabulary::PAD]);
        let mut g = Graph::with_params(&store);
        let e1 = encode(&mut g, &cfg, &toks).unwrap();
        let p1 = pooled(&mut g, &e1);
        let e2 = encode(&mut g, &cfg, &padded).unwrap();
        let p2 = pooled(&mut g, &e2);
        for (a, b) in g.value(p1).iter().zip(g.value(p2).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_is_causal() {
        let (store, cfg, vocab) = setup();
        let toks = vocab.encode_text("a b");
        let mut g = Graph::with_params(&store);
        let enc = encode(&mut g, &cfg, &toks).unwrap();
        let short = decode_logits(&mut g, &cfg, &enc, &[Vocabulary::BOS, toks[0]]).unwrap();
        let long = decode_logits(&mut g, &cfg, &enc, &[Vocabulary::BOS, toks[0], toks[1]]).unwrap();
        let (a, b) = (g.value(short).clone(), g.value(long).clone());
        for j in 0..a.ncols() {
            assert!((a[[1, j]] - b[[1, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn overlength_and_out_of_range_are_errors() {
        let (store, cfg, vocab) = setup();
        let mut g = Graph::with_params(&store);
        let long = vec![5; 17];
        assert!(matches!(encode(&mut g, &cfg, &long), Err(CrsError::Overlength { .. })));
        let bad = vec![vocab.len() as TokenId];
        assert!(matches!(encode(&mut g, &cfg, &bad), Err(CrsError::TokenOutOfRange { .. })));
    }
}
