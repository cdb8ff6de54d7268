//! Fixtures shared by the benchmarks.

use std::collections::HashMap;

use crs_core::backbone::BackboneConfig;
use crs_core::corpus::synthetic::{generate, SyntheticConfig};
use crs_core::corpus::{ExampleConfig, Split, TrainingExample};
use crs_core::dataset::{prepare, PreparedData, VocabConfig};
use crs_core::graph_encoder::RgcnConfig;
use crs_core::{CrsModel, ModelConfig};

pub fn synthetic_data(conversations: usize) -> PreparedData {
    let syn = generate(&SyntheticConfig {
        conversations,
        ..Default::default()
    });
    let kg = syn.knowledge_graph(true);
    let aliases = syn.alias_index(&kg);
    prepare(syn.loaded(), kg, aliases, &HashMap::new(), &VocabConfig::default()).expect("synthetic data links")
}

/// A small untrained model; speed does not depend on the weights.
pub fn small_model(data: &PreparedData, d_model: usize, rgcn_dim: usize) -> CrsModel {
    let config = ModelConfig {
        backbone: BackboneConfig {
            d_model,
            heads: 2,
            ffn_dim: 2 * d_model,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 128,
        },
        rgcn: RgcnConfig {
            dim: rgcn_dim,
            ..Default::default()
        },
        examples: ExampleConfig {
            max_len: 96,
            ..Default::default()
        },
        ..Default::default()
    };
    CrsModel::new(
        config,
        data.kg.clone(),
        data.aliases.clone(),
        data.catalog.clone(),
        data.vocab.clone(),
        1,
    )
    .expect("model builds")
}

pub fn examples(data: &PreparedData, split: Split) -> Vec<TrainingExample> {
    data.examples(split, &ExampleConfig { max_len: 96, ..Default::default() })
}
