//! Trains a small model on the synthetic corpus and shows one turn.
//!
//! cargo run --release -p crs-core --example quickstart -- [variant] [epochs]

use std::collections::HashMap;

use crs_core::backbone::BackboneConfig;
use crs_core::corpus::synthetic::{generate, SyntheticConfig};
use crs_core::corpus::{ExampleConfig, RenderMode, Split};
use crs_core::dataset::{prepare, VocabConfig};
use crs_core::graph_encoder::RgcnConfig;
use crs_core::recommender::top_k_items;
use crs_core::report;
use crs_core::training::{train, TrainHooks};
use crs_core::{CrsModel, DecodeConfig, FusionConfig, ModelConfig, TrainConfig, TrainState, Variant};

fn main() -> crs_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant = Variant::parse(args.next().as_deref().unwrap_or("full"))?;
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let syn = generate(&SyntheticConfig::default());
    let kg = syn.knowledge_graph(true);
    let aliases = syn.alias_index(&kg);
    let data = prepare(syn.loaded(), kg, aliases, &HashMap::new(), &VocabConfig::default())?;
    println!("{:?}", data.stats);

    let examples = ExampleConfig {
        max_len: 48,
        ..Default::default()
    };
    let config = ModelConfig {
        variant,
        backbone: BackboneConfig {
            d_model: 32,
            heads: 2,
            ffn_dim: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 64,
        },
        rgcn: RgcnConfig {
            dim: 32,
            ..Default::default()
        },
        examples,
        ..Default::default()
    };
    let mut model = CrsModel::new(config, data.kg.clone(), data.aliases.clone(), data.catalog.clone(), data.vocab.clone(), 1)?;
    let (train_set, valid_set, test_set) = (
        data.examples(Split::Train, &examples),
        data.examples(Split::Valid, &examples),
        data.examples(Split::Test, &examples),
    );
    let cfg = TrainConfig {
        epochs,
        max_tokens_per_batch: 512,
        update_frequency: 1,
        warmup_updates: 50,
        ..Default::default()
    };
    let fusion = FusionConfig::default();
    let rep = train(&mut model, &train_set, &valid_set, &cfg, &fusion, TrainState::default(), TrainHooks::default())?;
    for e in &rep.epochs {
        println!(
            "epoch {:>2}  gen {:>7.3}  rec {:>6.3}  valid R@50 {:>5.1}",
            e.epoch,
            e.mean.gen_loss,
            e.mean.rec_loss,
            e.valid_recall.unwrap_or(f64::NAN)
        );
    }

    let eval = report::evaluate_recommendation(&model, &test_set, &fusion, &[1, 10, 50], false)?;
    println!("test {:?}", eval.recall);

    let ex = &test_set[0];
    let table = model.entity_table()?;
    let rec = model.recommend(&table, &ex.context_tokens, &ex.history, &fusion)?;
    let context = model.vocab.decode(&ex.context_tokens, &model.catalog, RenderMode::Names).text;
    println!("\ncontext: {context}");
    for item in top_k_items(&rec.p_rec, 3, &model.catalog) {
        println!("  {:.3}  {}", item.prob, item.name);
    }
    let bias = model.build_bias(&rec.p_rec)?;
    let hyps = model.generate(&ex.context_tokens, Some(&bias), &DecodeConfig::default())?;
    if let Some(best) = hyps.first() {
        println!("reply: {}", model.vocab.decode(&best.tokens, &model.catalog, RenderMode::Names).text);
    }
    Ok(())
}
