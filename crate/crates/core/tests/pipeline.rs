use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crs_core::backbone::BackboneConfig;
use crs_core::checkpoint::{load_model, save_model, Checkpoint};
use crs_core::corpus::synthetic::{generate, SyntheticConfig};
use crs_core::corpus::{ExampleConfig, Split, TrainingExample};
use crs_core::dataset::{prepare, PreparedData, VocabConfig};
use crs_core::graph_encoder::RgcnConfig;
use crs_core::report;
use crs_core::training::{self, TrainHooks};
use crs_core::{
    ColdStartPolicy, CrsError, CrsModel, DecodeConfig, FusionBranch, FusionConfig, ModelConfig, PreferenceHistory,
    TrainConfig, TrainState, Variant,
};

fn data() -> PreparedData {
    let syn = generate(&SyntheticConfig {
        conversations: 60,
        ..Default::default()
    });
    let kg = syn.knowledge_graph(true);
    let aliases = syn.alias_index(&kg);
    prepare(syn.loaded(), kg, aliases, &HashMap::new(), &VocabConfig::default()).unwrap()
}

fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        backbone: BackboneConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 64,
        },
        rgcn: RgcnConfig {
            dim: 8,
            ..Default::default()
        },
        examples: ExampleConfig {
            max_len: 48,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn model(data: &PreparedData, variant: Variant, seed: u64) -> CrsModel {
    CrsModel::new(
        config(variant),
        data.kg.clone(),
        data.aliases.clone(),
        data.catalog.clone(),
        data.vocab.clone(),
        seed,
    )
    .unwrap()
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        seed,
        max_tokens_per_batch: 512,
        update_frequency: 1,
        warmup_updates: 5,
        ..Default::default()
    }
}

fn trained(data: &PreparedData, variant: Variant, seed: u64) -> CrsModel {
    let ex = |s| data.examples(s, &config(variant).examples);
    let mut m = model(data, variant, seed);
    training::train(
        &mut m,
        &ex(Split::Train),
        &ex(Split::Valid),
        &train_cfg(seed),
        &FusionConfig::default(),
        TrainState::default(),
        TrainHooks::default(),
    )
    .unwrap();
    m
}

fn test_examples(data: &PreparedData) -> Vec<TrainingExample> {
    data.examples(Split::Test, &config(Variant::Full).examples)
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn prepared_data_round_trips_byte_for_byte() {
    let d = data();
    let tmp = tempfile::tempdir().unwrap();
    d.save(tmp.path().join("a")).unwrap();
    let back = PreparedData::load(tmp.path().join("a")).unwrap();
    back.save(tmp.path().join("b")).unwrap();
    assert_eq!(read_dir(&tmp.path().join("a")), read_dir(&tmp.path().join("b")));
    assert_eq!(back.stats, d.stats);
    let cfg = ExampleConfig::default();
    assert_eq!(back.examples(Split::Train, &cfg), d.examples(Split::Train, &cfg));
}

#[test]
fn checkpoint_round_trip_preserves_recommendations_and_responses() {
    let d = data();
    let m = trained(&d, Variant::Full, 3);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    save_model(&m, TrainState { epoch: 1, step: 9 }, &path).unwrap();
    let (back, state) = load_model(&path).unwrap();
    assert_eq!(state, TrainState { epoch: 1, step: 9 });
    assert_eq!(back.config, m.config);

    let fusion = FusionConfig::default();
    let (t1, t2) = (m.entity_table().unwrap(), back.entity_table().unwrap());
    let decode = DecodeConfig {
        max_new_tokens: 8,
        ..Default::default()
    };
    for ex in test_examples(&d).iter().take(10) {
        let a = m.recommend(&t1, &ex.context_tokens, &ex.history, &fusion).unwrap();
        let b = back.recommend(&t2, &ex.context_tokens, &ex.history, &fusion).unwrap();
        assert_eq!(a.p_rec.probs(), b.p_rec.probs());
        assert_eq!(a.branch, b.branch);
        let bias = m.build_bias(&a.p_rec).unwrap();
        let ha = m.generate(&ex.context_tokens, Some(&bias), &decode).unwrap();
        let hb = back.generate(&ex.context_tokens, Some(&bias), &decode).unwrap();
        assert_eq!(ha[0].tokens, hb[0].tokens);
    }
}

#[test]
fn checkpoint_header_is_checked() {
    let d = data();
    let m = model(&d, Variant::Full, 1);
    let mut ck = Checkpoint::from_model(&m, TrainState::default());
    ck.version += 1;
    assert!(matches!(ck.clone().into_model(), Err(CrsError::Checkpoint(_))));
    ck.version -= 1;
    ck.format = "something-else".into();
    assert!(matches!(ck.into_model(), Err(CrsError::Checkpoint(_))));

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.ckpt");
    fs::write(&path, "{\"format\":").unwrap();
    assert!(matches!(load_model(&path), Err(CrsError::Checkpoint(_))));
}

#[test]
fn cold_start_falls_back_to_the_context_signal() {
    let d = data();
    let m = model(&d, Variant::Full, 2);
    let table = m.entity_table().unwrap();
    let ex = test_examples(&d).into_iter().next().unwrap();
    let empty = PreferenceHistory::default();

    let rec = m.recommend(&table, &ex.context_tokens, &empty, &FusionConfig::default()).unwrap();
    assert_eq!(rec.branch, FusionBranch::ContextOnly);
    assert!(rec.p_e.is_none());
    assert_eq!(rec.p_rec.probs(), rec.p_c.as_ref().unwrap().probs());

    let uniform = FusionConfig {
        cold_start_policy: ColdStartPolicy::UniformEntity,
        ..Default::default()
    };
    let rec = m.recommend(&table, &ex.context_tokens, &empty, &uniform).unwrap();
    assert_eq!(rec.branch, FusionBranch::UniformEntity);
    let n = m.num_items() as f64;
    let p_c = rec.p_c.unwrap();
    for (i, p) in rec.p_rec.probs().iter().enumerate() {
        if m.support()[i] {
            assert!((p - (0.5 / n + 0.5 * p_c.probs()[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn variants_use_only_their_signals() {
    let d = data();
    let ex = test_examples(&d).into_iter().find(|e| !e.history.is_empty()).unwrap();
    let fusion = FusionConfig::default();
    for variant in [Variant::ContextOnly, Variant::EntitySelfA, Variant::EntityTimeA, Variant::Full] {
        let m = model(&d, variant, 4);
        let table = if variant.uses_entities() { m.entity_table().unwrap() } else { m.empty_table() };
        let rec = m.recommend(&table, &ex.context_tokens, &ex.history, &fusion).unwrap();
        assert_eq!(rec.p_e.is_some(), variant.uses_entities(), "{variant:?}");
        assert_eq!(rec.p_c.is_some(), variant.uses_context(), "{variant:?}");
        assert!((rec.p_rec.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn training_and_evaluation_are_reproducible() {
    let d = data();
    let ex = test_examples(&d);
    let fusion = FusionConfig::default();
    let run = || {
        let m = trained(&d, Variant::Full, 11);
        report::evaluate_recommendation(&m, &ex, &fusion, &[1, 10, 50], false).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.variant, "full");
    assert!(a.instances > 0);
    assert_eq!(a.recall.len(), 3);
    assert_eq!(a.cold_start.values().map(|b| b.count).sum::<usize>(), a.instances);
}

#[test]
fn generated_outputs_line_up_with_examples() {
    let d = data();
    let m = trained(&d, Variant::Full, 5);
    let ex: Vec<_> = test_examples(&d).into_iter().take(6).collect();
    let decode = DecodeConfig {
        max_new_tokens: 10,
        ..Default::default()
    };
    let out = report::generate_outputs(&m, &ex, &FusionConfig::default(), &decode, false).unwrap();
    assert_eq!(out.len(), ex.len());
    for ((o, words), e) in out.iter().zip(&ex) {
        assert_eq!(o.context_id, format!("{}:{}", e.conversation_id, e.turn_index));
        assert_eq!(o.ranked_items.len(), 10);
        assert!(words.len() <= 10);
    }
}
