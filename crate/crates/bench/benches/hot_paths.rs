use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crs_bench::{examples, small_model, synthetic_data};
use crs_core::corpus::Split;
use crs_core::evaluation::{self, KneserNeyLm, RecEvalInstance};
use crs_core::graph_encoder;
use crs_core::report;
use crs_core::{DecodeConfig, FusionConfig, Strategy};

fn rgcn(c: &mut Criterion) {
    let data = synthetic_data(200);
    let mut group = c.benchmark_group("rgcn_forward");
    for dim in [32, 128] {
        let model = small_model(&data, 16, dim);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &model, |b, m| {
            b.iter(|| graph_encoder::entity_table(&m.store, &m.kg, &m.config.rgcn).unwrap())
        });
    }
    group.finish();
}

fn recommend(c: &mut Criterion) {
    let data = synthetic_data(200);
    let model = small_model(&data, 32, 32);
    let table = model.entity_table().unwrap();
    let ex = examples(&data, Split::Test);
    let ex = ex.iter().find(|e| !e.history.is_empty()).unwrap();
    let fusion = FusionConfig::default();
    c.bench_function("recommend", |b| {
        b.iter(|| model.recommend(&table, black_box(&ex.context_tokens), &ex.history, &fusion).unwrap())
    });
}

fn decode(c: &mut Criterion) {
    let data = synthetic_data(200);
    let model = small_model(&data, 32, 32);
    let table = model.entity_table().unwrap();
    let ex = &examples(&data, Split::Test)[0];
    let rec = model.recommend(&table, &ex.context_tokens, &ex.history, &FusionConfig::default()).unwrap();
    let bias = model.build_bias(&rec.p_rec).unwrap();
    let mut group = c.benchmark_group("decode");
    group.sample_size(20);
    for (name, strategy) in [
        ("greedy", Strategy::Greedy),
        ("beam", Strategy::Beam),
        ("diverse_beam", Strategy::DiverseBeam),
    ] {
        let cfg = DecodeConfig {
            strategy,
            max_new_tokens: 20,
            ..Default::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| model.generate(&ex.context_tokens, Some(&bias), &cfg).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let instances: Vec<RecEvalInstance> = (0..2000)
        .map(|_| {
            let target = rng.random_range(0..500);
            RecEvalInstance {
                ranked: (0..100).map(|_| format!("i{}", rng.random_range(0..500))).collect(),
                target: format!("i{target}"),
                history_length: rng.random_range(0..8),
            }
        })
        .collect();
    c.bench_function("recall_at_50", |b| b.iter(|| evaluation::recall_at_k(black_box(&instances), 50).unwrap()));

    let words = ["the", "a", "movie", "film", "great", "scary", "funny", "like", "you", "watch", "should", "it"];
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<&str> {
        (0..rng.random_range(4..16)).map(|_| words[rng.random_range(0..words.len())]).collect()
    };
    let hyps: Vec<Vec<&str>> = (0..1000).map(|_| sentence(&mut rng)).collect();
    let refs: Vec<Vec<&str>> = (0..1000).map(|_| sentence(&mut rng)).collect();
    let pairs: Vec<(Vec<&str>, Vec<&str>)> = hyps.iter().cloned().zip(refs.iter().cloned()).collect();
    c.bench_function("dist_2", |b| b.iter(|| evaluation::dist_n(black_box(&hyps), 2)));
    c.bench_function("bleu_4", |b| b.iter(|| evaluation::bleu_n(black_box(&pairs), 4).unwrap()));
    c.bench_function("kn_train_order3", |b| b.iter(|| KneserNeyLm::train(black_box(&refs), 3).unwrap()));
    let lm = KneserNeyLm::train(&refs, 3).unwrap();
    c.bench_function("kn_ppl", |b| b.iter(|| evaluation::ngram_ppl(black_box(&hyps), &lm).unwrap()));
}

fn eval_pass(c: &mut Criterion) {
    let data = synthetic_data(200);
    let model = small_model(&data, 32, 32);
    let ex = examples(&data, Split::Test);
    let fusion = FusionConfig::default();
    let mut group = c.benchmark_group("evaluation");
    group.sample_size(10);
    group.bench_function("rec_instances", |b| {
        b.iter(|| report::rec_instances(&model, &ex, &fusion, false).unwrap())
    });
    group.finish();
}

criterion_group!(benches, rgcn, recommend, decode, metrics, eval_pass);
criterion_main!(benches);
