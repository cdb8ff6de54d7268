//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a gating criterion fails.
//!
//! The desk-scale ablations (criteria 6 to 8) train on a synthetic corpus
//! in the ReDial release format: 500 conversations, 30% of them cold-start,
//! split 60/10/30 by position so the cold-start bucket of the test split
//! has a few dozen cases. The backbone is a one-layer encoder-decoder with
//! `d_model = 32`, trained for 20 epochs at 512 tokens per update with 50
//! warmup updates; every other setting keeps its default. Each number is
//! the median over seeds 1, 2 and 3.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crs_core::backbone::BackboneConfig;
use crs_core::context_encoder::{self, ContextHeadConfig};
use crs_core::corpus::synthetic::{generate, SyntheticConfig};
use crs_core::corpus::{assign_splits, ExampleConfig, Split, TokenId};
use crs_core::dataset::{prepare, VocabConfig};
use crs_core::evaluation::{self, KneserNeyLm, RecEvalInstance};
use crs_core::generator::{self, DecodeConfig, Strategy, VocabBias};
use crs_core::graph_encoder::{self, RgcnConfig};
use crs_core::model::{CrsModel, ModelConfig, Variant};
use crs_core::nn::{Graph, ParamStore};
use crs_core::preference::{self, PreferenceHistory};
use crs_core::recommender::{fuse, FusionConfig};
use crs_core::report;
use crs_core::training::{self, TrainConfig, TrainHooks, TrainState};
use crs_core::{EntityId, KnowledgeGraph, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed<F: FnOnce() -> Outcome>(limit: Duration, f: F) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > limit {
        o.pass = false;
    }
    o.detail = format!("{} [{:.2?} of {:.0?}]", o.detail, took, limit);
    o
}

fn random_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

// 1. Time-aware attention against the direct formula.
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for lambda in [0.5, 1.0, 1.5, 2.0] {
        for len in 1..=6 {
            for _ in 0..20 {
                let table = random_table(&mut rng, 12, 5);
                let ids: Vec<EntityId> = (0..len).map(|_| EntityId(rng.random_range(0..12))).collect();
                let history = PreferenceHistory::new(ids.clone());
                let got = preference::time_aware_summary(&history, &table, lambda).unwrap();
                let z: f64 = (0..len).map(|j| lambda.powi(j as i32)).sum();
                let mut want = Array1::<f64>::zeros(5);
                for (i, e) in ids.iter().enumerate() {
                    want = want + table.row(e.index()).to_owned() * (lambda.powi(i as i32) / z);
                }
                worst = worst.max((&got - &want).iter().fold(0.0, |m, v| m.max(v.abs())));
                if lambda == 1.0 {
                    let mut mean = Array1::<f64>::zeros(5);
                    for e in &ids {
                        mean = mean + table.row(e.index());
                    }
                    mean /= len as f64;
                    worst = worst.max((&got - &mean).iter().fold(0.0, |m, v| m.max(v.abs())));
                }
            }
        }
    }
    let w = preference::time_aware_weights(3, 2.0);
    let sevenths = [1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
    let weights_ok = w.iter().zip(sevenths).all(|(a, b)| (a - b).abs() <= 1e-10);
    outcome(
        worst <= 1e-10 && weights_ok,
        format!("max abs error {worst:.1e}, lambda=2 weights {w:.6?}"),
    )
}

fn random_kg(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let entities = rng.random_range(4..=20);
    let relations = rng.random_range(1..=3);
    let names: Vec<String> = (0..entities).map(|i| format!("e{i}")).collect();
    let rels: Vec<String> = (0..relations).map(|i| format!("r{i}")).collect();
    let triples: Vec<(usize, usize, usize)> = (0..rng.random_range(entities..3 * entities))
        .map(|_| {
            (
                rng.random_range(0..entities),
                rng.random_range(0..relations),
                rng.random_range(0..entities),
            )
        })
        .collect();
    let inverse = rng.random_bool(0.5);
    let mut kg = KnowledgeGraph::from_triples(
        triples.iter().map(|(h, r, t)| (names[*h].as_str(), rels[*r].as_str(), names[*t].as_str())),
        inverse,
    );
    for n in &names {
        kg.ensure_entity(n);
    }
    kg
}

/// One R-GCN layer written as a loop over triples.
fn rgcn_loop_oracle(kg: &KnowledgeGraph, store: &ParamStore, layers: usize) -> Array2<f64> {
    let mut h = store.get(graph_encoder::EMBEDDING).unwrap().clone();
    let base = kg.num_relations();
    for l in 0..layers {
        let w = |r: usize| store.get(&format!("rgcn.l{l}.w{r}")).unwrap().clone();
        let w_self = w(kg.self_loop());
        let mut out = Array2::<f64>::zeros(h.dim());
        for e in 0..h.nrows() {
            let v = w_self.dot(&h.row(e));
            out.row_mut(e).scaled_add(1.0, &v);
        }
        for &(head, r, tail) in kg.triples() {
            let (head, r, tail) = (head as usize, r as usize, tail as usize);
            let msg = w(r).dot(&h.row(head));
            out.row_mut(tail).scaled_add(1.0, &msg);
            if kg.inverse() {
                let msg = w(base + r).dot(&h.row(tail));
                out.row_mut(head).scaled_add(1.0, &msg);
            }
        }
        h = out.mapv(|v| v.max(0.0));
    }
    h
}

fn rec_loss_value(store: &ParamStore, kg: &KnowledgeGraph, cfg: &RgcnConfig, history: &PreferenceHistory, targets: &[EntityId]) -> f64 {
    let mut g = Graph::with_params(store);
    let table = graph_encoder::rgcn_forward(&mut g, kg, cfg);
    let loss = training::entity_rec_loss_var(
        &mut g,
        table,
        history,
        preference::Summarizer::TimeAware { lambda: 1.5 },
        None,
        kg.item_mask(),
        targets,
    )
    .unwrap();
    g.scalar(loss)
}

// 2. R-GCN forward against the loop oracle, and gradients of the
// recommendation loss against central finite differences.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut forward_err = 0.0f64;
    let mut grad_err = 0.0f64;
    for case in 0..12 {
        let mut kg = random_kg(&mut rng);
        let n = kg.num_entities();
        let items: Vec<EntityId> = (0..n).filter(|i| i % 2 == 0).map(|i| EntityId(i as u32)).collect();
        kg.set_items(items.iter().copied());
        let cfg = RgcnConfig {
            dim: rng.random_range(2..=8),
            layers: 1 + case % 2,
            bases: None,
        };
        let mut store = graph_encoder::init_store(&kg, &cfg, case as u64).unwrap();
        let table = graph_encoder::entity_table(&store, &kg, &cfg).unwrap();
        let oracle = rgcn_loop_oracle(&kg, &store, cfg.layers);
        forward_err = forward_err.max((&table - &oracle).iter().fold(0.0, |m, v| m.max(v.abs())));

        let history = PreferenceHistory::new((0..rng.random_range(1..=5)).map(|_| EntityId(rng.random_range(0..n as u32))).collect());
        let targets = vec![items[rng.random_range(0..items.len())]];
        let analytic = {
            let mut g = Graph::with_params(&store);
            let t = graph_encoder::rgcn_forward(&mut g, &kg, &cfg);
            let loss = training::entity_rec_loss_var(
                &mut g,
                t,
                &history,
                preference::Summarizer::TimeAware { lambda: 1.5 },
                None,
                kg.item_mask(),
                &targets,
            )
            .unwrap();
            g.backward(loss).into_params()
        };
        let eps = 1e-4;
        let (mut diff2, mut a2, mut f2) = (0.0, 0.0, 0.0);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.value(id).dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let orig = store.value(id)[[r, c]];
                    store.value_mut(id)[[r, c]] = orig + eps;
                    let up = rec_loss_value(&store, &kg, &cfg, &history, &targets);
                    store.value_mut(id)[[r, c]] = orig - eps;
                    let down = rec_loss_value(&store, &kg, &cfg, &history, &targets);
                    store.value_mut(id)[[r, c]] = orig;
                    let fd = (up - down) / (2.0 * eps);
                    let an = analytic.get(&id).map(|m| m[[r, c]]).unwrap_or(0.0);
                    diff2 += (an - fd) * (an - fd);
                    a2 += an * an;
                    f2 += fd * fd;
                }
            }
        }
        let rel = diff2.sqrt() / f64::max(a2.sqrt().max(f2.sqrt()), 1e-12);
        grad_err = grad_err.max(rel);
    }
    outcome(
        forward_err <= 1e-6 && grad_err <= 1e-4,
        format!("forward max err {forward_err:.1e}, gradient rel err {grad_err:.1e} over 12 graphs"),
    )
}

// 3. Distribution invariants over randomized cases.
fn criterion_3() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (2usize..30, 1usize..8, any::<u64>(), 0.0f64..=1.0);
    let result = runner.run(&strategy, |(entities, d, seed, mu)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut support: Vec<bool> = (0..entities).map(|_| rng.random_bool(0.5)).collect();
        support[rng.random_range(0..entities)] = true;
        let support: Arc<[bool]> = support.into();
        let table = random_table(&mut rng, entities, d) * 3.0;
        let history = PreferenceHistory::new(
            (0..rng.random_range(1..6)).map(|_| EntityId(rng.random_range(0..entities as u32))).collect(),
        );
        let summary = preference::time_aware_summary(&history, &table, rng.random_range(0.2..3.0)).unwrap();
        let p_e = preference::entity_scores(summary.view(), &table, support.clone()).unwrap();

        let mut store = ParamStore::new();
        let head = ContextHeadConfig::default();
        context_encoder::init_params(&mut store, &head, d, entities, seed);
        let pooled = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
        let p_c = context_encoder::context_scores(pooled.view(), &store, &head, support.clone()).unwrap();
        let cfg = FusionConfig { mu, ..Default::default() };
        let (p_rec, _) = fuse(Some(&p_e), &p_c, &cfg).unwrap();

        for p in [&p_e, &p_c, &p_rec] {
            let total: f64 = p.probs().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-6, "sum {}", total);
            for (i, s) in support.iter().enumerate() {
                if !s {
                    prop_assert_eq!(p.probs()[i], 0.0);
                }
            }
        }
        let one = fuse(Some(&p_e), &p_c, &FusionConfig { mu: 1.0, ..cfg }).unwrap().0;
        let zero = fuse(Some(&p_e), &p_c, &FusionConfig { mu: 0.0, ..cfg }).unwrap().0;
        prop_assert_eq!(one.probs(), p_e.probs());
        prop_assert_eq!(zero.probs(), p_c.probs());
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, "1000 cases: sums within 1e-6, zero off-support mass, exact endpoints"),
        Err(e) => outcome(false, format!("{e}")),
    }
}

/// Deterministic pseudo-random logits depending on the whole prefix.
fn toy_scorer(vocab: usize, seed: u64) -> impl FnMut(&[TokenId]) -> Result<Vec<f64>> {
    move |prefix: &[TokenId]| {
        let mut h = seed;
        for t in prefix {
            h = h.wrapping_mul(6364136223846793005).wrapping_add(*t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Make EOS likelier as the prefix grows.
        logits[3] += prefix.len() as f64 * 0.4;
        Ok(logits)
    }
}

fn same(a: &[generator::Hypothesis], b: &[generator::Hypothesis]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.tokens == y.tokens && x.score.to_bits() == y.score.to_bits() && x.log_prob.to_bits() == y.log_prob.to_bits()
        })
}

// 4. Decoding invariants on a toy vocabulary.
fn criterion_4() -> Outcome {
    let vocab = 40;
    let item_start = 30;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        for strategy in [Strategy::Greedy, Strategy::Beam, Strategy::DiverseBeam] {
            let cfg = DecodeConfig {
                strategy,
                beam_size: 4,
                groups: 2,
                max_new_tokens: 12,
                ..Default::default()
            };
            let zero = VocabBias::from_values(vec![0.0; vocab], item_start).unwrap();
            let plain = generator::decode(&mut toy_scorer(vocab, seed), None, &cfg).unwrap();
            let zeroed = generator::decode(&mut toy_scorer(vocab, seed), Some(&zero), &cfg).unwrap();
            if !same(&plain, &zeroed) {
                failures.push(format!("zero bias changed output ({strategy:?}, seed {seed})"));
            }
        }
        let greedy = DecodeConfig {
            strategy: Strategy::Greedy,
            max_new_tokens: 12,
            ..Default::default()
        };
        let beam1 = DecodeConfig {
            strategy: Strategy::Beam,
            beam_size: 1,
            ..greedy
        };
        let a = generator::decode(&mut toy_scorer(vocab, seed), None, &greedy).unwrap();
        let b = generator::decode(&mut toy_scorer(vocab, seed), None, &beam1).unwrap();
        if a[0].tokens != b[0].tokens {
            failures.push(format!("beam 1 differs from greedy (seed {seed})"));
        }
        let beam = DecodeConfig {
            strategy: Strategy::Beam,
            beam_size: 4,
            ..greedy
        };
        let diverse1 = DecodeConfig {
            strategy: Strategy::DiverseBeam,
            groups: 1,
            ..beam
        };
        let a = generator::decode(&mut toy_scorer(vocab, seed), None, &beam).unwrap();
        let b = generator::decode(&mut toy_scorer(vocab, seed), None, &diverse1).unwrap();
        if !same(&a, &b) {
            failures.push(format!("one group differs from beam (seed {seed})"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..vocab).map(|i| if i >= item_start { rng.random_range(0.0..0.3) } else { 0.0 }).collect();
        let bias = VocabBias::from_values(values, item_start).unwrap();
        let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cfg = DecodeConfig {
            bias_trigger_k: vocab,
            ..Default::default()
        };
        let (p, fired) = generator::adjust_step(&logits, Some(&bias), &cfg);
        let total: f64 = p.iter().sum();
        if !fired || (total - 1.0).abs() > 1e-6 {
            failures.push(format!("biased step sums to {total} (fired {fired})"));
        }
    }
    match failures.first() {
        None => outcome(true, "20 seeds x 3 strategies, vocabulary of 40"),
        Some(f) => outcome(false, format!("{} failures, first: {f}", failures.len())),
    }
}

fn ranked_instance(rank: usize, history: usize) -> RecEvalInstance {
    let ranked: Vec<String> = (1..=100).map(|r| if r == rank { "t".into() } else { format!("x{r}") }).collect();
    RecEvalInstance {
        ranked,
        target: "t".into(),
        history_length: history,
    }
}

/// Interpolated bigram Kneser-Ney with the fixed fallback discounts,
/// written out directly.
fn bigram_kn_oracle(train: &[Vec<&str>], test: &[&str]) -> f64 {
    fn pad<'a>(s: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec!["<s>"];
        v.extend_from_slice(s);
        v.push("</s>");
        v
    }
    let mut bigrams: HashMap<(String, String), f64> = HashMap::new();
    let mut vocab: std::collections::HashSet<String> = std::collections::HashSet::new();
    for s in train {
        let p = pad(s);
        for w in &p[1..] {
            vocab.insert(w.to_string());
        }
        for pair in p.windows(2) {
            *bigrams.entry((pair[0].to_string(), pair[1].to_string())).or_default() += 1.0;
        }
    }
    vocab.insert("<unk>".into());
    let v = vocab.len() as f64;
    let d = |c: f64| match c {
        c if c <= 0.0 => 0.0,
        c if c < 2.0 => 0.5,
        c if c < 3.0 => 1.0,
        _ => 1.5,
    };
    // Continuation counts: distinct left neighbours.
    let mut cont: HashMap<String, f64> = HashMap::new();
    for (_, w) in bigrams.keys() {
        *cont.entry(w.clone()).or_default() += 1.0;
    }
    let cont_total: f64 = cont.values().sum();
    let gamma1: f64 = cont.values().map(|c| d(*c)).sum::<f64>() / cont_total;
    let p1 = |w: &str| {
        let c = cont.get(w).copied().unwrap_or(0.0);
        (c - d(c)).max(0.0) / cont_total + gamma1 / v
    };
    let p2 = |prev: &str, w: &str| {
        let total: f64 = bigrams.iter().filter(|((a, _), _)| a == prev).map(|(_, c)| c).sum();
        if total == 0.0 {
            return p1(w);
        }
        let discount_mass: f64 = bigrams.iter().filter(|((a, _), _)| a == prev).map(|(_, c)| d(*c)).sum();
        let c = bigrams.get(&(prev.to_string(), w.to_string())).copied().unwrap_or(0.0);
        (c - d(c)).max(0.0) / total + discount_mass / total * p1(w)
    };
    let map = |w: &str| if vocab.contains(w) { w.to_string() } else { "<unk>".to_string() };
    let p = pad(test);
    let mut log_prob = 0.0;
    for pair in p.windows(2) {
        let prev = if pair[0] == "<s>" { "<s>".to_string() } else { map(pair[0]) };
        log_prob += p2(&prev, &map(pair[1])).ln();
    }
    (-log_prob / (p.len() - 1) as f64).exp()
}

// 5. Metric oracles.
fn criterion_5() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let fixture: Vec<RecEvalInstance> = [1, 2, 5, 11, 20, 50, 100].iter().map(|r| ranked_instance(*r, 0)).collect();
    let r10 = evaluation::recall_at_k(&fixture, 10).unwrap();
    // Ranks 1, 2 and 5 fall inside the top 10.
    pass &= (r10 - 300.0 / 7.0).abs() < 1e-9;
    let r50 = evaluation::recall_at_k(&fixture, 50).unwrap();
    pass &= (r50 - 600.0 / 7.0).abs() < 1e-9;
    let mut prev = 0.0;
    for k in 1..=100 {
        let r = evaluation::recall_at_k(&fixture, k).unwrap();
        pass &= r >= prev;
        prev = r;
    }
    notes.push(format!("R@10 {r10:.1}, R@50 {r50:.1}"));

    let buckets = evaluation::recall_by_history_length(
        &[ranked_instance(1, 0), ranked_instance(60, 0), ranked_instance(3, 4), ranked_instance(2, 12)],
        50,
    );
    pass &= buckets.len() == 3 && buckets[&0].count == 2 && buckets[&0].recall == 50.0 && buckets[&10].count == 1;

    let x: Vec<&str> = "The cat sat on the mat".split(' ').collect();
    let bleu = evaluation::bleu_n(&[(x.clone(), x.clone())], 4).unwrap();
    pass &= bleu == 100.0;
    notes.push(format!("BLEU(x,x) {bleu}"));

    // Bigrams: [a b][b c][c d] and [a b][b e]: 4 distinct of 5.
    let responses = vec![vec!["a", "b", "c", "d"], vec!["a", "b", "e"]];
    let d2 = evaluation::dist_n(&responses, 2);
    pass &= (d2 - 80.0).abs() < 1e-9;
    notes.push(format!("Dist-2 {d2}"));

    let train = vec![vec!["a", "b", "a"], vec!["b", "a", "c"], vec!["a", "c"]];
    let lm = KneserNeyLm::train(&train, 2).unwrap();
    let test = vec!["a", "b", "c"];
    let ppl = evaluation::ngram_ppl(&[test.clone()], &lm).unwrap();
    let want = bigram_kn_oracle(&train, &test);
    pass &= (ppl - want).abs() <= 1e-9 * want;
    notes.push(format!("bigram PPL {ppl:.6} vs oracle {want:.6}"));

    outcome(pass, notes.join(", "))
}

#[derive(Debug, Clone, Copy)]
struct DeskResult {
    recall_1: f64,
    recall_50: f64,
    cold_recall_50: f64,
    cold_cases: usize,
}

struct Desk {
    data: crs_core::dataset::PreparedData,
    train: Vec<crs_core::corpus::TrainingExample>,
    valid: Vec<crs_core::corpus::TrainingExample>,
    test: Vec<crs_core::corpus::TrainingExample>,
    examples: ExampleConfig,
}

fn desk() -> Desk {
    let syn = generate(&SyntheticConfig {
        conversations: 500,
        cold_start_fraction: 0.3,
        ..Default::default()
    });
    let kg = syn.knowledge_graph(true);
    let aliases = syn.alias_index(&kg);
    let mut loaded = syn.loaded();
    assign_splits(&mut loaded.conversations, 0.6, 0.1);
    let data = prepare(loaded, kg, aliases, &HashMap::new(), &VocabConfig::default()).unwrap();
    let examples = ExampleConfig {
        max_len: 48,
        ..Default::default()
    };
    Desk {
        train: data.examples(Split::Train, &examples),
        valid: data.examples(Split::Valid, &examples),
        test: data.examples(Split::Test, &examples),
        data,
        examples,
    }
}

fn desk_run(desk: &Desk, variant: Variant, lambda: f64, seed: u64) -> DeskResult {
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
            layers: 1,
            bases: None,
        },
        examples: desk.examples,
        ..Default::default()
    };
    let d = &desk.data;
    let mut model = CrsModel::new(config, d.kg.clone(), d.aliases.clone(), d.catalog.clone(), d.vocab.clone(), seed).unwrap();
    let train_cfg = TrainConfig {
        epochs: 20,
        seed,
        max_tokens_per_batch: 512,
        update_frequency: 1,
        warmup_updates: 50,
        ..Default::default()
    };
    let fusion = FusionConfig {
        lambda,
        ..Default::default()
    };
    training::train(
        &mut model,
        &desk.train,
        &desk.valid,
        &train_cfg,
        &fusion,
        TrainState::default(),
        TrainHooks::default(),
    )
    .unwrap();
    let instances = report::rec_instances(&model, &desk.test, &fusion, false).unwrap();
    let cold = evaluation::recall_by_history_length(&instances, 50);
    let bucket = cold.get(&0).copied();
    DeskResult {
        recall_1: evaluation::recall_at_k(&instances, 1).unwrap(),
        recall_50: evaluation::recall_at_k(&instances, 50).unwrap(),
        cold_recall_50: bucket.map(|b| b.recall).unwrap_or(0.0),
        cold_cases: bucket.map(|b| b.count).unwrap_or(0),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct DeskTable {
    full: Vec<DeskResult>,
    entity: Vec<DeskResult>,
    context: Vec<DeskResult>,
    full_low_lambda: Vec<DeskResult>,
}

fn desk_table() -> DeskTable {
    let desk = desk();
    let seeds = [1, 2, 3];
    let runs = |variant, lambda| seeds.iter().map(|s| desk_run(&desk, variant, lambda, *s)).collect::<Vec<_>>();
    DeskTable {
        full: runs(Variant::Full, 1.5),
        entity: runs(Variant::EntityTimeA, 1.5),
        context: runs(Variant::ContextOnly, 1.5),
        full_low_lambda: runs(Variant::Full, 0.5),
    }
}

fn med(rs: &[DeskResult], f: impl Fn(&DeskResult) -> f64) -> f64 {
    median(rs.iter().map(f).collect())
}

// 6. Full model at least as good as either single-signal variant.
fn criterion_6(t: &DeskTable) -> Outcome {
    let (full, entity, context) = (
        med(&t.full, |r| r.recall_50),
        med(&t.entity, |r| r.recall_50),
        med(&t.context, |r| r.recall_50),
    );
    outcome(
        full >= entity && full >= context,
        format!("median Recall@50 full {full:.1}, entity-only {entity:.1}, context-only {context:.1}"),
    )
}

// 7. Recency-favouring lambda beats a recency-discounting one.
fn criterion_7(t: &DeskTable) -> Outcome {
    let (high, low) = (med(&t.full, |r| r.recall_1), med(&t.full_low_lambda, |r| r.recall_1));
    outcome(high >= low, format!("median Recall@1 lambda=1.5 {high:.1}, lambda=0.5 {low:.1}"))
}

// 8. Context-only wins when nothing has been mentioned yet.
fn criterion_8(t: &DeskTable) -> Outcome {
    let (context, entity) = (
        med(&t.context, |r| r.cold_recall_50),
        med(&t.entity, |r| r.cold_recall_50),
    );
    let cases = t.context[0].cold_cases;
    outcome(
        cases > 0 && context >= entity,
        format!("history-0 bucket ({cases} cases) median Recall@50 context-only {context:.1}, entity-only {entity:.1}"),
    )
}

fn main() {
    // Quiet by default; the harness output is the PASS/FAIL lines.
    let mut results: Vec<(u32, bool, Outcome)> = Vec::new();
    results.push((1, true, timed(Duration::from_secs(1), criterion_1)));
    results.push((2, true, timed(Duration::from_secs(60), criterion_2)));
    results.push((3, true, timed(Duration::from_secs(60), criterion_3)));
    results.push((4, true, timed(Duration::from_secs(10), criterion_4)));
    results.push((5, true, timed(Duration::from_secs(10), criterion_5)));
    for (n, _, o) in &results {
        println!("criterion {n}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }

    let start = Instant::now();
    let table = desk_table();
    let took = start.elapsed();
    for (n, o) in [(6, criterion_6(&table)), (7, criterion_7(&table)), (8, criterion_8(&table))] {
        println!(
            "criterion {n}: {} - {} [desk runs {:.0?}]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took
        );
        results.push((n, true, o));
    }
    println!(
        "criterion 9: SKIP (non-gating) - needs the full ReDial and OpenDialKG releases and a pretrained backbone"
    );

    let failed: Vec<u32> = results.iter().filter(|(_, gating, o)| *gating && !o.pass).map(|(n, _, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
