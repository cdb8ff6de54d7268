//! Recommendation and generation metrics.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{CrsError, Result};

/// One (recommender turn, target item) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecEvalInstance {
    pub ranked: Vec<String>,
    pub target: String,
    /// Item mentions in the context.
    pub history_length: usize,
}

impl RecEvalInstance {
    pub fn hit(&self, k: usize) -> bool {
        self.ranked.iter().take(k).any(|r| *r == self.target)
    }
}

/// Percentage of instances whose target is in the top `k`.
pub fn recall_at_k(instances: &[RecEvalInstance], k: usize) -> Result<f64> {
    if instances.is_empty() {
        return Err(CrsError::Empty("no recommendation instances".into()));
    }
    let hits = instances.iter().filter(|i| i.hit(k)).count();
    Ok(100.0 * hits as f64 / instances.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketRecall {
    pub recall: f64,
    pub count: usize,
}

/// Histories of 10 or more items share the last bucket.
pub const LAST_BUCKET: usize = 10;

/// Recall@k per history-length bucket `0..=9` and `10+`. Empty buckets are
/// omitted.
pub fn recall_by_history_length(instances: &[RecEvalInstance], k: usize) -> BTreeMap<usize, BucketRecall> {
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for inst in instances {
        let entry = groups.entry(inst.history_length.min(LAST_BUCKET)).or_default();
        entry.1 += 1;
        if inst.hit(k) {
            entry.0 += 1;
        }
    }
    groups
        .into_iter()
        .map(|(b, (hits, count))| {
            (
                b,
                BucketRecall {
                    recall: 100.0 * hits as f64 / count as f64,
                    count,
                },
            )
        })
        .collect()
}

fn ngrams<T: AsRef<str>>(tokens: &[T], n: usize) -> impl Iterator<Item = Vec<&str>> {
    let len = tokens.len();
    (0..len.saturating_sub(n - 1).min(len)).filter(move |_| len >= n).map(move |i| {
        tokens[i..i + n].iter().map(|t| t.as_ref()).collect()
    })
}

/// Corpus-level distinct n-gram ratio ×100.
pub fn dist_n<T: AsRef<str>>(responses: &[Vec<T>], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    let mut distinct: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for g in ngrams(r, n) {
            total += 1;
            distinct.insert(g);
        }
    }
    if total == 0 {
        warn!(n, "every response is shorter than the n-gram order");
        return 0.0;
    }
    100.0 * distinct.len() as f64 / total as f64
}

/// Mean of per-response distinct n-gram ratios ×100, over responses that
/// have at least one n-gram.
pub fn dist_n_sentence<T: AsRef<str>>(responses: &[Vec<T>], n: usize) -> f64 {
    let ratios: Vec<f64> = responses
        .iter()
        .filter(|r| r.len() >= n)
        .map(|r| dist_n(std::slice::from_ref(r), n))
        .collect();
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

const BLEU_EPSILON: f64 = 0.1;

fn lower<T: AsRef<str>>(tokens: &[T]) -> Vec<String> {
    tokens.iter().map(|t| t.as_ref().to_lowercase()).collect()
}

/// Case-insensitive sentence BLEU ×100 with uniform weights over orders
/// `1..=min(n, |hyp|)`, brevity penalty, and zero match counts replaced by
/// a small epsilon.
pub fn sentence_bleu<T: AsRef<str>, U: AsRef<str>>(hyp: &[T], reference: &[U], n: usize) -> f64 {
    let hyp = lower(hyp);
    let reference = lower(reference);
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let max_order = n.min(hyp.len());
    let mut log_sum = 0.0;
    for order in 1..=max_order {
        let mut ref_counts: HashMap<Vec<&str>, usize> = HashMap::new();
        for g in ngrams(&reference, order) {
            *ref_counts.entry(g).or_default() += 1;
        }
        let mut hyp_counts: HashMap<Vec<&str>, usize> = HashMap::new();
        for g in ngrams(&hyp, order) {
            *hyp_counts.entry(g).or_default() += 1;
        }
        let total: usize = hyp_counts.values().sum();
        let matched: usize = hyp_counts
            .iter()
            .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let numerator = if matched == 0 { BLEU_EPSILON } else { matched as f64 };
        log_sum += (numerator / total as f64).ln();
    }
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    100.0 * bp * (log_sum / max_order as f64).exp()
}

/// Mean sentence BLEU-n over `(hypothesis, reference)` pairs.
pub fn bleu_n<T: AsRef<str>, U: AsRef<str>>(pairs: &[(Vec<T>, Vec<U>)], n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(CrsError::Empty("no BLEU pairs".into()));
    }
    let total: f64 = pairs.iter().map(|(h, r)| sentence_bleu(h, r, n)).sum();
    Ok(total / pairs.len() as f64)
}

const BOS: &str = "<s>";
const EOS: &str = "</s>";
const UNK: &str = "<unk>";

/// Interpolated modified Kneser–Ney n-gram language model.
#[derive(Debug, Clone)]
pub struct KneserNeyLm {
    order: usize,
    vocab: HashSet<String>,
    /// Per order (index 0 = unigrams): n-gram → adjusted count.
    counts: Vec<HashMap<Vec<String>, f64>>,
    /// Per order: context → (sum of counts, N1, N2, N3+ of continuations).
    contexts: Vec<HashMap<Vec<String>, [f64; 4]>>,
    /// Per order: discounts for counts 1, 2 and 3+.
    discounts: Vec<[f64; 3]>,
}

impl KneserNeyLm {
    pub fn train<T: AsRef<str>>(sentences: &[Vec<T>], order: usize) -> Result<Self> {
        if order == 0 {
            return Err(CrsError::Config("language model order must be positive".into()));
        }
        if sentences.is_empty() {
            return Err(CrsError::Empty("no language model training text".into()));
        }
        let padded: Vec<Vec<String>> = sentences.iter().map(|s| pad(&lower(s), order)).collect();
        let mut vocab: HashSet<String> = padded.iter().flatten().cloned().collect();
        vocab.remove(BOS);
        vocab.insert(UNK.to_string());

        // Raw counts at the top order, continuation counts below it; n-grams
        // starting at the sentence boundary keep raw counts.
        let mut counts: Vec<HashMap<Vec<String>, f64>> = vec![HashMap::new(); order];
        let mut raw: Vec<HashMap<Vec<String>, f64>> = vec![HashMap::new(); order];
        for s in &padded {
            for n in 1..=order {
                for i in 0..=s.len() - n {
                    let g = &s[i..i + n];
                    // `<s>` is never predicted, only conditioned on.
                    if g[n - 1] == BOS {
                        continue;
                    }
                    *raw[n - 1].entry(g.to_vec()).or_default() += 1.0;
                }
            }
        }
        counts[order - 1] = raw[order - 1].clone();
        for n in (1..order).rev() {
            let mut cont: HashMap<Vec<String>, f64> = HashMap::new();
            for g in raw[n].keys() {
                *cont.entry(g[1..].to_vec()).or_default() += 1.0;
            }
            for (g, c) in &raw[n - 1] {
                if g[0] == BOS {
                    cont.insert(g.clone(), *c);
                }
            }
            counts[n - 1] = cont;
        }

        let discounts = counts.iter().map(|c| discounts_from(c.values())).collect::<Vec<_>>();
        let mut contexts: Vec<HashMap<Vec<String>, [f64; 4]>> = vec![HashMap::new(); order];
        for (n, table) in counts.iter().enumerate() {
            for (g, c) in table {
                let ctx = g[..g.len() - 1].to_vec();
                let e = contexts[n].entry(ctx).or_insert([0.0; 4]);
                e[0] += c;
                let slot = if *c >= 3.0 { 3 } else { *c as usize };
                e[slot] += 1.0;
            }
        }
        Ok(KneserNeyLm {
            order,
            vocab,
            counts,
            contexts,
            discounts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Vocabulary size including `</s>` and `<unk>`.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn discounts(&self, n: usize) -> [f64; 3] {
        self.discounts[n - 1]
    }

    fn word(&self, w: &str) -> String {
        let w = w.to_lowercase();
        if self.vocab.contains(&w) || w == BOS {
            w
        } else {
            UNK.to_string()
        }
    }

    /// `P(word | history)` using the last `order - 1` history tokens.
    pub fn prob(&self, history: &[&str], word: &str) -> f64 {
        let word = self.word(word);
        let start = history.len().saturating_sub(self.order - 1);
        let hist: Vec<String> = history[start..].iter().map(|w| self.word(w)).collect();
        self.interpolated(&hist, &word)
    }

    fn interpolated(&self, hist: &[String], word: &str) -> f64 {
        let n = hist.len() + 1;
        let lower = if hist.is_empty() {
            1.0 / self.vocab.len() as f64
        } else {
            self.interpolated(&hist[1..], word)
        };
        let Some(ctx) = self.contexts[n - 1].get(hist) else {
            return lower;
        };
        let [total, n1, n2, n3] = *ctx;
        let [d1, d2, d3] = self.discounts[n - 1];
        let mut key = hist.to_vec();
        key.push(word.to_string());
        let c = self.counts[n - 1].get(&key).copied().unwrap_or(0.0);
        let d = match c {
            c if c <= 0.0 => 0.0,
            c if c < 2.0 => d1,
            c if c < 3.0 => d2,
            _ => d3,
        };
        let gamma = (d1 * n1 + d2 * n2 + d3 * n3) / total;
        (c - d).max(0.0) / total + gamma * lower
    }

    /// Natural-log probability of a sentence, including `</s>`, and its
    /// token count.
    pub fn sentence_log_prob<T: AsRef<str>>(&self, sentence: &[T]) -> (f64, usize) {
        let padded = pad(&lower(sentence), self.order);
        let mut total = 0.0;
        let mut count = 0;
        for i in self.order - 1..padded.len() {
            let hist: Vec<&str> = padded[i + 1 - self.order..i].iter().map(String::as_str).collect();
            total += self.prob(&hist, &padded[i]).ln();
            count += 1;
        }
        (total, count)
    }
}

fn pad(tokens: &[String], order: usize) -> Vec<String> {
    let mut out: Vec<String> = std::iter::repeat_n(BOS.to_string(), order - 1).collect();
    out.extend(tokens.iter().cloned());
    out.push(EOS.to_string());
    out
}

/// Modified Kneser–Ney discounts from count-of-counts, falling back to
/// (0.5, 1.0, 1.5) when the estimate is undefined or out of range.
fn discounts_from<'a>(counts: impl Iterator<Item = &'a f64>) -> [f64; 3] {
    let mut n = [0.0f64; 5];
    for c in counts {
        let k = c.round() as usize;
        if (1..=4).contains(&k) {
            n[k] += 1.0;
        }
    }
    let fallback = [0.5, 1.0, 1.5];
    if n[1] == 0.0 || n[2] == 0.0 || n[3] == 0.0 || n[4] == 0.0 {
        return fallback;
    }
    let y = n[1] / (n[1] + 2.0 * n[2]);
    let d = [
        1.0 - 2.0 * y * n[2] / n[1],
        2.0 - 3.0 * y * n[3] / n[2],
        3.0 - 4.0 * y * n[4] / n[3],
    ];
    if d.iter().enumerate().any(|(i, v)| !(*v > 0.0) || *v > (i + 1) as f64) {
        return fallback;
    }
    d
}

/// `exp(mean negative log-likelihood per token)`, `</s>` included.
pub fn ngram_ppl<T: AsRef<str>>(responses: &[Vec<T>], lm: &KneserNeyLm) -> Result<f64> {
    if responses.is_empty() {
        return Err(CrsError::Empty("no responses to score".into()));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for r in responses {
        let (lp, n) = lm.sentence_log_prob(r);
        total += lp;
        count += n;
    }
    Ok((-total / count as f64).exp())
}
