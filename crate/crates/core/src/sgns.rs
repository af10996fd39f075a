//! Skip-gram with negative sampling.
//!
//! For every (centre, context) pair the trainer maximizes
//! `log σ(u_c·v_w) + Σ log σ(−u_n·v_w)` over `k` negatives drawn from the
//! unigram distribution raised to the 0.75 power. Only the input vectors
//! `v` are exported. With more than one worker, parameter rows are updated
//! without locks (Hogwild); results are reproducible only with one worker.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::text::{split_sentences, tokenize_tweet};

/// Exponent applied to unigram counts for the negative-sampling distribution.
pub const UNIGRAM_POWER: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgnsConfig {
    pub dim: usize,
    /// Maximum context offset; the effective window is drawn from `1..=window`.
    pub window: usize,
    pub mincount: u64,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to `learning_rate * 1e-4`.
    pub learning_rate: f32,
    pub seed: u64,
    pub workers: usize,
    /// Frequent-word subsampling threshold; `None` disables subsampling.
    pub subsample: Option<f64>,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 400,
            window: 5,
            mincount: 10,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
            workers: 1,
            subsample: None,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.dim >= 1, "dim must be at least 1"),
            (self.window >= 1, "window must be at least 1"),
            (self.negatives >= 1, "negatives must be at least 1"),
            (self.mincount >= 1, "mincount must be at least 1"),
            (self.workers >= 1, "workers must be at least 1"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        if let Some(t) = self.subsample {
            if !(t > 0.0) {
                return Err(Error::Config("subsample threshold must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Retained corpus vocabulary with its negative-sampling distribution.
#[derive(Clone, Debug)]
pub struct CorpusVocab {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    total: u64,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl CorpusVocab {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.index.get(word).map(|&i| self.counts[i])
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Number of retained token occurrences.
    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    /// Negative-sampling probability of word `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn negative_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

/// Count tokens and keep words occurring at least `mincount` times, ordered by
/// descending frequency then lexicographically.
pub fn build_vocab(sentences: &[Vec<String>], mincount: u64) -> Result<CorpusVocab> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in sentences.iter().flatten() {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Empty("corpus contains no tokens".into()));
    }
    let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= mincount).collect();
    if kept.is_empty() {
        return Err(Error::Empty(format!("no word occurs at least {mincount} times")));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let words: Vec<String> = kept.iter().map(|(w, _)| w.to_string()).collect();
    let counts: Vec<u64> = kept.iter().map(|&(_, c)| c).collect();
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(UNIGRAM_POWER)).collect();
    let norm: f64 = weights.iter().sum();
    let probs = weights.iter().map(|w| w / norm).collect();
    let sampler = WeightedIndex::new(&weights).expect("positive weights");
    let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(CorpusVocab {
        total: counts.iter().sum(),
        words,
        counts,
        index,
        probs,
        sampler,
    })
}

/// Turn one-post-per-line text into tokenized sentences.
pub fn corpus_sentences<'a>(posts: impl IntoIterator<Item = &'a str>) -> Vec<Vec<String>> {
    posts
        .into_iter()
        .flat_map(split_sentences)
        .map(|s| tokenize_tweet(&s))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Parameter rows shared between workers. Relaxed atomics give lock-free
/// racy updates without undefined behaviour.
struct SharedMatrix {
    data: Vec<AtomicU32>,
    dim: usize,
}

impl SharedMatrix {
    fn from_values(values: impl IntoIterator<Item = f32>, dim: usize) -> Self {
        SharedMatrix {
            data: values.into_iter().map(|v| AtomicU32::new(v.to_bits())).collect(),
            dim,
        }
    }

    fn load_row(&self, row: usize, out: &mut [f32]) {
        let base = row * self.dim;
        for (o, a) in out.iter_mut().zip(&self.data[base..base + self.dim]) {
            *o = f32::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn store_row(&self, row: usize, values: &[f32]) {
        let base = row * self.dim;
        for (a, v) in self.data[base..base + self.dim].iter().zip(values) {
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f32> {
        self.data
            .into_iter()
            .map(|a| f32::from_bits(a.into_inner()))
            .collect()
    }
}

/// Everything produced by a training run.
#[derive(Clone, Debug)]
pub struct SgnsTrained {
    pub embedding: Embedding,
    /// Output (context) vectors, row-aligned with `embedding`.
    pub output_vectors: Vec<f32>,
    /// Mean negative objective per positive pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

impl SgnsTrained {
    pub fn output_vector(&self, word: &str) -> Option<&[f32]> {
        let dim = self.embedding.dim();
        self.embedding
            .index_of(word)
            .map(|i| &self.output_vectors[i * dim..(i + 1) * dim])
    }
}

/// Input-vector initialization: `U(−0.5/d, 0.5/d)` from the config seed.
pub fn initial_vectors(vocab_len: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 0.5 / dim as f32;
    (0..vocab_len * dim)
        .map(|_| rng.random_range(-scale..scale))
        .collect()
}

pub fn train_sgns(sentences: &[Vec<String>], cfg: &SgnsConfig) -> Result<Embedding> {
    train_sgns_detailed(sentences, cfg).map(|t| t.embedding)
}

pub fn train_sgns_detailed(sentences: &[Vec<String>], cfg: &SgnsConfig) -> Result<SgnsTrained> {
    cfg.validate()?;
    let vocab = build_vocab(sentences, cfg.mincount)?;
    if vocab.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 retained distinct words, found {}",
            vocab.len()
        )));
    }
    let encoded: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|t| vocab.index_of(t).map(|i| i as u32))
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() >= 2)
        .collect();

    let dim = cfg.dim;
    let input = SharedMatrix::from_values(initial_vectors(vocab.len(), dim, cfg.seed), dim);
    let output = SharedMatrix::from_values(std::iter::repeat_n(0.0, vocab.len() * dim), dim);
    let keep_prob: Option<Vec<f32>> = cfg.subsample.map(|t| {
        let threshold = t * vocab.total_tokens() as f64;
        (0..vocab.len())
            .map(|i| {
                let f = vocab.counts[i] as f64;
                (((f / threshold).sqrt() + 1.0) * threshold / f).min(1.0) as f32
            })
            .collect()
    });

    let tokens_per_epoch: u64 = encoded.iter().map(|s| s.len() as u64).sum();
    let schedule = LearningSchedule {
        initial: cfg.learning_rate,
        total: (tokens_per_epoch * cfg.epochs as u64).max(1),
        processed: AtomicU64::new(0),
    };
    let ctx = TrainContext {
        cfg,
        vocab: &vocab,
        input: &input,
        output: &output,
        keep_prob: keep_prob.as_deref(),
        schedule: &schedule,
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let chunk = encoded.len().div_ceil(cfg.workers).max(1);
        let totals: Vec<(f64, u64)> = if cfg.workers == 1 {
            vec![ctx.run_chunk(&encoded, epoch as u64, 0)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = encoded
                    .chunks(chunk)
                    .enumerate()
                    .map(|(w, part)| {
                        let ctx = &ctx;
                        scope.spawn(move || ctx.run_chunk(part, epoch as u64, w as u64))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };
        let (loss, pairs) = totals
            .iter()
            .fold((0.0, 0u64), |acc, &(l, p)| (acc.0 + l, acc.1 + p));
        let mean = if pairs == 0 { 0.0 } else { loss / pairs as f64 };
        log::debug!("sgns epoch {} loss {:.6}", epoch + 1, mean);
        epoch_losses.push(mean);
    }

    let embedding = Embedding::new(vocab.words().to_vec(), input.into_vec(), dim)?;
    Ok(SgnsTrained {
        embedding,
        output_vectors: output.into_vec(),
        epoch_losses,
    })
}

struct LearningSchedule {
    initial: f32,
    total: u64,
    processed: AtomicU64,
}

impl LearningSchedule {
    fn rate(&self) -> f32 {
        let done = self.processed.load(Ordering::Relaxed) as f64 / self.total as f64;
        self.initial * (1.0 - done).max(1e-4) as f32
    }
}

struct TrainContext<'a> {
    cfg: &'a SgnsConfig,
    vocab: &'a CorpusVocab,
    input: &'a SharedMatrix,
    output: &'a SharedMatrix,
    keep_prob: Option<&'a [f32]>,
    schedule: &'a LearningSchedule,
}

impl TrainContext<'_> {
    /// Train over a slice of sentences; returns (summed loss, positive pairs).
    fn run_chunk(&self, sentences: &[Vec<u32>], epoch: u64, worker: u64) -> (f64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1 + epoch * 1024 + worker);
        let dim = self.cfg.dim;
        let mut v = vec![0f32; dim];
        let mut u = vec![0f32; dim];
        let mut grad = vec![0f32; dim];
        let mut sentence = Vec::new();
        let (mut loss, mut pairs) = (0f64, 0u64);

        for raw in sentences {
            let alpha = self.schedule.rate();
            sentence.clear();
            match self.keep_prob {
                Some(keep) => sentence.extend(
                    raw.iter()
                        .copied()
                        .filter(|&w| rng.random::<f32>() < keep[w as usize]),
                ),
                None => sentence.extend_from_slice(raw),
            }
            for (pos, &centre) in sentence.iter().enumerate() {
                let reach = rng.random_range(1..=self.cfg.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                for (cpos, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    let centre = centre as usize;
                    self.input.load_row(centre, &mut v);
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    loss += self.update(context as usize, 1.0, alpha, &v, &mut u, &mut grad);
                    for _ in 0..self.cfg.negatives {
                        let neg = self.vocab.negative_sample(&mut rng);
                        if neg == context as usize {
                            continue;
                        }
                        loss += self.update(neg, 0.0, alpha, &v, &mut u, &mut grad);
                    }
                    for (vi, gi) in v.iter_mut().zip(&grad) {
                        *vi += gi;
                    }
                    self.input.store_row(centre, &v);
                    pairs += 1;
                }
            }
            self.schedule
                .processed
                .fetch_add(raw.len() as u64, Ordering::Relaxed);
        }
        (loss, pairs)
    }

    /// One logistic update of output row `target`; accumulates the input gradient.
    fn update(&self, target: usize, label: f32, alpha: f32, v: &[f32], u: &mut [f32], grad: &mut [f32]) -> f64 {
        self.output.load_row(target, u);
        let f: f32 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let g = (label - sigmoid(f)) * alpha;
        for i in 0..v.len() {
            grad[i] += g * u[i];
            u[i] += g * v[i];
        }
        self.output.store_row(target, u);
        // −log σ(f) for positives, −log σ(−f) for negatives.
        let signed = if label > 0.5 { f } else { -f } as f64;
        softplus(-signed)
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
