//! Seeded synthetic data with known structure, used to check the pipeline
//! end to end where real corpora are unavailable.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::embedding::Embedding;
use crate::error::Result;
use crate::features::Dataset;
use crate::mapper::{MlpMapper, VectorMap};

fn word(prefix: &str, i: usize) -> String {
    format!("{prefix}{i:05}")
}

/// A source embedding, a hidden non-linear map, and a target embedding on a
/// prefix of the source vocabulary.
pub struct MappedPair {
    pub te: Embedding,
    pub de: Embedding,
    pub target: MlpMapper,
    /// Noisy target vectors of the source words missing from `de`.
    pub held_out: Embedding,
}

/// `n_words` source vectors drawn from N(0, 1) in `dim` dimensions, mapped by a
/// random ReLU network with `hidden` units, plus N(0, noise²) per component.
/// The first `n_target` words form the target vocabulary.
pub fn mapped_pair(
    n_words: usize,
    n_target: usize,
    dim: usize,
    hidden: usize,
    noise: f64,
    seed: u64,
) -> Result<MappedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let eps = Normal::new(0.0, noise).expect("noise must be finite and nonnegative");
    // He-scaled hidden layer keeps the output variance close to the input's.
    let w2 = DMatrix::from_fn(hidden, dim, |_, _| std_normal.sample(&mut rng) * (2.0 / dim as f64).sqrt());
    let b2 = nalgebra::DVector::from_fn(hidden, |_, _| 0.1 * std_normal.sample(&mut rng));
    let w1 = DMatrix::from_fn(dim, hidden, |_, _| std_normal.sample(&mut rng) / (hidden as f64).sqrt());
    let b1 = nalgebra::DVector::zeros(dim);
    let target = MlpMapper::new(w2, b2, w1, b1)?;

    let x = DMatrix::from_fn(dim, n_words, |_, _| std_normal.sample(&mut rng));
    let mut y = target.map_columns(&x);
    y.iter_mut().for_each(|v| *v += eps.sample(&mut rng));

    let rows = |m: &DMatrix<f64>, range: std::ops::Range<usize>| {
        range
            .map(|j| (word("w", j), m.column(j).iter().map(|&v| v as f32).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    Ok(MappedPair {
        te: Embedding::from_rows(rows(&x, 0..n_words))?,
        de: Embedding::from_rows(rows(&y, 0..n_target))?,
        target,
        held_out: Embedding::from_rows(rows(&y, n_target..n_words))?,
    })
}

/// Sentences over two disjoint vocabularies; each sentence draws all of its
/// words from one topic.
pub struct TopicCorpus {
    pub sentences: Vec<Vec<String>>,
    pub topics: [Vec<String>; 2],
}

pub fn two_topic_corpus(tokens: usize, words_per_topic: usize, sentence_len: usize, seed: u64) -> TopicCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = [
        (0..words_per_topic).map(|i| word("a", i)).collect::<Vec<_>>(),
        (0..words_per_topic).map(|i| word("b", i)).collect::<Vec<_>>(),
    ];
    let mut sentences = Vec::with_capacity(tokens / sentence_len + 1);
    let mut emitted = 0;
    while emitted < tokens {
        let topic = &topics[rng.random_range(0..2)];
        let len = sentence_len.min(tokens - emitted);
        sentences.push((0..len).map(|_| topic[rng.random_range(0..topic.len())].clone()).collect());
        emitted += len;
    }
    TopicCorpus { sentences, topics }
}

/// A labelled benchmark in which the class signal is a product of two source
/// coordinates. Averaging source vectors over a post destroys it; the
/// target space stores it on one axis, where averaging preserves it.
/// Most posts are written with words the target vocabulary lacks.
pub struct OovBenchmark {
    pub te: Embedding,
    pub de: Embedding,
    pub data: Dataset,
}

#[derive(Clone, Debug)]
pub struct OovBenchmarkConfig {
    pub words: usize,
    /// Share of words that also appear in the target embedding.
    pub target_share: f64,
    pub dim: usize,
    pub posts: usize,
    pub post_len: usize,
    /// Probability that a word of a post carries its label's polarity.
    pub purity: f64,
    /// Probability that a post word is drawn from the target vocabulary.
    pub in_target_rate: f64,
    pub seed: u64,
}

impl Default for OovBenchmarkConfig {
    fn default() -> Self {
        OovBenchmarkConfig {
            words: 1200,
            target_share: 0.5,
            dim: 8,
            posts: 400,
            post_len: 8,
            purity: 0.75,
            in_target_rate: 0.2,
            seed: 1,
        }
    }
}

pub fn oov_benchmark(cfg: &OovBenchmarkConfig) -> Result<OovBenchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Uniform::new(-1.0f64, 1.0).expect("valid range");
    let noise = Normal::new(0.0, 0.05).expect("valid");
    let dim = cfg.dim.max(3);
    let n_target = ((cfg.words as f64) * cfg.target_share).round() as usize;

    let mut te_rows = Vec::with_capacity(cfg.words);
    let mut de_rows = Vec::with_capacity(n_target);
    // Word indices per (in target vocabulary, polarity) cell.
    let mut pools: [[Vec<usize>; 2]; 2] = Default::default();
    for i in 0..cfg.words {
        let te: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        let product = te[0] * te[1];
        let name = word("t", i);
        let in_target = i < n_target;
        pools[in_target as usize][(product < 0.0) as usize].push(i);
        if in_target {
            let mut de = vec![2.0 * product];
            de.extend(te[2..].iter().map(|v| v + noise.sample(&mut rng)));
            de.resize(dim, 0.0);
            de_rows.push((name.clone(), de.iter().map(|&v| v as f32).collect::<Vec<_>>()));
        }
        te_rows.push((name, te.iter().map(|&v| v as f32).collect::<Vec<_>>()));
    }

    let mut labels: Vec<u8> = (0..cfg.posts).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng);
    let texts = labels
        .iter()
        .map(|&label| {
            (0..cfg.post_len)
                .map(|_| {
                    let in_target = rng.random_bool(cfg.in_target_rate) as usize;
                    // Depressive posts lean on negative-product words.
                    let polarity = if rng.random_bool(cfg.purity) { label } else { 1 - label } as usize;
                    let pool = &pools[in_target][polarity];
                    te_rows[pool[rng.random_range(0..pool.len())]].0.clone()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Ok(OovBenchmark {
        te: Embedding::from_rows(te_rows)?,
        de: Embedding::from_rows(de_rows)?,
        data: Dataset { labels, texts },
    })
}

impl OovBenchmark {
    /// Write `te.vec`, `de.vec` and `data.tsv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.te.save_word2vec_text(dir.join("te.vec"))?;
        self.de.save_word2vec_text(dir.join("de.vec"))?;
        let mut tsv = String::new();
        for (l, t) in self.data.labels.iter().zip(&self.data.texts) {
            tsv.push_str(&format!("{l}\t{t}\n"));
        }
        let path = dir.join("data.tsv");
        std::fs::write(&path, tsv).map_err(|e| crate::error::Error::file(path, e))
    }
}
