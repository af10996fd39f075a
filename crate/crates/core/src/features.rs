//! Tweet feature extraction: bag-of-words counts, lexicon scores and
//! averaged or concatenated word vectors, plus min-max scaling.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::text::{bow_terms, filter_stopwords, tokenize_tweet, StopwordPolicy};

/// Labelled posts; label 1 marks the positive (depressive) class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub labels: Vec<u8>,
    pub texts: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Parse `label<TAB>text` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ds = Dataset::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (label, body) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(i + 1, "expected label<TAB>text"))?;
            let label = match label.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::format(i + 1, format!("label must be 0 or 1, got {other:?}"))),
            };
            ds.labels.push(label);
            ds.texts.push(body.to_string());
        }
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Dataset::parse(&text)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            texts: idx.iter().map(|&i| self.texts[i].clone()).collect(),
        }
    }
}

/// The most frequent stemmed terms of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct BowVocab {
    terms: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl BowVocab {
    /// Keep the `size` most frequent terms; equal counts are ordered lexicographically.
    pub fn fit(train: &[Vec<String>], size: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("no training documents".into()));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in train {
            for t in doc {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(size);
        let terms: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(BowVocab {
            counts: ranked.iter().map(|&(_, c)| c).collect(),
            terms,
            index,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Training-split frequency of each term.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Occurrence count of every vocabulary term in `tokens`.
    pub fn vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.terms.len()];
        for t in tokens {
            if let Some(&i) = self.index.get(t) {
                v[i] += 1.0;
            }
        }
        v
    }
}

pub fn fit_bow(train: &[Vec<String>], size: usize) -> Result<BowVocab> {
    BowVocab::fit(train, size)
}

pub fn bow_vector(tokens: &[String], vocab: &BowVocab) -> Vec<f64> {
    vocab.vector(tokens)
}

/// Dictionary mapping surface patterns to categories. A trailing `*` makes a
/// pattern match any word with that prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryLexicon {
    /// `(id, name)` in file order; features use this order.
    categories: Vec<(u32, String)>,
    exact: HashMap<String, Vec<usize>>,
    prefix: HashMap<String, Vec<usize>>,
}

impl CategoryLexicon {
    /// Parse the `%`-delimited layout: a header block of `id<TAB>name` lines
    /// between two `%` lines, then `pattern<TAB>id[,id…]` entries.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let mut categories = Vec::new();
        let mut position = HashMap::new();
        let mut opened = false;
        let mut closed = false;
        for (n, line) in lines.by_ref() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if t == "%" {
                if opened {
                    closed = true;
                    break;
                }
                opened = true;
                continue;
            }
            if !opened {
                return Err(Error::format(n, "lexicon must start with a '%' line"));
            }
            let mut parts = t.split_whitespace();
            let id: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(n, "expected numeric category id"))?;
            let name = parts.collect::<Vec<_>>().join(" ");
            if name.is_empty() {
                return Err(Error::format(n, "category without a name"));
            }
            if position.insert(id, categories.len()).is_some() {
                return Err(Error::format(n, format!("duplicate category id {id}")));
            }
            categories.push((id, name));
        }
        if !closed {
            return Err(Error::format(0, "unterminated category header"));
        }
        if categories.is_empty() {
            return Err(Error::Empty("lexicon defines no categories".into()));
        }

        let mut exact: HashMap<String, Vec<usize>> = HashMap::new();
        let mut prefix: HashMap<String, Vec<usize>> = HashMap::new();
        for (n, line) in lines {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let mut parts = t.splitn(2, '\t');
            let pattern = parts.next().unwrap_or_default().trim().to_lowercase();
            let ids = parts.next().unwrap_or_default();
            let mut cats = Vec::new();
            for id in ids.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
                let id: u32 = id
                    .parse()
                    .map_err(|_| Error::format(n, format!("bad category id {id:?}")))?;
                let &p = position
                    .get(&id)
                    .ok_or_else(|| Error::format(n, format!("unknown category id {id}")))?;
                cats.push(p);
            }
            if cats.is_empty() {
                return Err(Error::format(n, "pattern without categories"));
            }
            let (key, table) = match pattern.strip_suffix('*') {
                Some(stem) => (stem.to_string(), &mut prefix),
                None => (pattern, &mut exact),
            };
            if key.is_empty() {
                return Err(Error::format(n, "empty pattern"));
            }
            let entry = table.entry(key).or_default();
            entry.extend(cats);
            entry.sort_unstable();
            entry.dedup();
        }
        Ok(CategoryLexicon { categories, exact, prefix })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        CategoryLexicon::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|(_, n)| n.as_str())
    }

    /// Positions of every category `token` falls in, ascending and unique.
    pub fn categories_of(&self, token: &str) -> Vec<usize> {
        let mut out: Vec<usize> = self.exact.get(token).cloned().unwrap_or_default();
        for (i, _) in token.char_indices().skip(1).chain([(token.len(), ' ')]) {
            if let Some(c) = self.prefix.get(&token[..i]) {
                out.extend(c);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Percentage of tokens falling in each category.
pub fn category_percentages(tokens: &[String], lex: &CategoryLexicon) -> Vec<f64> {
    let mut hits = vec![0usize; lex.len()];
    for t in tokens {
        for c in lex.categories_of(t) {
            hits[c] += 1;
        }
    }
    if tokens.is_empty() {
        return vec![0.0; lex.len()];
    }
    let n = tokens.len() as f64;
    hits.into_iter().map(|h| 100.0 * h as f64 / n).collect()
}

/// Mean category percentage over the posts of `texts`, for every category.
pub fn dataset_category_profile(
    texts: &[impl AsRef<str>],
    lex: &CategoryLexicon,
) -> Result<Vec<(String, f64)>> {
    if texts.is_empty() {
        return Err(Error::Empty("no posts to profile".into()));
    }
    let mut sums = vec![0.0; lex.len()];
    for t in texts {
        for (s, p) in sums.iter_mut().zip(category_percentages(&tokenize_tweet(t.as_ref()), lex)) {
            *s += p;
        }
    }
    let n = texts.len() as f64;
    Ok(lex.category_names().zip(sums).map(|(c, s)| (c.to_string(), s / n)).collect())
}

pub const EMOTIONS: [&str; 8] = [
    "anger",
    "anticipation",
    "disgust",
    "fear",
    "joy",
    "sadness",
    "surprise",
    "trust",
];

/// Per-word scores for the eight basic emotions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmotionLexicon {
    scores: HashMap<String, [f64; 8]>,
}

impl EmotionLexicon {
    /// Parse `word<TAB>emotion<TAB>score` lines. Polarity rows (`positive`,
    /// `negative`) found in common lexicon files are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut scores: HashMap<String, [f64; 8]> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = t.split('\t').map(str::trim).collect();
            if f.len() != 3 {
                return Err(Error::format(n, "expected word<TAB>emotion<TAB>score"));
            }
            let emotion = f[1].to_lowercase();
            if emotion == "positive" || emotion == "negative" {
                continue;
            }
            let k = EMOTIONS
                .iter()
                .position(|e| *e == emotion)
                .ok_or_else(|| Error::format(n, format!("unknown emotion {:?}", f[1])))?;
            let score: f64 = f[2]
                .parse()
                .map_err(|_| Error::format(n, format!("bad score {:?}", f[2])))?;
            if !(score >= 0.0) || !score.is_finite() {
                return Err(Error::format(n, "scores must be finite and nonnegative"));
            }
            scores.entry(f[0].to_lowercase()).or_insert([0.0; 8])[k] = score;
        }
        Ok(EmotionLexicon { scores })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        EmotionLexicon::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64; 8]> {
        self.scores.get(word)
    }
}

/// Component-wise sum of the tokens' emotion scores.
pub fn emotion_scores(tokens: &[String], lex: &EmotionLexicon) -> [f64; 8] {
    let mut acc = [0.0; 8];
    for s in tokens.iter().filter_map(|t| lex.get(t)) {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    acc
}

/// Mean of the in-vocabulary token vectors and how many tokens were found.
/// With no hits the vector is all zeros.
pub fn avg_embedding_counted(tokens: &[String], emb: &Embedding) -> (Vec<f64>, usize) {
    let mut acc = vec![0.0; emb.dim()];
    let mut hits = 0;
    for v in tokens.iter().filter_map(|t| emb.vector(t)) {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += *x as f64;
        }
        hits += 1;
    }
    if hits > 0 {
        acc.iter_mut().for_each(|a| *a /= hits as f64);
    }
    (acc, hits)
}

pub fn avg_embedding(tokens: &[String], emb: &Embedding) -> Vec<f64> {
    avg_embedding_counted(tokens, emb).0
}

/// Token vectors laid end to end, truncated or zero-padded to `max_len` tokens.
pub fn pad_concat(tokens: &[String], emb: &Embedding, max_len: usize) -> Vec<f64> {
    let d = emb.dim();
    let mut out = vec![0.0; max_len * d];
    for (slot, t) in out.chunks_mut(d).zip(tokens) {
        if let Some(v) = emb.vector(t) {
            for (o, x) in slot.iter_mut().zip(v) {
                *o = *x as f64;
            }
        }
    }
    out
}

/// Per-column affine rescaling fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Column ranges of `x` (rows are samples).
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Empty("cannot fit a scaler on an empty matrix".into()));
        }
        let min = x.column_iter().map(|c| c.min()).collect();
        let max = x.column_iter().map(|c| c.max()).collect();
        Ok(MinMaxScaler { min, max })
    }

    /// Map training ranges onto `[0, 1]`; values outside the range are not
    /// clamped, and constant columns become 0.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.min.len() {
            return Err(Error::DimensionMismatch { expected: self.min.len(), found: x.ncols() });
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (lo, span) = (self.min[j], self.max[j] - self.min[j]);
            if span > 0.0 {
                col.apply(|v| *v = (*v - lo) / span);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

pub fn fit_minmax(x: &DMatrix<f64>) -> Result<MinMaxScaler> {
    MinMaxScaler::fit(x)
}

pub fn apply_minmax(scaler: &MinMaxScaler, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    scaler.transform(x)
}

/// Which representation to extract. Resources are shared between runs.
#[derive(Clone, Debug)]
pub enum FeatureKind {
    Bow { size: usize },
    Category(Arc<CategoryLexicon>),
    Emotion(Arc<EmotionLexicon>),
    Average(Arc<Embedding>),
    Concat(Arc<Embedding>),
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Bow { .. } => "bow",
            FeatureKind::Category(_) => "category",
            FeatureKind::Emotion(_) => "emotion",
            FeatureKind::Average(_) => "embedding-average",
            FeatureKind::Concat(_) => "embedding-concat",
        }
    }

    /// Word-embedding features, which some models cannot consume unscaled.
    pub fn is_embedding(&self) -> bool {
        matches!(self, FeatureKind::Average(_) | FeatureKind::Concat(_))
    }

    /// Token sequence this representation reads: stemmed and stopword-free for
    /// BOW, stopword-free for emotions, and raw lowercased tokens otherwise.
    fn tokens(&self, text: &str, policy: &StopwordPolicy) -> Vec<String> {
        let raw = tokenize_tweet(text);
        match self {
            FeatureKind::Bow { .. } => bow_terms(&raw, policy),
            FeatureKind::Emotion(_) => filter_stopwords(&raw, policy),
            _ => raw,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FeatureDiagnostics {
    pub rows: usize,
    /// Rows whose embedding features are zero because no token was in vocabulary.
    pub all_oov_rows: Vec<usize>,
}

/// A representation with its train-derived state (BOW vocabulary, padding length).
#[derive(Clone, Debug)]
pub struct Featurizer {
    kind: FeatureKind,
    policy: StopwordPolicy,
    bow: Option<BowVocab>,
    max_len: usize,
}

impl Featurizer {
    /// Fit on training posts only.
    pub fn fit(kind: FeatureKind, train: &[impl AsRef<str> + Sync]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("no training posts".into()));
        }
        let policy = StopwordPolicy::default();
        let mut f = Featurizer { kind, policy, bow: None, max_len: 0 };
        match &f.kind {
            FeatureKind::Bow { size } => {
                let docs: Vec<Vec<String>> =
                    train.par_iter().map(|t| f.kind.tokens(t.as_ref(), &f.policy)).collect();
                f.bow = Some(BowVocab::fit(&docs, *size)?);
            }
            FeatureKind::Concat(_) => {
                f.max_len = train
                    .iter()
                    .map(|t| f.kind.tokens(t.as_ref(), &f.policy).len())
                    .max()
                    .unwrap_or(0)
                    .max(1);
            }
            _ => {}
        }
        Ok(f)
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn bow_vocab(&self) -> Option<&BowVocab> {
        self.bow.as_ref()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FeatureKind::Bow { .. } => self.bow.as_ref().map_or(0, BowVocab::len),
            FeatureKind::Category(l) => l.len(),
            FeatureKind::Emotion(_) => EMOTIONS.len(),
            FeatureKind::Average(e) => e.dim(),
            FeatureKind::Concat(e) => e.dim() * self.max_len,
        }
    }

    /// One feature vector and an all-OOV flag for a single post.
    pub fn features(&self, text: &str) -> (Vec<f64>, bool) {
        let tokens = self.kind.tokens(text, &self.policy);
        match &self.kind {
            FeatureKind::Bow { .. } => (self.bow.as_ref().expect("fitted").vector(&tokens), false),
            FeatureKind::Category(l) => (category_percentages(&tokens, l), false),
            FeatureKind::Emotion(l) => (emotion_scores(&tokens, l).to_vec(), false),
            FeatureKind::Average(e) => {
                let (v, hits) = avg_embedding_counted(&tokens, e);
                (v, hits == 0)
            }
            FeatureKind::Concat(e) => {
                let oov = tokens.iter().all(|t| !e.contains(t));
                (pad_concat(&tokens, e, self.max_len), oov)
            }
        }
    }

    /// Feature matrix with one row per post.
    pub fn transform(&self, texts: &[impl AsRef<str> + Sync]) -> (DMatrix<f64>, FeatureDiagnostics) {
        let rows: Vec<(Vec<f64>, bool)> =
            texts.par_iter().map(|t| self.features(t.as_ref())).collect();
        let dim = self.dim();
        let mut m = DMatrix::zeros(rows.len(), dim);
        let mut diag = FeatureDiagnostics { rows: rows.len(), all_oov_rows: Vec::new() };
        for (i, (v, oov)) in rows.into_iter().enumerate() {
            for (j, x) in v.into_iter().enumerate() {
                m[(i, j)] = x;
            }
            if oov && self.kind.is_embedding() {
                diag.all_oov_rows.push(i);
            }
        }
        (m, diag)
    }
}

/// Token-level statistics of a post collection.
pub fn token_stats(texts: &[impl AsRef<str>]) -> BTreeMap<&'static str, f64> {
    let mut tokens = 0usize;
    let mut max_len = 0usize;
    let mut uppercase_posts = 0usize;
    for t in texts {
        let t = t.as_ref();
        let n = tokenize_tweet(t).len();
        tokens += n;
        max_len = max_len.max(n);
        uppercase_posts += t.chars().any(char::is_uppercase) as usize;
    }
    let n = texts.len().max(1) as f64;
    BTreeMap::from([
        ("posts", texts.len() as f64),
        ("mean_tokens", tokens as f64 / n),
        ("max_tokens", max_len as f64),
        ("posts_with_uppercase", uppercase_posts as f64),
    ])
}
