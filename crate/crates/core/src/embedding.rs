//! Word embeddings: a vocabulary plus a dense row-major `f32` matrix.
//!
//! The text interchange format is the usual word2vec one: a `"N D"` header
//! followed by `N` lines of `word f1 ... fD`. Components are written with the
//! shortest decimal representation that parses back to the same `f32`, so a
//! save/load cycle is bit-exact.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    dim: usize,
}

impl Embedding {
    /// Build an embedding from words and a flattened `words.len() × dim` matrix.
    pub fn new(words: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dimension must be positive".into()));
        }
        if data.len() != words.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: words.len() * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite component for word {:?}",
                words[pos / dim]
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate word {w:?}")));
            }
        }
        Ok(Embedding {
            words,
            index,
            data,
            dim,
        })
    }

    /// An embedding with no words.
    pub fn empty(dim: usize) -> Result<Self> {
        Embedding::new(Vec::new(), Vec::new(), dim)
    }

    pub fn from_rows<S: Into<String>>(rows: impl IntoIterator<Item = (S, Vec<f32>)>) -> Result<Self> {
        let mut words = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (w, v) in rows {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            words.push(w.into());
            data.extend(v);
        }
        Embedding::new(words, data, dim.unwrap_or(1))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Case-sensitive lookup; `None` for out-of-vocabulary words.
    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.index_of(word).map(|i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.words.iter().map(String::as_str).zip(self.data.chunks_exact(self.dim))
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Keep only the listed words that are present, in the given order.
    pub fn restrict<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Embedding {
        let mut out_words = Vec::new();
        let mut data = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for w in words {
            if let Some(v) = self.vector(w) {
                if seen.insert(w) {
                    out_words.push(w.to_string());
                    data.extend_from_slice(v);
                }
            }
        }
        Embedding::new(out_words, data, self.dim).expect("subset of a valid embedding")
    }

    pub fn read_word2vec_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(1, "missing header"))??;
        let mut fields = header.split_whitespace();
        let (n, dim) = match (fields.next(), fields.next(), fields.next()) {
            (Some(n), Some(d), None) => (
                n.parse::<usize>()
                    .map_err(|_| Error::format(1, format!("bad word count {n:?}")))?,
                d.parse::<usize>()
                    .map_err(|_| Error::format(1, format!("bad dimension {d:?}")))?,
            ),
            _ => return Err(Error::format(1, "header must be \"N D\"")),
        };
        if dim == 0 {
            return Err(Error::format(1, "dimension must be positive"));
        }

        let mut words = Vec::with_capacity(n);
        let mut index = HashMap::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            let lineno = i + 2;
            let line = lines
                .next()
                .ok_or_else(|| Error::format(lineno, format!("expected {n} rows, found {i}")))??;
            let mut fields = line.split_whitespace();
            let word = fields
                .next()
                .ok_or_else(|| Error::format(lineno, "empty row"))?;
            let start = data.len();
            for f in fields {
                let v: f32 = f
                    .parse()
                    .map_err(|_| Error::format(lineno, format!("bad float {f:?}")))?;
                if !v.is_finite() {
                    return Err(Error::format(lineno, format!("non-finite value {f:?}")));
                }
                data.push(v);
            }
            let found = data.len() - start;
            if found != dim {
                return Err(Error::format(
                    lineno,
                    format!("expected {dim} components, found {found}"),
                ));
            }
            if index.contains_key(word) {
                log::warn!("line {lineno}: duplicate word {word:?}, keeping first occurrence");
                data.truncate(start);
                continue;
            }
            index.insert(word.to_string(), words.len());
            words.push(word.to_string());
        }
        Ok(Embedding {
            words,
            index,
            data,
            dim,
        })
    }

    pub fn write_word2vec_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (word, vec) in self.iter() {
            w.write_all(word.as_bytes())?;
            for v in vec {
                // `{:?}` is the shortest representation that round-trips.
                write!(w, " {v:?}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_word2vec_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Embedding::read_word2vec_text(BufReader::new(file))
    }

    pub fn save_word2vec_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_word2vec_text(BufWriter::new(file))
    }

    /// Binary sidecar: magic, `u64` count and dimension, then per word a
    /// `u32` byte length, the UTF-8 bytes and `dim` little-endian `f32`s.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for (word, vec) in self.iter() {
            w.write_all(&(word.len() as u32).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
            for v in vec {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::format(0, "not a binary embedding file"));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)?;
        let dim = u64::from_le_bytes(u64buf) as usize;
        let mut words = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        let mut u32buf = [0u8; 4];
        let mut row = vec![0u8; dim * 4];
        for i in 0..n {
            r.read_exact(&mut u32buf)?;
            let mut word = vec![0u8; u32::from_le_bytes(u32buf) as usize];
            r.read_exact(&mut word)?;
            let word = String::from_utf8(word)
                .map_err(|_| Error::format(i + 1, "word is not valid UTF-8"))?;
            r.read_exact(&mut row)?;
            data.extend(
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
            words.push(word);
        }
        Embedding::new(words, data, dim)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Embedding::read_binary(BufReader::new(file))
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_binary(BufWriter::new(file))
    }

    /// Load either format, sniffing the binary magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut magic = [0u8; 4];
        let is_binary = file.read(&mut magic).map(|n| n == 4 && &magic == BINARY_MAGIC)?;
        if is_binary {
            Embedding::load_binary(path)
        } else {
            Embedding::load_word2vec_text(path)
        }
    }
}

const BINARY_MAGIC: &[u8; 4] = b"EAB1";

/// Words present in both vocabularies, sorted lexicographically.
pub fn common_vocab(a: &Embedding, b: &Embedding) -> Vec<String> {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut out: Vec<String> = small
        .words()
        .iter()
        .filter(|w| large.contains(w))
        .cloned()
        .collect();
    out.sort_unstable();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Cosine similarity; higher is closer.
    Cosine,
    /// Euclidean distance; lower is closer.
    Euclidean,
}

#[derive(Clone, Copy, Debug)]
pub enum Query<'a> {
    Word(&'a str),
    Vector(&'a [f32]),
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Exact brute-force k nearest neighbours. A word query is excluded from its
/// own result list; ties are broken lexicographically.
pub fn nearest_neighbors(
    emb: &Embedding,
    query: Query<'_>,
    k: usize,
    metric: Metric,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let (qvec, skip) = match query {
        Query::Word(w) => {
            let i = emb
                .index_of(w)
                .ok_or_else(|| Error::OutOfVocabulary(w.to_string()))?;
            (emb.row(i), Some(i))
        }
        Query::Vector(v) => {
            if v.len() != emb.dim() {
                return Err(Error::DimensionMismatch {
                    expected: emb.dim(),
                    found: v.len(),
                });
            }
            (v, None)
        }
    };
    let mut scored: Vec<(usize, f64)> = (0..emb.len())
        .filter(|&i| Some(i) != skip)
        .map(|i| {
            let row = emb.row(i);
            let s = match metric {
                Metric::Cosine => cosine(qvec, row),
                Metric::Euclidean => sq_dist(qvec, row).sqrt(),
            };
            (i, s)
        })
        .collect();
    let words = emb.words();
    let by_score = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        let primary = match metric {
            Metric::Cosine => b.1.total_cmp(&a.1),
            Metric::Euclidean => a.1.total_cmp(&b.1),
        };
        primary.then_with(|| words[a.0].cmp(&words[b.0]))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_score);
        scored.truncate(k);
    }
    scored.sort_by(by_score);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (words[i].clone(), s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(rows: &[(&str, &[f32])]) -> Embedding {
        Embedding::from_rows(rows.iter().map(|(w, v)| (*w, v.to_vec()))).unwrap()
    }

    #[test]
    fn parse_text() {
        let e = Embedding::read_word2vec_text("2 3\na 1 0 0\nb 0 1 0".as_bytes()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.dim(), 3);
        assert_eq!(e.vector("b"), Some(&[0.0, 1.0, 0.0][..]));
    }

    #[test]
    fn row_arity_error_reports_line() {
        let err = Embedding::read_word2vec_text("1 2\na 1".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_headers() {
        for text in ["", "2\na 1", "x 2\n", "1 2 3\n", "1 0\na\n"] {
            assert!(
                matches!(Embedding::read_word2vec_text(text.as_bytes()), Err(Error::Format { line: 1, .. })),
                "{text:?}"
            );
        }
        assert!(matches!(
            Embedding::read_word2vec_text("3 1\na 1\n".as_bytes()),
            Err(Error::Format { line: 3, .. })
        ));
        assert!(Embedding::read_word2vec_text("1 1\na nan\n".as_bytes()).is_err());
    }

    #[test]
    fn duplicate_words_keep_first() {
        let e = Embedding::read_word2vec_text("3 1\na 1\nb 2\na 3\n".as_bytes()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.vector("a"), Some(&[1.0][..]));
    }

    #[test]
    fn empty_embedding_serializes_header_only() {
        let e = Embedding::empty(7).unwrap();
        let mut out = Vec::new();
        e.write_word2vec_text(&mut out).unwrap();
        assert_eq!(out, b"0 7\n");
        assert_eq!(Embedding::read_word2vec_text(&out[..]).unwrap(), e);
    }

    #[test]
    fn tenth_roundtrips_bit_exactly() {
        let e = emb(&[("x", &[0.1, -0.1, 1e-30, f32::MAX])]);
        let mut out = Vec::new();
        e.write_word2vec_text(&mut out).unwrap();
        let back = Embedding::read_word2vec_text(&out[..]).unwrap();
        for (a, b) in e.row(0).iter().zip(back.row(0)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn lookup_is_case_sensitive() {
        let e = emb(&[("a", &[1.0])]);
        assert!(e.vector("a").is_some());
        assert!(e.vector("A").is_none());
        assert!(e.vector("zzz").is_none());
    }

    #[test]
    fn common_vocab_cases() {
        let a = emb(&[("c", &[1.0]), ("a", &[1.0]), ("b", &[1.0])]);
        let b = emb(&[("b", &[0.0]), ("z", &[0.0]), ("c", &[0.0])]);
        assert_eq!(common_vocab(&a, &b), vec!["b", "c"]);
        assert_eq!(common_vocab(&a, &a), vec!["a", "b", "c"]);
        let d = emb(&[("q", &[0.0])]);
        assert!(common_vocab(&a, &d).is_empty());
    }

    #[test]
    fn neighbours() {
        let e = emb(&[("a", &[1.0, 0.0]), ("b", &[1.0, 0.0]), ("c", &[0.0, 1.0])]);
        let nn = nearest_neighbors(&e, Query::Word("a"), 1, Metric::Euclidean).unwrap();
        assert_eq!(nn, vec![("b".to_string(), 0.0)]);
        let all = nearest_neighbors(&e, Query::Word("a"), 5, Metric::Euclidean).unwrap();
        assert_eq!(all.len(), 2);
        assert!(matches!(
            nearest_neighbors(&e, Query::Word("zz"), 1, Metric::Cosine),
            Err(Error::OutOfVocabulary(_))
        ));

        let c = emb(&[("q", &[1.0, 0.0]), ("far", &[0.0, 1.0]), ("scaled", &[2.0, 0.0])]);
        let nn = nearest_neighbors(&c, Query::Word("q"), 2, Metric::Cosine).unwrap();
        assert_eq!(nn[0].0, "scaled");
        assert!((nn[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(nn[1], ("far".to_string(), 0.0));
    }

    #[test]
    fn neighbour_ties_are_lexicographic() {
        let e = emb(&[("q", &[0.0]), ("z", &[1.0]), ("m", &[-1.0]), ("b", &[1.0])]);
        let nn = nearest_neighbors(&e, Query::Vector(&[0.0]), 4, Metric::Euclidean).unwrap();
        let words: Vec<_> = nn.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(words, ["q", "b", "m", "z"]);
    }

    #[test]
    fn binary_roundtrip() {
        let e = emb(&[("héllo", &[0.1, 2.5]), ("x", &[-3.0, 1e-20])]);
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        assert_eq!(Embedding::read_binary(&buf[..]).unwrap(), e);
    }

    #[test]
    fn load_sniffs_format() {
        let dir = tempfile::tempdir().unwrap();
        let e = emb(&[("a", &[0.5, 0.25])]);
        e.save_binary(dir.path().join("e.bin")).unwrap();
        e.save_word2vec_text(dir.path().join("e.vec")).unwrap();
        assert_eq!(Embedding::load(dir.path().join("e.bin")).unwrap(), e);
        assert_eq!(Embedding::load(dir.path().join("e.vec")).unwrap(), e);
    }

    fn arb_embedding() -> impl Strategy<Value = Embedding> {
        (1usize..5, prop::collection::btree_set("[a-z]{1,6}", 0..12)).prop_flat_map(|(dim, words)| {
            let n = words.len();
            prop::collection::vec(-1e6f32..1e6, n * dim).prop_map(move |data| {
                Embedding::new(words.iter().cloned().collect(), data, dim).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn text_roundtrip_is_exact(e in arb_embedding()) {
            let mut out = Vec::new();
            e.write_word2vec_text(&mut out).unwrap();
            let back = Embedding::read_word2vec_text(&out[..]).unwrap();
            prop_assert_eq!(back.words(), e.words());
            for (a, b) in e.as_flat().iter().zip(back.as_flat()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn common_vocab_symmetric(a in arb_embedding(), b in arb_embedding()) {
            let ab = common_vocab(&a, &b);
            prop_assert_eq!(&ab, &common_vocab(&b, &a));
            prop_assert!(ab.len() <= a.len().min(b.len()));
        }

        #[test]
        fn euclidean_neighbours_sorted(e in arb_embedding()) {
            prop_assume!(e.len() >= 2);
            let q = e.words()[0].clone();
            let nn = nearest_neighbors(&e, Query::Word(&q), e.len() - 1, Metric::Euclidean).unwrap();
            prop_assert_eq!(nn.len(), e.len() - 1);
            prop_assert!(nn.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(nn.iter().all(|(w, _)| *w != q));
        }
    }
}
