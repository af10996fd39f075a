//! Averaged autoencoded meta-embedding: each source is encoded into a shared
//! space, the codes are averaged, and both sources are reconstructed from the
//! average.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::embedding::{common_vocab, Embedding};
use crate::error::{Error, Result};
use crate::optim::{columns, glorot, train_minibatch, Params, SgdConfig, TrainingHistory};

#[derive(Clone, Debug, PartialEq)]
pub struct AaemeModel {
    enc1: DMatrix<f64>,
    enc1_bias: DVector<f64>,
    enc2: DMatrix<f64>,
    enc2_bias: DVector<f64>,
    dec1: DMatrix<f64>,
    dec1_bias: DVector<f64>,
    dec2: DMatrix<f64>,
    dec2_bias: DVector<f64>,
    /// Apply tanh to each encoder output.
    tanh: bool,
    /// L2-normalize source vectors before encoding when building embeddings.
    normalize: bool,
}

impl AaemeModel {
    /// Model with identity-like square encoders/decoders and zero biases.
    /// Mostly useful for tests; requires both source dims to equal `meta_dim`.
    pub fn identity(dim: usize) -> Self {
        let eye = DMatrix::identity(dim, dim);
        let zero = DVector::zeros(dim);
        AaemeModel {
            enc1: eye.clone(),
            enc1_bias: zero.clone(),
            enc2: eye.clone(),
            enc2_bias: zero.clone(),
            dec1: eye.clone(),
            dec1_bias: zero.clone(),
            dec2: eye,
            dec2_bias: zero,
            tanh: false,
            normalize: false,
        }
    }

    pub fn zeros(d1: usize, d2: usize, meta_dim: usize) -> Self {
        AaemeModel {
            enc1: DMatrix::zeros(meta_dim, d1),
            enc1_bias: DVector::zeros(meta_dim),
            enc2: DMatrix::zeros(meta_dim, d2),
            enc2_bias: DVector::zeros(meta_dim),
            dec1: DMatrix::zeros(d1, meta_dim),
            dec1_bias: DVector::zeros(d1),
            dec2: DMatrix::zeros(d2, meta_dim),
            dec2_bias: DVector::zeros(d2),
            tanh: false,
            normalize: false,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(d1: usize, d2: usize, meta_dim: usize, tanh: bool, normalize: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AaemeModel {
            enc1: glorot(meta_dim, d1, &mut rng),
            enc1_bias: DVector::zeros(meta_dim),
            enc2: glorot(meta_dim, d2, &mut rng),
            enc2_bias: DVector::zeros(meta_dim),
            dec1: glorot(d1, meta_dim, &mut rng),
            dec1_bias: DVector::zeros(d1),
            dec2: glorot(d2, meta_dim, &mut rng),
            dec2_bias: DVector::zeros(d2),
            tanh,
            normalize,
        }
    }

    pub fn meta_dim(&self) -> usize {
        self.enc1.nrows()
    }

    pub fn source_dims(&self) -> (usize, usize) {
        (self.enc1.ncols(), self.enc2.ncols())
    }

    pub fn uses_tanh(&self) -> bool {
        self.tanh
    }

    pub fn normalizes_inputs(&self) -> bool {
        self.normalize
    }

    fn encode(&self, w: &DMatrix<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = w * x;
        for mut c in z.column_iter_mut() {
            c += b;
        }
        if self.tanh {
            z.apply(|v| *v = v.tanh());
        }
        z
    }

    /// Encoded codes of both sources and their average, one column per word.
    fn codes(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let h1 = self.encode(&self.enc1, &self.enc1_bias, x1);
        let h2 = self.encode(&self.enc2, &self.enc2_bias, x2);
        let meta = (&h1 + &h2) * 0.5;
        (h1, h2, meta)
    }

    /// Meta vectors for column-stacked source pairs.
    pub fn meta_columns(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x1, x2)?;
        Ok(self.codes(x1, x2).2)
    }

    fn check(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<()> {
        let (d1, d2) = self.source_dims();
        if x1.nrows() != d1 {
            return Err(Error::DimensionMismatch { expected: d1, found: x1.nrows() });
        }
        if x2.nrows() != d2 {
            return Err(Error::DimensionMismatch { expected: d2, found: x2.nrows() });
        }
        if x1.ncols() != x2.ncols() {
            return Err(Error::DimensionMismatch { expected: x1.ncols(), found: x2.ncols() });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Checkpoint::new("aaeme");
        c.put_matrix("enc1", &self.enc1);
        c.put_vector("enc1_bias", &self.enc1_bias);
        c.put_matrix("enc2", &self.enc2);
        c.put_vector("enc2_bias", &self.enc2_bias);
        c.put_matrix("dec1", &self.dec1);
        c.put_vector("dec1_bias", &self.dec1_bias);
        c.put_matrix("dec2", &self.dec2);
        c.put_vector("dec2_bias", &self.dec2_bias);
        c.put_attr("tanh", self.tanh);
        c.put_attr("normalize", self.normalize);
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Checkpoint::load(path)?;
        c.expect_kind(&["aaeme"])?;
        let m = AaemeModel {
            enc1: c.matrix("enc1")?,
            enc1_bias: c.vector("enc1_bias")?,
            enc2: c.matrix("enc2")?,
            enc2_bias: c.vector("enc2_bias")?,
            dec1: c.matrix("dec1")?,
            dec1_bias: c.vector("dec1_bias")?,
            dec2: c.matrix("dec2")?,
            dec2_bias: c.vector("dec2_bias")?,
            tanh: c.attr("tanh")?,
            normalize: c.attr("normalize")?,
        };
        let k = m.meta_dim();
        let (d1, d2) = m.source_dims();
        let consistent = m.enc1_bias.len() == k
            && m.enc2.nrows() == k
            && m.enc2_bias.len() == k
            && m.dec1.shape() == (d1, k)
            && m.dec1_bias.len() == d1
            && m.dec2.shape() == (d2, k)
            && m.dec2_bias.len() == d2;
        if !consistent || !m.is_finite() {
            return Err(Error::Checkpoint("inconsistent meta-embedding parameters".into()));
        }
        Ok(m)
    }
}

impl Params for AaemeModel {
    fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.enc1.as_slice(),
            self.enc1_bias.as_slice(),
            self.enc2.as_slice(),
            self.enc2_bias.as_slice(),
            self.dec1.as_slice(),
            self.dec1_bias.as_slice(),
            self.dec2.as_slice(),
            self.dec2_bias.as_slice(),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.enc1.as_mut_slice(),
            self.enc1_bias.as_mut_slice(),
            self.enc2.as_mut_slice(),
            self.enc2_bias.as_mut_slice(),
            self.dec1.as_mut_slice(),
            self.dec1_bias.as_mut_slice(),
            self.dec2.as_mut_slice(),
            self.dec2_bias.as_mut_slice(),
        ]
    }
}

/// `(enc1(x1) + enc2(x2)) / 2` for one word.
pub fn meta_embed(model: &AaemeModel, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    let a = DMatrix::from_column_slice(x1.len(), 1, x1);
    let b = DMatrix::from_column_slice(x2.len(), 1, x2);
    Ok(model.meta_columns(&a, &b)?.as_slice().to_vec())
}

/// Mean over words of both sources' squared reconstruction errors.
pub fn reconstruction_loss(model: &AaemeModel, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<f64> {
    check_nonempty(model, x1, x2)?;
    Ok(evaluate(model, x1, x2, false).0)
}

pub fn gradient(model: &AaemeModel, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<AaemeModel> {
    check_nonempty(model, x1, x2)?;
    Ok(evaluate(model, x1, x2, true).1.expect("gradient requested"))
}

fn check_nonempty(model: &AaemeModel, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<()> {
    model.check(x1, x2)?;
    if x1.ncols() == 0 {
        return Err(Error::Empty("no words to reconstruct".into()));
    }
    Ok(())
}

fn evaluate(
    model: &AaemeModel,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    want_grad: bool,
) -> (f64, Option<AaemeModel>) {
    let n = x1.ncols() as f64;
    let (h1, h2, meta) = model.codes(x1, x2);
    let decode = |w: &DMatrix<f64>, b: &DVector<f64>, x: &DMatrix<f64>| {
        let mut r = w * &meta;
        for mut c in r.column_iter_mut() {
            c += b;
        }
        r - x
    };
    let r1 = decode(&model.dec1, &model.dec1_bias, x1);
    let r2 = decode(&model.dec2, &model.dec2_bias, x2);
    let loss = (r1.norm_squared() + r2.norm_squared()) / n;
    if !want_grad {
        return (loss, None);
    }

    let g1 = r1 * (2.0 / n);
    let g2 = r2 * (2.0 / n);
    let d_meta = model.dec1.tr_mul(&g1) + model.dec2.tr_mul(&g2);
    let encoder_grad = |h: &DMatrix<f64>| {
        let mut d = &d_meta * 0.5;
        if model.tanh {
            d.zip_apply(h, |g, hv| *g *= 1.0 - hv * hv);
        }
        d
    };
    let e1 = encoder_grad(&h1);
    let e2 = encoder_grad(&h2);
    let grad = AaemeModel {
        enc1: &e1 * x1.transpose(),
        enc1_bias: e1.column_sum(),
        enc2: &e2 * x2.transpose(),
        enc2_bias: e2.column_sum(),
        dec1: &g1 * meta.transpose(),
        dec1_bias: g1.column_sum(),
        dec2: &g2 * meta.transpose(),
        dec2_bias: g2.column_sum(),
        tanh: model.tanh,
        normalize: model.normalize,
    };
    (loss, Some(grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaemeConfig {
    /// Shared code size; the first source's dimension when unset.
    pub meta_dim: Option<usize>,
    pub tanh: bool,
    pub normalize: bool,
    pub optimizer: SgdConfig,
}

impl Default for AaemeConfig {
    fn default() -> Self {
        AaemeConfig {
            meta_dim: None,
            tanh: false,
            normalize: true,
            optimizer: SgdConfig::default(),
        }
    }
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
}

/// Column matrices of both sources over `vocab`, normalized if requested.
fn source_columns(
    src1: &Embedding,
    src2: &Embedding,
    vocab: &[String],
    normalize: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut x1 = columns(src1, vocab)?;
    let mut x2 = columns(src2, vocab)?;
    if normalize {
        normalize_columns(&mut x1);
        normalize_columns(&mut x2);
    }
    Ok((x1, x2))
}

pub fn train_aaeme(src1: &Embedding, src2: &Embedding, cfg: &AaemeConfig) -> Result<AaemeModel> {
    Ok(train_aaeme_detailed(src1, src2, cfg)?.0)
}

pub fn train_aaeme_detailed(
    src1: &Embedding,
    src2: &Embedding,
    cfg: &AaemeConfig,
) -> Result<(AaemeModel, TrainingHistory)> {
    cfg.optimizer.validate()?;
    let meta_dim = cfg.meta_dim.unwrap_or(src1.dim());
    if meta_dim == 0 {
        return Err(Error::Config("meta_dim must be at least 1".into()));
    }
    let vocab = common_vocab(src1, src2);
    if vocab.len() < 2 {
        return Err(Error::Empty(format!(
            "the sources share {} words; at least 2 are needed",
            vocab.len()
        )));
    }
    let (x1, x2) = source_columns(src1, src2, &vocab, cfg.normalize)?;
    let init = AaemeModel::init(
        src1.dim(),
        src2.dim(),
        meta_dim,
        cfg.tanh,
        cfg.normalize,
        cfg.optimizer.seed,
    );
    let batch = |idx: &[usize]| (x1.select_columns(idx), x2.select_columns(idx));
    train_minibatch(
        init,
        vocab.len(),
        &cfg.optimizer,
        |m, idx| {
            let (a, b) = batch(idx);
            let (l, g) = evaluate(m, &a, &b, true);
            (l, g.expect("gradient requested"))
        },
        |m, idx| {
            let (a, b) = batch(idx);
            evaluate(m, &a, &b, false).0
        },
    )
}

/// Words encoded per parallel task.
const CHUNK: usize = 1024;

/// Meta-embedding over the words shared by both sources, in `src1` order.
pub fn build_meta_embedding(model: &AaemeModel, src1: &Embedding, src2: &Embedding) -> Result<Embedding> {
    let (d1, d2) = model.source_dims();
    if src1.dim() != d1 {
        return Err(Error::DimensionMismatch { expected: d1, found: src1.dim() });
    }
    if src2.dim() != d2 {
        return Err(Error::DimensionMismatch { expected: d2, found: src2.dim() });
    }
    let vocab: Vec<String> = src1
        .words()
        .iter()
        .filter(|w| src2.contains(w))
        .cloned()
        .collect();
    let parts: Vec<Vec<f32>> = vocab
        .par_chunks(CHUNK)
        .map(|words| {
            let (x1, x2) = source_columns(src1, src2, words, model.normalize)?;
            let meta = model.codes(&x1, &x2).2;
            Ok(meta.iter().map(|&v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    Embedding::new(vocab, parts.concat(), model.meta_dim())
}
