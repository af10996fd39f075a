//! Non-linear mapping from the general embedding space into the domain
//! embedding space, and the embeddings built from it.
//!
//! Examples are stored as matrix columns throughout: `x` is `d_in × m` and
//! targets are `d_out × m`.

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

/// Single-hidden-layer perceptron `g(x) = W1·relu(W2·x + b2) + b1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpMapper {
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    w1: DMatrix<f64>,
    b1: DVector<f64>,
}

impl MlpMapper {
    pub fn new(
        w2: DMatrix<f64>,
        b2: DVector<f64>,
        w1: DMatrix<f64>,
        b1: DVector<f64>,
    ) -> Result<Self> {
        let h = w2.nrows();
        if h == 0 || w2.ncols() == 0 || w1.nrows() == 0 {
            return Err(Error::InvalidInput("mapper layers must be non-empty".into()));
        }
        if b2.len() != h {
            return Err(Error::DimensionMismatch { expected: h, found: b2.len() });
        }
        if w1.ncols() != h {
            return Err(Error::DimensionMismatch { expected: h, found: w1.ncols() });
        }
        if b1.len() != w1.nrows() {
            return Err(Error::DimensionMismatch { expected: w1.nrows(), found: b1.len() });
        }
        let m = MlpMapper { w2, b2, w1, b1 };
        if !m.is_finite() {
            return Err(Error::InvalidInput("mapper parameters must be finite".into()));
        }
        Ok(m)
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(d_in: usize, hidden: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpMapper {
            w2: glorot(hidden, d_in, &mut rng),
            b2: DVector::zeros(hidden),
            w1: glorot(d_out, hidden, &mut rng),
            b1: DVector::zeros(d_out),
        }
    }

    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        MlpMapper {
            w2: DMatrix::zeros(hidden, d_in),
            b2: DVector::zeros(hidden),
            w1: DMatrix::zeros(d_out, hidden),
            b1: DVector::zeros(d_out),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w2.nrows()
    }

    /// Input-to-hidden weights (`h × d_in`).
    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &DVector<f64> {
        &self.b2
    }

    /// Hidden-to-output weights (`d_out × h`).
    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &DVector<f64> {
        &self.b1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d_in(), x.len())?;
        let x = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.map_columns(&x).as_slice().to_vec())
    }

    /// Pre-activations, hidden activations and outputs for a batch.
    fn activations(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut z = &self.w2 * x;
        add_bias(&mut z, &self.b2);
        let h = z.map(|v| v.max(0.0));
        let mut o = &self.w1 * &h;
        add_bias(&mut o, &self.b1);
        (z, h, o)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("mlp-mapper");
        c.put_matrix("w2", &self.w2);
        c.put_vector("b2", &self.b2);
        c.put_matrix("w1", &self.w1);
        c.put_vector("b1", &self.b1);
        c
    }

    fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        MlpMapper::new(c.matrix("w2")?, c.vector("b2")?, c.matrix("w1")?, c.vector("b1")?)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Params for MlpMapper {
    fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w1.as_slice(),
            self.b1.as_slice(),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
        ]
    }
}

/// Affine map `W·x + b` fitted by least squares.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMapper {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

impl LinearMapper {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if bias.len() != weight.nrows() {
            return Err(Error::DimensionMismatch { expected: weight.nrows(), found: bias.len() });
        }
        Ok(LinearMapper { weight, bias })
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// Least-squares fit of `y ≈ W·x + b` through the normal equations.
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        check_examples(x, y)?;
        let (d, m) = x.shape();
        let mut xa = DMatrix::from_element(d + 1, m, 1.0);
        xa.rows_mut(0, d).copy_from(x);
        let gram = &xa * xa.transpose();
        let rhs = &xa * y.transpose();
        // A vanishing ridge keeps rank-deficient problems solvable.
        let ridge = 1e-10 * (gram.trace() / (d + 1) as f64).max(1e-300);
        let reg = &gram + DMatrix::identity(d + 1, d + 1) * ridge;
        let sol = match reg.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => reg
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::InvalidInput(e.to_string()))?,
        };
        let wt = sol.transpose();
        Ok(LinearMapper {
            weight: wt.columns(0, d).into_owned(),
            bias: wt.column(d).into_owned(),
        })
    }
}

/// A trained map from `d_in`-vectors to `d_out`-vectors.
pub trait VectorMap: Sync {
    fn d_in(&self) -> usize;
    fn d_out(&self) -> usize;
    /// Map every column of `x`.
    fn map_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
}

impl VectorMap for MlpMapper {
    fn d_in(&self) -> usize {
        self.w2.ncols()
    }

    fn d_out(&self) -> usize {
        self.w1.nrows()
    }

    fn map_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.activations(x).2
    }
}

impl VectorMap for LinearMapper {
    fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    fn map_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut o = &self.weight * x;
        add_bias(&mut o, &self.bias);
        o
    }
}

/// Either kind of trained mapper, as stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum Mapper {
    Mlp(MlpMapper),
    Linear(LinearMapper),
}

impl VectorMap for Mapper {
    fn d_in(&self) -> usize {
        match self {
            Mapper::Mlp(m) => m.d_in(),
            Mapper::Linear(m) => m.d_in(),
        }
    }

    fn d_out(&self) -> usize {
        match self {
            Mapper::Mlp(m) => m.d_out(),
            Mapper::Linear(m) => m.d_out(),
        }
    }

    fn map_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Mapper::Mlp(m) => m.map_columns(x),
            Mapper::Linear(m) => m.map_columns(x),
        }
    }
}

impl Mapper {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let c = match self {
            Mapper::Mlp(m) => m.to_checkpoint(),
            Mapper::Linear(m) => {
                let mut c = Checkpoint::new("linear-mapper");
                c.put_matrix("weight", &m.weight);
                c.put_vector("bias", &m.bias);
                c
            }
        };
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Checkpoint::load(path)?;
        c.expect_kind(&["mlp-mapper", "linear-mapper"])?;
        if c.kind == "mlp-mapper" {
            Ok(Mapper::Mlp(MlpMapper::from_checkpoint(&c)?))
        } else {
            let m = LinearMapper::new(c.matrix("weight")?, c.vector("bias")?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            Ok(Mapper::Linear(m))
        }
    }
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn check_examples(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.ncols() == 0 {
        return Err(Error::Empty("no training examples".into()));
    }
    check_dim(x.ncols(), y.ncols())
}

/// Repulsive term of the second centroid objective:
/// `-weight · min(‖g(x) − far‖², cap)` per example.
#[derive(Clone, Copy, Debug)]
pub struct FarTerm<'a> {
    pub centroids: &'a DMatrix<f64>,
    pub weight: f64,
    pub cap: f64,
}

/// Mean squared residual norm of `g(x)` against `y`.
pub fn mse_loss(m: &MlpMapper, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    objective(m, x, y, None)
}

/// Gradient of [`mse_loss`] with respect to every parameter.
pub fn gradient(m: &MlpMapper, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<MlpMapper> {
    Ok(objective_gradient(m, x, y, None)?.1)
}

/// Mean over examples of `‖g(x) − near‖²`, minus the capped far term when given.
pub fn objective(
    m: &MlpMapper,
    x: &DMatrix<f64>,
    near: &DMatrix<f64>,
    far: Option<FarTerm>,
) -> Result<f64> {
    check_shapes(m, x, near, far)?;
    Ok(evaluate(m, x, near, far, false).0)
}

pub fn objective_gradient(
    m: &MlpMapper,
    x: &DMatrix<f64>,
    near: &DMatrix<f64>,
    far: Option<FarTerm>,
) -> Result<(f64, MlpMapper)> {
    check_shapes(m, x, near, far)?;
    let (l, g) = evaluate(m, x, near, far, true);
    Ok((l, g.expect("gradient requested")))
}

fn check_shapes(
    m: &MlpMapper,
    x: &DMatrix<f64>,
    near: &DMatrix<f64>,
    far: Option<FarTerm>,
) -> Result<()> {
    check_examples(x, near)?;
    check_dim(m.d_in(), x.nrows())?;
    check_dim(m.d_out(), near.nrows())?;
    if let Some(f) = far {
        check_dim(near.ncols(), f.centroids.ncols())?;
        check_dim(m.d_out(), f.centroids.nrows())?;
    }
    Ok(())
}

fn evaluate(
    m: &MlpMapper,
    x: &DMatrix<f64>,
    near: &DMatrix<f64>,
    far: Option<FarTerm>,
    want_grad: bool,
) -> (f64, Option<MlpMapper>) {
    let n = x.ncols() as f64;
    let (z, h, o) = m.activations(x);
    let resid = &o - near;
    let mut loss = resid.norm_squared() / n;
    // d(loss)/d(output), one column per example.
    let mut d_out = want_grad.then(|| &resid * (2.0 / n));

    if let Some(f) = far.filter(|f| f.weight != 0.0) {
        let away = &o - f.centroids;
        let mut repel = 0.0;
        for (j, col) in away.column_iter().enumerate() {
            let d2 = col.norm_squared();
            if d2 < f.cap {
                repel += d2;
                if let Some(d) = d_out.as_mut() {
                    let mut dc = d.column_mut(j);
                    dc.axpy(-2.0 * f.weight / n, &col, 1.0);
                }
            } else {
                repel += f.cap;
            }
        }
        loss -= f.weight * repel / n;
    }

    let grad = d_out.map(|d| {
        let gb1 = d.column_sum();
        let gw1 = &d * h.transpose();
        let mut dh = m.w1.tr_mul(&d);
        dh.zip_apply(&z, |g, zv| {
            if zv <= 0.0 {
                *g = 0.0;
            }
        });
        let gb2 = dh.column_sum();
        let gw2 = &dh * x.transpose();
        MlpMapper { w2: gw2, b2: gb2, w1: gw1, b1: gb1 }
    });
    (loss, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperTrainConfig {
    pub hidden_units: usize,
    pub optimizer: SgdConfig,
}

impl Default for MapperTrainConfig {
    fn default() -> Self {
        MapperTrainConfig { hidden_units: 400, optimizer: SgdConfig::default() }
    }
}

impl MapperTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Fit an MLP on column examples toward `near`, optionally repelled from `far`.
///
/// The far-term cap is ten times the mean near loss of the initial model.
pub fn fit_columns(
    x: &DMatrix<f64>,
    near: &DMatrix<f64>,
    far: Option<(&DMatrix<f64>, f64)>,
    cfg: &MapperTrainConfig,
) -> Result<(MlpMapper, TrainingHistory)> {
    cfg.validate()?;
    check_examples(x, near)?;
    let init = MlpMapper::init(x.nrows(), cfg.hidden_units, near.nrows(), cfg.optimizer.seed);
    let far = match far {
        Some((centroids, weight)) if weight != 0.0 => {
            if weight < 0.0 || !weight.is_finite() {
                return Err(Error::Config("far_weight must be nonnegative".into()));
            }
            let cap = 10.0 * mse_loss(&init, x, near)?;
            Some(FarTerm { centroids, weight, cap })
        }
        _ => None,
    };
    check_shapes(&init, x, near, far)?;

    let batch = |idx: &[usize]| {
        let xb = x.select_columns(idx);
        let yb = near.select_columns(idx);
        let fb = far.map(|f| f.centroids.select_columns(idx));
        (xb, yb, fb)
    };
    fn with_far<'a>(far: Option<FarTerm>, fb: &'a Option<DMatrix<f64>>) -> Option<FarTerm<'a>> {
        far.zip(fb.as_ref()).map(|(f, c)| FarTerm { centroids: c, weight: f.weight, cap: f.cap })
    }
    train_minibatch(
        init,
        x.ncols(),
        &cfg.optimizer,
        |m, idx| {
            let (xb, yb, fb) = batch(idx);
            let (l, g) = evaluate(m, &xb, &yb, with_far(far, &fb), true);
            (l, g.expect("gradient requested"))
        },
        |m, idx| {
            let (xb, yb, fb) = batch(idx);
            evaluate(m, &xb, &yb, with_far(far, &fb), false).0
        },
    )
}

/// Source and target columns for the words shared by both embeddings.
fn paired_columns(te: &Embedding, de: &Embedding) -> Result<(Vec<String>, DMatrix<f64>, DMatrix<f64>)> {
    let vocab = common_vocab(te, de);
    if vocab.len() < 2 {
        return Err(Error::Empty(format!(
            "the embeddings share {} words; at least 2 are needed",
            vocab.len()
        )));
    }
    let x = columns(te, &vocab)?;
    let y = columns(de, &vocab)?;
    Ok((vocab, x, y))
}

/// Train `g` on `(TE(w), DE(w))` for every shared word.
pub fn train_mapper(te: &Embedding, de: &Embedding, cfg: &MapperTrainConfig) -> Result<MlpMapper> {
    Ok(train_mapper_detailed(te, de, cfg)?.0)
}

pub fn train_mapper_detailed(
    te: &Embedding,
    de: &Embedding,
    cfg: &MapperTrainConfig,
) -> Result<(MlpMapper, TrainingHistory)> {
    let (_, x, y) = paired_columns(te, de)?;
    fit_columns(&x, &y, None, cfg)
}

/// Least-squares affine map on the shared words.
pub fn train_linear_mapper(te: &Embedding, de: &Embedding) -> Result<LinearMapper> {
    let (_, x, y) = paired_columns(te, de)?;
    LinearMapper::fit(&x, &y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidVariant {
    /// Pull toward the neighbourhood centroid.
    Centroid1,
    /// Also push away from the centroid of the most distant words.
    Centroid2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentroidConfig {
    pub k_near: usize,
    pub k_far: usize,
    pub far_weight: f64,
    pub variant: CentroidVariant,
}

impl Default for CentroidConfig {
    fn default() -> Self {
        CentroidConfig {
            k_near: 10,
            k_far: 10,
            far_weight: 0.1,
            variant: CentroidVariant::Centroid1,
        }
    }
}

impl CentroidConfig {
    /// Check the settings against a target vocabulary of `vocab_len` words.
    pub fn validate(&self, vocab_len: usize) -> Result<()> {
        let limit = vocab_len.saturating_sub(1);
        if self.k_near == 0 || self.k_near > limit {
            return Err(Error::Config(format!("k_near must be in 1..={limit}")));
        }
        if self.variant == CentroidVariant::Centroid2 {
            if self.k_far == 0 || self.k_far > limit {
                return Err(Error::Config(format!("k_far must be in 1..={limit}")));
            }
            if !(self.far_weight >= 0.0) || !self.far_weight.is_finite() {
                return Err(Error::Config("far_weight must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn uses_far(&self) -> bool {
        self.variant == CentroidVariant::Centroid2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CentroidSide {
    Near,
    Far,
}

/// Near and far centroid targets, one column per query word.
#[derive(Clone, Debug)]
pub struct CentroidTargets {
    pub near: DMatrix<f64>,
    pub far: Option<DMatrix<f64>>,
}

/// Centroid of `w` and its nearest neighbours, or of the words farthest from `w`.
pub fn centroid_target(
    de: &Embedding,
    w: &str,
    ccfg: &CentroidConfig,
    side: CentroidSide,
) -> Result<Vec<f64>> {
    let cfg = CentroidConfig {
        variant: match side {
            CentroidSide::Near => ccfg.variant,
            CentroidSide::Far => CentroidVariant::Centroid2,
        },
        ..ccfg.clone()
    };
    let t = centroid_targets(de, &[w], &cfg)?;
    let m = match side {
        CentroidSide::Near => t.near,
        CentroidSide::Far => t.far.expect("far centroids requested"),
    };
    Ok(m.as_slice().to_vec())
}

/// Queries per distance block; bounds the `|V| × block` distance matrix.
const QUERY_BLOCK: usize = 256;

/// Centroid targets for many words at once, using blocked distance products.
///
/// Distance ties are broken by word order so the result is deterministic.
pub fn centroid_targets(
    de: &Embedding,
    words: &[impl AsRef<str> + Sync],
    ccfg: &CentroidConfig,
) -> Result<CentroidTargets> {
    ccfg.validate(de.len())?;
    let query: Vec<usize> = words
        .iter()
        .map(|w| {
            de.index_of(w.as_ref())
                .ok_or_else(|| Error::OutOfVocabulary(w.as_ref().to_string()))
        })
        .collect::<Result<_>>()?;
    let all = DMatrix::from_column_slice(de.dim(), de.len(), &to_f64(de.as_flat()));
    let norms: Vec<f64> = all.column_iter().map(|c| c.norm_squared()).collect();
    let dim = de.dim();
    let far = ccfg.uses_far();

    let blocks: Vec<(Vec<f64>, Vec<f64>)> = query
        .par_chunks(QUERY_BLOCK)
        .map(|block| {
            let q = all.select_columns(block);
            let g = all.tr_mul(&q);
            let mut near_out = Vec::with_capacity(block.len() * dim);
            let mut far_out = Vec::new();
            let mut cand: Vec<(f64, usize)> = Vec::with_capacity(de.len());
            for (c, &qi) in block.iter().enumerate() {
                cand.clear();
                cand.extend(
                    (0..de.len())
                        .filter(|&j| j != qi)
                        .map(|j| (norms[j] + norms[qi] - 2.0 * g[(j, c)], j)),
                );
                let closer = |a: &(f64, usize), b: &(f64, usize)| {
                    a.0.total_cmp(&b.0).then_with(|| de.words()[a.1].cmp(&de.words()[b.1]))
                };
                let mut members = vec![qi];
                members.extend(smallest(&mut cand, ccfg.k_near, closer));
                near_out.extend(mean_of(&all, &members).iter());
                if far {
                    let farther = |a: &(f64, usize), b: &(f64, usize)| {
                        b.0.total_cmp(&a.0).then_with(|| de.words()[a.1].cmp(&de.words()[b.1]))
                    };
                    let members = smallest(&mut cand, ccfg.k_far, farther);
                    far_out.extend(mean_of(&all, &members).iter());
                }
            }
            (near_out, far_out)
        })
        .collect();

    let n = query.len();
    let mut near = Vec::with_capacity(n * dim);
    let mut far_data = Vec::with_capacity(if far { n * dim } else { 0 });
    for (a, b) in blocks {
        near.extend(a);
        far_data.extend(b);
    }
    Ok(CentroidTargets {
        near: DMatrix::from_vec(dim, n, near),
        far: far.then(|| DMatrix::from_vec(dim, n, far_data)),
    })
}

fn smallest(
    cand: &mut [(f64, usize)],
    k: usize,
    cmp: impl Fn(&(f64, usize), &(f64, usize)) -> std::cmp::Ordering,
) -> Vec<usize> {
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, &cmp);
    }
    cand[..k].iter().map(|&(_, j)| j).collect()
}

fn mean_of(all: &DMatrix<f64>, members: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(all.nrows());
    for &j in members {
        acc += all.column(j);
    }
    acc / members.len() as f64
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Train `g` toward DE neighbourhood centroids of each shared word.
pub fn train_centroid_mapper(
    te: &Embedding,
    de: &Embedding,
    cfg: &MapperTrainConfig,
    ccfg: &CentroidConfig,
) -> Result<MlpMapper> {
    Ok(train_centroid_mapper_detailed(te, de, cfg, ccfg)?.0)
}

pub fn train_centroid_mapper_detailed(
    te: &Embedding,
    de: &Embedding,
    cfg: &MapperTrainConfig,
    ccfg: &CentroidConfig,
) -> Result<(MlpMapper, TrainingHistory)> {
    cfg.validate()?;
    let (vocab, x, _) = paired_columns(te, de)?;
    let targets = centroid_targets(de, &vocab, ccfg)?;
    let far = targets.far.as_ref().map(|f| (f, ccfg.far_weight));
    fit_columns(&x, &targets.near, far, cfg)
}

/// Rows mapped per parallel task.
const MAP_CHUNK: usize = 1024;

/// Apply `m` to every row of `emb`, keeping word order.
fn map_all(emb: &Embedding, m: &impl VectorMap) -> Result<Vec<f32>> {
    check_dim(m.d_in(), emb.dim())?;
    let d = emb.dim();
    let chunks: Vec<Vec<f32>> = emb
        .as_flat()
        .par_chunks(MAP_CHUNK * d)
        .map(|rows| {
            let x = DMatrix::from_column_slice(d, rows.len() / d, &to_f64(rows));
            m.map_columns(&x).iter().map(|&v| v as f32).collect()
        })
        .collect();
    let out = chunks.concat();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("mapped vectors overflow f32".into()));
    }
    Ok(out)
}

/// Embed every TE word through `m`, shared words included.
pub fn build_ate(te: &Embedding, m: &impl VectorMap) -> Result<Embedding> {
    let data = map_all(te, m)?;
    Embedding::new(te.words().to_vec(), data, m.d_out())
}

/// Like [`build_ate`], but words present in `de` keep their DE vectors.
pub fn build_ate_keep_de(te: &Embedding, de: &Embedding, m: &impl VectorMap) -> Result<Embedding> {
    check_dim(m.d_out(), de.dim())?;
    let mut data = map_all(te, m)?;
    let d = m.d_out();
    for (i, w) in te.words().iter().enumerate() {
        if let Some(v) = de.vector(w) {
            data[i * d..(i + 1) * d].copy_from_slice(v);
        }
    }
    Embedding::new(te.words().to_vec(), data, d)
}

/// TE with only the words shared with `de` replaced by their mapped vectors.
pub fn build_partial_adjusted(
    te: &Embedding,
    de: &Embedding,
    m: &impl VectorMap,
) -> Result<Embedding> {
    if m.d_out() != te.dim() {
        return Err(Error::InvalidInput(format!(
            "partial adjustment needs equal input and output dims, got {} and {}",
            te.dim(),
            m.d_out()
        )));
    }
    // Mapping everything and restoring OOV rows keeps the shared rows identical to build_ate.
    let mut data = map_all(te, m)?;
    let d = te.dim();
    for (i, w) in te.words().iter().enumerate() {
        if !de.contains(w) {
            data[i * d..(i + 1) * d].copy_from_slice(te.row(i));
        }
    }
    Embedding::new(te.words().to_vec(), data, d)
}
