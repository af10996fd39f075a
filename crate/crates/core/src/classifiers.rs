//! Binary classifiers: multinomial naive Bayes, L2-regularized logistic
//! regression, and support vector machines with linear or RBF kernels, plus
//! stratified grid-search cross-validation.
//!
//! Feature matrices hold one sample per row; labels are 0 or 1.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{prf1, stratified_kfold};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Nb,
    Lr,
    Lsvm,
    Rsvm,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Nb => "nb",
            ModelFamily::Lr => "lr",
            ModelFamily::Lsvm => "lsvm",
            ModelFamily::Rsvm => "rsvm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nb" => Ok(ModelFamily::Nb),
            "lr" => Ok(ModelFamily::Lr),
            "lsvm" => Ok(ModelFamily::Lsvm),
            "rsvm" => Ok(ModelFamily::Rsvm),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Solver settings shared by every family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Additive smoothing for naive Bayes.
    pub nb_alpha: f64,
    /// Gradient-norm target for logistic regression.
    pub lr_tol: f64,
    pub lr_max_iter: usize,
    /// Maximal-violating-pair gap at which SMO stops.
    pub svm_tol: f64,
    /// Kernel row cache budget when the Gram matrix is not materialized.
    pub cache_mb: usize,
    /// SMO iteration cap; `None` means `max(10_000_000, 100·n)`.
    pub svm_max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nb_alpha: 1.0,
            lr_tol: 1e-6,
            lr_max_iter: 10_000,
            svm_tol: 1e-3,
            cache_mb: 64,
            svm_max_iter: None,
        }
    }
}

/// Hyperparameters of one grid cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamGrid {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for ParamGrid {
    /// `C ∈ {2⁻⁹, 2⁻⁷, …, 2⁵}`, `γ ∈ {2⁻¹¹, 2⁻⁹, …, 2¹} ∪ {2²}`.
    fn default() -> Self {
        ParamGrid {
            c: (-9..=5).step_by(2).map(|e| 2f64.powi(e)).collect(),
            gamma: (-11..=1)
                .step_by(2)
                .chain([2])
                .map(|e| 2f64.powi(e))
                .collect(),
        }
    }
}

impl ParamGrid {
    pub fn validate(&self) -> Result<()> {
        if self.c.iter().chain(&self.gamma).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("grid values must be positive".into()));
        }
        Ok(())
    }

    /// Cells for `family` in search order: ascending C, then ascending γ.
    pub fn cells(&self, family: ModelFamily) -> Vec<Params> {
        let mut c = self.c.clone();
        c.sort_by(f64::total_cmp);
        let mut g = self.gamma.clone();
        g.sort_by(f64::total_cmp);
        match family {
            ModelFamily::Nb => vec![Params::default()],
            ModelFamily::Lr | ModelFamily::Lsvm => {
                c.into_iter().map(|c| Params { c: Some(c), gamma: None }).collect()
            }
            ModelFamily::Rsvm => c
                .iter()
                .flat_map(|&c| g.iter().map(move |&g| Params { c: Some(c), gamma: Some(g) }))
                .collect(),
        }
    }
}

fn check_training(x: &DMatrix<f64>, y: &[u8]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("no training samples".into()));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features must be finite".into()));
    }
    let pos = y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

fn signs(y: &[u8]) -> Vec<f64> {
    y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

/// Multinomial naive Bayes with additive smoothing.
#[derive(Clone, Debug, PartialEq)]
pub struct NbModel {
    /// Log prior of class 0 and class 1.
    pub log_prior: [f64; 2],
    /// Per-class log feature probabilities.
    pub log_prob: [Vec<f64>; 2],
}

pub fn train_multinomial_nb(x: &DMatrix<f64>, y: &[u8], alpha: f64) -> Result<NbModel> {
    check_training(x, y)?;
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput("naive Bayes needs nonnegative features".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config("smoothing must be positive".into()));
    }
    let p = x.ncols();
    let mut counts = [vec![0.0; p], vec![0.0; p]];
    let mut docs = [0.0f64; 2];
    for (i, &l) in y.iter().enumerate() {
        docs[l as usize] += 1.0;
        for (c, v) in counts[l as usize].iter_mut().zip(x.row(i).iter()) {
            *c += v;
        }
    }
    let n = y.len() as f64;
    let log_prob = counts.map(|c| {
        let total: f64 = c.iter().sum::<f64>() + alpha * p as f64;
        c.into_iter().map(|v| ((v + alpha) / total).ln()).collect()
    });
    Ok(NbModel {
        log_prior: [(docs[0] / n).ln(), (docs[1] / n).ln()],
        log_prob,
    })
}

impl NbModel {
    /// Log-odds of class 1 for each row.
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        x.row_iter()
            .map(|r| {
                let joint = |c: usize| {
                    self.log_prior[c]
                        + r.iter().zip(&self.log_prob[c]).map(|(v, lp)| v * lp).sum::<f64>()
                };
                joint(1) - joint(0)
            })
            .collect()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{-t})` without overflow.
fn log1p_exp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearLoss {
    Logistic,
    Hinge,
}

/// `score(x) = w·x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub loss: LinearLoss,
}

impl LinearModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (x * &self.weights).iter().map(|s| s + self.bias).collect()
    }
}

/// `½‖w‖² + C Σ ln(1 + exp(−ŷ(w·x + b)))` with `ŷ ∈ {−1, +1}`.
pub fn logreg_objective(x: &DMatrix<f64>, y: &[u8], w: &DVector<f64>, b: f64, c: f64) -> f64 {
    let z = x * w;
    let loss: f64 = z
        .iter()
        .zip(signs(y))
        .map(|(zi, s)| log1p_exp_neg(s * (zi + b)))
        .sum();
    0.5 * w.norm_squared() + c * loss
}

/// `½‖w‖² + C Σ max(0, 1 − ŷ(w·x + b))`.
pub fn hinge_objective(x: &DMatrix<f64>, y: &[u8], w: &DVector<f64>, b: f64, c: f64) -> f64 {
    let z = x * w;
    let loss: f64 = z
        .iter()
        .zip(signs(y))
        .map(|(zi, s)| (1.0 - s * (zi + b)).max(0.0))
        .sum();
    0.5 * w.norm_squared() + c * loss
}

/// Logistic regression by truncated Newton (conjugate-gradient inner solves
/// with Hessian-vector products and Armijo backtracking).
pub fn train_logreg(x: &DMatrix<f64>, y: &[u8], c: f64, cfg: &SolverConfig) -> Result<LinearModel> {
    check_training(x, y)?;
    if !(c > 0.0) {
        return Err(Error::Config("C must be positive".into()));
    }
    let p = x.ncols();
    let s = DVector::from_vec(signs(y));
    let mut theta = DVector::<f64>::zeros(p + 1);
    let objective = |t: &DVector<f64>| {
        let w = t.rows(0, p).into_owned();
        logreg_objective(x, y, &w, t[p], c)
    };
    let mut f = objective(&theta);

    for _ in 0..cfg.lr_max_iter {
        let w = theta.rows(0, p);
        let z = x * w + DVector::from_element(x.nrows(), theta[p]);
        // r = dloss/dz, d = second derivative.
        let mut r = DVector::zeros(z.len());
        let mut d = DVector::zeros(z.len());
        for i in 0..z.len() {
            let sig = sigmoid(-s[i] * z[i]);
            r[i] = -s[i] * sig;
            d[i] = sig * (1.0 - sig);
        }
        let mut g = DVector::zeros(p + 1);
        g.rows_mut(0, p).copy_from(&(w + x.tr_mul(&r) * c));
        g[p] = c * r.sum();
        let gnorm = g.norm();
        if gnorm <= cfg.lr_tol {
            break;
        }
        let hess = |v: &DVector<f64>| {
            let vw = v.rows(0, p);
            let xv = (x * vw).add_scalar(v[p]).component_mul(&d);
            let mut out = DVector::zeros(p + 1);
            out.rows_mut(0, p).copy_from(&(vw + x.tr_mul(&xv) * c));
            out[p] = c * xv.sum();
            out
        };
        let step = conjugate_gradient(hess, &(-&g), (0.5f64).min(gnorm.sqrt()) * gnorm, 2 * (p + 1));
        let slope = g.dot(&step);
        if !(slope < 0.0) {
            break;
        }
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let fc = objective(&cand);
            if fc <= f + 1e-4 * t * slope {
                theta = cand;
                f = fc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(LinearModel {
        weights: theta.rows(0, p).into_owned(),
        bias: theta[p],
        loss: LinearLoss::Logistic,
    })
}

fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    for _ in 0..max_iter {
        if rs.sqrt() <= tol {
            break;
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            break;
        }
        let a = rs / pap;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &ap, 1.0);
        let next = r.norm_squared();
        p = &r + &p * (next / rs);
        rs = next;
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    /// Kernel value from the two squared norms and the dot product.
    fn eval(self, na: f64, nb: f64, dot: f64) -> f64 {
        match self {
            Kernel::Linear => dot,
            Kernel::Rbf { gamma } => (-gamma * (na + nb - 2.0 * dot).max(0.0)).exp(),
        }
    }
}

/// Dual-form SVM: `score(x) = Σ coef_i K(sv_i, x) + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSvmModel {
    pub support_vectors: DMatrix<f64>,
    /// `α_i·y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
}

impl KernelSvmModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        if self.support_vectors.nrows() == 0 {
            return vec![self.bias; x.nrows()];
        }
        let dots = x * self.support_vectors.transpose();
        let sv_norms: Vec<f64> = self.support_vectors.row_iter().map(|r| r.norm_squared()).collect();
        x.row_iter()
            .enumerate()
            .map(|(i, r)| {
                let nx = r.norm_squared();
                self.bias
                    + self
                        .dual_coef
                        .iter()
                        .enumerate()
                        .map(|(j, a)| a * self.kernel.eval(nx, sv_norms[j], dots[(i, j)]))
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Rows of the kernel matrix over a training subset.
trait KernelRows {
    fn len(&self) -> usize;
    fn diag(&self, i: usize) -> f64;
    fn row(&mut self, i: usize) -> Arc<[f64]>;
}

/// Kernel rows derived from a precomputed matrix of dot products.
struct GramRows<'a> {
    gram: &'a DMatrix<f64>,
    idx: &'a [usize],
    kernel: Kernel,
}

impl KernelRows for GramRows<'_> {
    fn len(&self) -> usize {
        self.idx.len()
    }

    fn diag(&self, i: usize) -> f64 {
        let a = self.idx[i];
        let n = self.gram[(a, a)];
        self.kernel.eval(n, n, n)
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        let a = self.idx[i];
        let na = self.gram[(a, a)];
        self.idx
            .iter()
            .map(|&b| self.kernel.eval(na, self.gram[(b, b)], self.gram[(a, b)]))
            .collect()
    }
}

/// Kernel rows computed from features on demand, with a FIFO row cache.
struct CachedRows<'a> {
    x: &'a DMatrix<f64>,
    norms: Vec<f64>,
    kernel: Kernel,
    cache: HashMap<usize, Arc<[f64]>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> CachedRows<'a> {
    fn new(x: &'a DMatrix<f64>, kernel: Kernel, cache_bytes: usize) -> Self {
        let n = x.nrows();
        CachedRows {
            x,
            norms: x.row_iter().map(|r| r.norm_squared()).collect(),
            kernel,
            cache: HashMap::new(),
            order: VecDeque::new(),
            capacity: (cache_bytes / (8 * n.max(1))).max(2),
        }
    }
}

impl KernelRows for CachedRows<'_> {
    fn len(&self) -> usize {
        self.x.nrows()
    }

    fn diag(&self, i: usize) -> f64 {
        self.kernel.eval(self.norms[i], self.norms[i], self.norms[i])
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        if let Some(r) = self.cache.get(&i) {
            return r.clone();
        }
        let dots = self.x * self.x.row(i).transpose();
        let r: Arc<[f64]> = dots
            .iter()
            .enumerate()
            .map(|(j, d)| self.kernel.eval(self.norms[i], self.norms[j], *d))
            .collect();
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.cache.remove(&old);
            }
        }
        self.order.push_back(i);
        self.cache.insert(i, r.clone());
        r
    }
}

/// Solution of the SVM dual over a training subset.
#[derive(Clone, Debug)]
struct DualSolution {
    alpha: Vec<f64>,
    /// Decision offset: `score = Σ α_i y_i K_i(x) − rho`.
    rho: f64,
    /// Final maximal-violating-pair gap.
    gap: f64,
}

/// SMO with maximal-violating-pair working-set selection.
fn solve_dual(k: &mut impl KernelRows, y: &[f64], c: f64, cfg: &SolverConfig) -> DualSolution {
    let n = k.len();
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − eᵀα.
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = (0..n).map(|i| k.diag(i)).collect();
    let max_iter = cfg.svm_max_iter.unwrap_or((100 * n).max(10_000_000));
    let up = |a: f64, yi: f64| if yi > 0.0 { a < c } else { a > 0.0 };
    let low = |a: f64, yi: f64| if yi > 0.0 { a > 0.0 } else { a < c };
    let mut gap = f64::INFINITY;

    for iter in 0..=max_iter {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap <= cfg.svm_tol {
            break;
        }
        if iter == max_iter {
            log::warn!("SMO stopped at the iteration cap with gap {gap:.3e}");
            break;
        }
        let ki = k.row(i);
        let kj = k.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (diag[i] + diag[j] - 2.0 * ki[j]).max(1e-12);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // Offset from free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    DualSolution { alpha, rho, gap }
}

/// Fit the dual on rows `idx` of a dot-product matrix.
fn solve_on_gram(
    gram: &DMatrix<f64>,
    idx: &[usize],
    y: &[u8],
    kernel: Kernel,
    c: f64,
    cfg: &SolverConfig,
) -> DualSolution {
    let ys: Vec<f64> = idx.iter().map(|&i| if y[i] == 1 { 1.0 } else { -1.0 }).collect();
    let mut rows = GramRows { gram, idx, kernel };
    solve_dual(&mut rows, &ys, c, cfg)
}

fn gram_decision(
    gram: &DMatrix<f64>,
    sol: &DualSolution,
    train: &[usize],
    y: &[u8],
    eval: &[usize],
    kernel: Kernel,
) -> Vec<f64> {
    eval.iter()
        .map(|&e| {
            let ne = gram[(e, e)];
            train
                .iter()
                .zip(&sol.alpha)
                .filter(|(_, a)| **a > 0.0)
                .map(|(&t, a)| {
                    let s = if y[t] == 1 { 1.0 } else { -1.0 };
                    a * s * kernel.eval(ne, gram[(t, t)], gram[(e, t)])
                })
                .sum::<f64>()
                - sol.rho
        })
        .collect()
}

fn gram_fits(n: usize, cfg: &SolverConfig) -> bool {
    n.saturating_mul(n).saturating_mul(8) <= cfg.cache_mb.saturating_mul(1 << 20)
}

fn solve_svm(x: &DMatrix<f64>, y: &[u8], kernel: Kernel, c: f64, cfg: &SolverConfig) -> Result<DualSolution> {
    check_training(x, y)?;
    if !(c > 0.0) {
        return Err(Error::Config("C must be positive".into()));
    }
    let n = x.nrows();
    if gram_fits(n, cfg) {
        let gram = x * x.transpose();
        let idx: Vec<usize> = (0..n).collect();
        Ok(solve_on_gram(&gram, &idx, y, kernel, c, cfg))
    } else {
        let mut rows = CachedRows::new(x, kernel, cfg.cache_mb << 20);
        Ok(solve_dual(&mut rows, &signs(y), c, cfg))
    }
}

/// RBF-kernel SVM trained by SMO.
pub fn train_rbf_svm(
    x: &DMatrix<f64>,
    y: &[u8],
    c: f64,
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<KernelSvmModel> {
    if !(gamma > 0.0) {
        return Err(Error::Config("gamma must be positive".into()));
    }
    let kernel = Kernel::Rbf { gamma };
    let sol = solve_svm(x, y, kernel, c, cfg)?;
    Ok(kernel_model(x, y, &sol, kernel))
}

fn kernel_model(x: &DMatrix<f64>, y: &[u8], sol: &DualSolution, kernel: Kernel) -> KernelSvmModel {
    let sv: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    KernelSvmModel {
        support_vectors: x.select_rows(&sv),
        dual_coef: sv.iter().map(|&i| if y[i] == 1 { sol.alpha[i] } else { -sol.alpha[i] }).collect(),
        bias: -sol.rho,
        kernel,
    }
}

/// Linear SVM: the dual is solved by SMO and folded back into `w`.
pub fn train_linear_svm(x: &DMatrix<f64>, y: &[u8], c: f64, cfg: &SolverConfig) -> Result<LinearModel> {
    let sol = solve_svm(x, y, Kernel::Linear, c, cfg)?;
    Ok(linear_from_dual(x, y, &sol))
}

fn linear_from_dual(x: &DMatrix<f64>, y: &[u8], sol: &DualSolution) -> LinearModel {
    let coef = DVector::from_iterator(
        y.len(),
        y.iter().zip(&sol.alpha).map(|(&l, a)| if l == 1 { *a } else { -*a }),
    );
    LinearModel {
        weights: x.tr_mul(&coef),
        bias: -sol.rho,
        loss: LinearLoss::Hinge,
    }
}

/// Dual variables and the final SMO gap of an RBF fit, for diagnostics.
pub fn rbf_dual(
    x: &DMatrix<f64>,
    y: &[u8],
    c: f64,
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, f64)> {
    let sol = solve_svm(x, y, Kernel::Rbf { gamma }, c, cfg)?;
    Ok((sol.alpha, sol.gap))
}

/// Any trained classifier.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Nb(NbModel),
    Linear(LinearModel),
    Kernel(KernelSvmModel),
}

impl Classifier {
    pub fn num_features(&self) -> usize {
        match self {
            Classifier::Nb(m) => m.log_prob[0].len(),
            Classifier::Linear(m) => m.weights.len(),
            Classifier::Kernel(m) => m.support_vectors.ncols(),
        }
    }

    /// Scores whose sign gives the label: log-odds for NB, margins otherwise.
    pub fn decision_scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.num_features() {
            return Err(Error::DimensionMismatch { expected: self.num_features(), found: x.ncols() });
        }
        Ok(match self {
            Classifier::Nb(m) => m.decision(x),
            Classifier::Linear(m) => m.decision(x),
            Classifier::Kernel(m) => m.decision(x),
        })
    }

    /// Labels: 1 exactly when the score is positive, so ties go to 0.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<u8>> {
        Ok(self.decision_scores(x)?.into_iter().map(|s| (s > 0.0) as u8).collect())
    }

    /// Class-1 posterior for the probabilistic models.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            Classifier::Nb(_) | Classifier::Linear(LinearModel { loss: LinearLoss::Logistic, .. }) => {
                Ok(self.decision_scores(x)?.into_iter().map(sigmoid).collect())
            }
            _ => Err(Error::InvalidInput("margin models have no posterior".into())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let c = match self {
            Classifier::Nb(m) => {
                let mut c = Checkpoint::new("nb");
                c.put_attr("log_prior", m.log_prior);
                c.put_vector("log_prob_0", &DVector::from_vec(m.log_prob[0].clone()));
                c.put_vector("log_prob_1", &DVector::from_vec(m.log_prob[1].clone()));
                c
            }
            Classifier::Linear(m) => {
                let mut c = Checkpoint::new("linear");
                c.put_vector("weights", &m.weights);
                c.put_attr("bias", m.bias);
                c.put_attr("loss", m.loss);
                c
            }
            Classifier::Kernel(m) => {
                let mut c = Checkpoint::new("kernel-svm");
                c.put_matrix("support_vectors", &m.support_vectors);
                c.put_vector("dual_coef", &DVector::from_vec(m.dual_coef.clone()));
                c.put_attr("bias", m.bias);
                c.put_attr("kernel", m.kernel);
                c
            }
        };
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Checkpoint::load(path)?;
        c.expect_kind(&["nb", "linear", "kernel-svm"])?;
        Ok(match c.kind.as_str() {
            "nb" => Classifier::Nb(NbModel {
                log_prior: c.attr("log_prior")?,
                log_prob: [
                    c.vector("log_prob_0")?.as_slice().to_vec(),
                    c.vector("log_prob_1")?.as_slice().to_vec(),
                ],
            }),
            "linear" => Classifier::Linear(LinearModel {
                weights: c.vector("weights")?,
                bias: c.attr("bias")?,
                loss: c.attr("loss")?,
            }),
            _ => {
                let m = KernelSvmModel {
                    support_vectors: c.matrix("support_vectors")?,
                    dual_coef: c.vector("dual_coef")?.as_slice().to_vec(),
                    bias: c.attr("bias")?,
                    kernel: c.attr("kernel")?,
                };
                if m.dual_coef.len() != m.support_vectors.nrows() {
                    return Err(Error::Checkpoint("support vector count mismatch".into()));
                }
                Classifier::Kernel(m)
            }
        })
    }
}

/// Fit one family at fixed hyperparameters.
pub fn fit(
    family: ModelFamily,
    x: &DMatrix<f64>,
    y: &[u8],
    params: Params,
    cfg: &SolverConfig,
) -> Result<Classifier> {
    let c = || params.c.ok_or_else(|| Error::Config(format!("{} needs C", family.name())));
    Ok(match family {
        ModelFamily::Nb => Classifier::Nb(train_multinomial_nb(x, y, cfg.nb_alpha)?),
        ModelFamily::Lr => Classifier::Linear(train_logreg(x, y, c()?, cfg)?),
        ModelFamily::Lsvm => Classifier::Linear(train_linear_svm(x, y, c()?, cfg)?),
        ModelFamily::Rsvm => {
            let gamma = params.gamma.ok_or_else(|| Error::Config("rsvm needs gamma".into()))?;
            Classifier::Kernel(train_rbf_svm(x, y, c()?, gamma, cfg)?)
        }
    })
}

/// Cross-validated score of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub params: Params,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
    /// Out-of-fold prediction for every training row.
    pub predictions: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct GridSearchResult {
    pub best: Params,
    pub best_mean_f1: f64,
    /// Validation rows of each fold.
    pub folds: Vec<Vec<usize>>,
    pub cells: Vec<CellResult>,
    /// Best cell refit on all training rows.
    pub model: Classifier,
}

/// Exhaustive stratified k-fold search maximizing mean F1, then a refit.
///
/// If the minority class has fewer than `folds` rows the fold count is
/// reduced so that every fold sees both classes.
pub fn grid_search_cv(
    x: &DMatrix<f64>,
    y: &[u8],
    family: ModelFamily,
    grid: &ParamGrid,
    folds: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<GridSearchResult> {
    check_training(x, y)?;
    grid.validate()?;
    let minority = y.iter().filter(|&&l| l == 1).count().min(y.iter().filter(|&&l| l == 0).count());
    let k = folds.min(minority);
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "cross-validation needs at least 2 rows of each class, found {minority}"
        )));
    }
    if k < folds {
        log::warn!("reducing cross-validation from {folds} to {k} folds");
    }
    let fold_sets = stratified_kfold(y, k, seed)?;
    let n = y.len();
    let trains: Vec<Vec<usize>> = fold_sets
        .iter()
        .map(|val| {
            let mut mask = vec![true; n];
            val.iter().for_each(|&i| mask[i] = false);
            (0..n).filter(|&i| mask[i]).collect()
        })
        .collect();
    let cells = grid.cells(family);
    let kernel_family = matches!(family, ModelFamily::Lsvm | ModelFamily::Rsvm);
    let gram = (kernel_family && gram_fits(n, cfg)).then(|| x * x.transpose());

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let outcomes: Vec<Vec<u8>> = jobs
        .par_iter()
        .map(|&(ci, fi)| -> Result<Vec<u8>> {
            let (train, val) = (&trains[fi], &fold_sets[fi]);
            let params = cells[ci];
            let scores = match (&gram, family) {
                (Some(g), ModelFamily::Lsvm | ModelFamily::Rsvm) => {
                    let kernel = match params.gamma {
                        Some(gamma) if family == ModelFamily::Rsvm => Kernel::Rbf { gamma },
                        _ => Kernel::Linear,
                    };
                    let c = params.c.expect("grid cells carry C");
                    let sol = solve_on_gram(g, train, y, kernel, c, cfg);
                    gram_decision(g, &sol, train, y, val, kernel)
                }
                _ => {
                    let xt = x.select_rows(train);
                    let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
                    fit(family, &xt, &yt, params, cfg)?.decision_scores(&x.select_rows(val))?
                }
            };
            Ok(scores.into_iter().map(|s| (s > 0.0) as u8).collect())
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(cells.len());
    for (ci, params) in cells.iter().enumerate() {
        let mut predictions = vec![0u8; n];
        let mut fold_f1 = Vec::with_capacity(k);
        for (fi, val) in fold_sets.iter().enumerate() {
            let pred = &outcomes[ci * k + fi];
            for (&i, &p) in val.iter().zip(pred) {
                predictions[i] = p;
            }
            let truth: Vec<u8> = val.iter().map(|&i| y[i]).collect();
            fold_f1.push(prf1(&truth, pred)?.f1);
        }
        let mean_f1 = fold_f1.iter().sum::<f64>() / k as f64;
        results.push(CellResult { params: *params, fold_f1, mean_f1, predictions });
    }
    // Cells are ordered by C then γ, so the first maximum wins ties.
    let best_idx = results
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.mean_f1 > results[b].mean_f1 { i } else { b });
    let best = results[best_idx].params;
    let model = fit(family, x, y, best, cfg)?;
    Ok(GridSearchResult {
        best,
        best_mean_f1: results[best_idx].mean_f1,
        folds: fold_sets,
        cells: results,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xor() -> (DMatrix<f64>, Vec<u8>) {
        (
            DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]),
            vec![0, 0, 1, 1],
        )
    }

    fn blobs(n: usize, sep: f64, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = DMatrix::from_fn(n, 3, |i, _| {
            let centre = if y[i] == 1 { sep } else { -sep };
            centre + rng.random_range(-1.0..1.0)
        });
        (x, y)
    }

    #[test]
    fn grid_matches_protocol() {
        let g = ParamGrid::default();
        assert_eq!(g.c.len(), 8);
        assert_eq!(g.c[0], 2f64.powi(-9));
        assert_eq!(*g.c.last().unwrap(), 32.0);
        assert_eq!(g.gamma.len(), 8);
        assert_eq!(*g.gamma.last().unwrap(), 4.0);
        assert_eq!(g.cells(ModelFamily::Rsvm).len(), 64);
        assert_eq!(g.cells(ModelFamily::Nb).len(), 1);
    }

    #[test]
    fn nb_hand_instance() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m = train_multinomial_nb(&x, &[1, 0], 1.0).unwrap();
        // θ_1 = (2/3, 1/3), θ_0 = (1/3, 2/3); equal priors.
        assert!((m.log_prob[1][0] - (2.0f64 / 3.0).ln()).abs() < 1e-15);
        let c = Classifier::Nb(m);
        let p = c.predict_proba(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap()[0];
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.predict(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap(), vec![1]);
        // The symmetric midpoint is a tie, resolved toward 0.
        let mid = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!((c.predict_proba(&mid).unwrap()[0] - 0.5).abs() < 1e-12);
        assert_eq!(c.predict(&mid).unwrap(), vec![0]);
    }

    #[test]
    fn nb_priors_and_normalization() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 3.0, 0.0, 0.5, 1.0, 1.0, 1.0]);
        let m = train_multinomial_nb(&x, &[1, 1, 1, 0], 1.0).unwrap();
        assert!((m.log_prior[1] - m.log_prior[0] - 3f64.ln()).abs() < 1e-12);
        for c in 0..2 {
            let total: f64 = m.log_prob[c].iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let neg = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        assert!(train_multinomial_nb(&neg, &[0, 1], 1.0).is_err());
        assert!(matches!(train_multinomial_nb(&x, &[1, 1, 1, 1], 1.0), Err(Error::SingleClass)));
    }

    #[test]
    fn logreg_symmetric_data() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let m = train_logreg(&x, &[1, 0], 1.0, &SolverConfig::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        assert!(m.bias.abs() < 1e-8);
        let tiny = train_logreg(&x, &[1, 0], 1e-6, &SolverConfig::default()).unwrap();
        assert!(tiny.weights.norm() < 1e-5);
    }

    #[test]
    fn logreg_reaches_stationary_point() {
        let (x, y) = blobs(60, 0.3, 1);
        let m = train_logreg(&x, &y, 4.0, &SolverConfig::default()).unwrap();
        let f = logreg_objective(&x, &y, &m.weights, m.bias, 4.0);
        assert!(f <= logreg_objective(&x, &y, &DVector::zeros(3), 0.0, 4.0));
        // Perturbing any coordinate must not lower the objective.
        for k in 0..4 {
            for h in [1e-4, -1e-4] {
                let mut w = m.weights.clone();
                let mut b = m.bias;
                if k < 3 {
                    w[k] += h;
                } else {
                    b += h;
                }
                assert!(logreg_objective(&x, &y, &w, b, 4.0) >= f - 1e-12);
            }
        }
    }

    #[test]
    fn linear_svm_separates_and_descends() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let c = Classifier::Linear(train_linear_svm(&x, &[1, 0], 1.0, &SolverConfig::default()).unwrap());
        assert_eq!(c.predict(&x).unwrap(), vec![1, 0]);
        let (x, y) = blobs(80, 2.0, 2);
        let m = train_linear_svm(&x, &y, 1.0, &SolverConfig::default()).unwrap();
        assert!(hinge_objective(&x, &y, &m.weights, m.bias, 1.0) <= hinge_objective(&x, &y, &DVector::zeros(3), 0.0, 1.0));
        let c = Classifier::Linear(m);
        assert_eq!(c.predict(&x).unwrap(), y);
        let scores = c.decision_scores(&x).unwrap();
        let labels = c.predict(&x).unwrap();
        assert!(scores.iter().zip(&labels).all(|(s, l)| (*s > 0.0) == (*l == 1)));
    }

    #[test]
    fn duplicated_points_give_same_predictions() {
        // Duplicating rows equals doubling C, so use separable data where the
        // margin constraints are inactive at this C and the solution cannot move.
        let (x, y) = blobs(40, 2.0, 3);
        let cfg = SolverConfig { svm_tol: 1e-6, ..SolverConfig::default() };
        let once = Classifier::Linear(train_linear_svm(&x, &y, 10.0, &cfg).unwrap());
        let xx = DMatrix::from_fn(80, 3, |i, j| x[(i % 40, j)]);
        let yy: Vec<u8> = (0..80).map(|i| y[i % 40]).collect();
        let twice = Classifier::Linear(train_linear_svm(&xx, &yy, 10.0, &cfg).unwrap());
        let (probe, _) = blobs(200, 1.0, 4);
        let a = once.decision_scores(&probe).unwrap();
        let b = twice.decision_scores(&probe).unwrap();
        let agree = a.iter().zip(&b).filter(|(p, q)| (**p > 0.0) == (**q > 0.0)).count();
        assert_eq!(agree, 200);
    }

    #[test]
    fn rbf_svm_solves_xor() {
        let (x, y) = xor();
        let cfg = SolverConfig::default();
        let m = train_rbf_svm(&x, &y, 10.0, 1.0, &cfg).unwrap();
        assert!(!m.dual_coef.is_empty());
        assert_eq!(Classifier::Kernel(m.clone()).predict(&x).unwrap(), y);
        assert!(m.dual_coef.iter().sum::<f64>().abs() < 1e-9);
        let (alpha, gap) = rbf_dual(&x, &y, 10.0, 1.0, &cfg).unwrap();
        assert!(gap <= 1e-3);
        assert!(alpha.iter().all(|a| (0.0..=10.0).contains(a)));
    }

    #[test]
    fn rbf_with_small_gamma_separates_linear_data() {
        let (x, y) = blobs(60, 2.0, 5);
        let m = train_rbf_svm(&x, &y, 100.0, 0.01, &SolverConfig::default()).unwrap();
        assert_eq!(Classifier::Kernel(m).predict(&x).unwrap(), y);
    }

    #[test]
    fn cached_and_gram_routes_agree() {
        let (x, y) = blobs(50, 0.5, 6);
        let big = SolverConfig::default();
        let small = SolverConfig { cache_mb: 0, ..SolverConfig::default() };
        let a = train_rbf_svm(&x, &y, 1.0, 0.5, &big).unwrap();
        let b = train_rbf_svm(&x, &y, 1.0, 0.5, &small).unwrap();
        assert_eq!(a.dual_coef.len(), b.dual_coef.len());
        assert!((a.bias - b.bias).abs() < 1e-9);
    }

    #[test]
    fn grid_search_on_separable_data() {
        let (x, y) = blobs(60, 3.0, 7);
        let cfg = SolverConfig::default();
        let r = grid_search_cv(&x, &y, ModelFamily::Lsvm, &ParamGrid::default(), 10, 1, &cfg).unwrap();
        assert_eq!(r.best_mean_f1, 1.0);
        // Recompute every cell's mean from its stored out-of-fold predictions.
        for cell in &r.cells {
            let mean: f64 = r
                .folds
                .iter()
                .map(|f| {
                    let t: Vec<u8> = f.iter().map(|&i| y[i]).collect();
                    let p: Vec<u8> = f.iter().map(|&i| cell.predictions[i]).collect();
                    prf1(&t, &p).unwrap().f1
                })
                .sum::<f64>()
                / r.folds.len() as f64;
            assert!((mean - cell.mean_f1).abs() < 1e-12);
        }
        let first_perfect = r.cells.iter().find(|c| c.mean_f1 == 1.0).unwrap();
        assert_eq!(r.best, first_perfect.params);
    }

    #[test]
    fn single_cell_grid_and_fold_reduction() {
        let (x, y) = blobs(12, 1.0, 8);
        let grid = ParamGrid { c: vec![0.5], gamma: vec![1.0] };
        let cfg = SolverConfig::default();
        let r = grid_search_cv(&x, &y, ModelFamily::Rsvm, &grid, 10, 1, &cfg).unwrap();
        assert_eq!(r.best, Params { c: Some(0.5), gamma: Some(1.0) });
        assert_eq!(r.folds.len(), 6);
        let r = grid_search_cv(&x, &y, ModelFamily::Lr, &grid, 3, 1, &cfg).unwrap();
        assert_eq!(r.folds.len(), 3);
    }

    #[test]
    fn gram_and_direct_fits_agree_in_cv() {
        // Same search with the Gram shortcut disabled must pick the same cell.
        let (x, y) = blobs(40, 0.4, 9);
        let grid = ParamGrid { c: vec![0.25, 1.0, 4.0], gamma: vec![0.5, 2.0] };
        let a = grid_search_cv(&x, &y, ModelFamily::Rsvm, &grid, 4, 3, &SolverConfig::default()).unwrap();
        let b = grid_search_cv(
            &x,
            &y,
            ModelFamily::Rsvm,
            &grid,
            4,
            3,
            &SolverConfig { cache_mb: 0, ..SolverConfig::default() },
        )
        .unwrap();
        for (p, q) in a.cells.iter().zip(&b.cells) {
            assert_eq!(p.predictions, q.predictions);
        }
    }

    #[test]
    fn checkpoints_roundtrip() {
        let (x, y) = blobs(30, 1.0, 10);
        let cfg = SolverConfig::default();
        let dir = tempfile::tempdir().unwrap();
        for family in [ModelFamily::Nb, ModelFamily::Lr, ModelFamily::Lsvm, ModelFamily::Rsvm] {
            let xs = x.map(|v| v.abs());
            let m = fit(family, &xs, &y, Params { c: Some(1.0), gamma: Some(0.5) }, &cfg).unwrap();
            let path = dir.path().join(format!("{}.json", family.name()));
            m.save(&path).unwrap();
            assert_eq!(Classifier::load(&path).unwrap(), m);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (x, y) = blobs(10, 1.0, 11);
        let m = fit(ModelFamily::Lr, &x, &y, Params { c: Some(1.0), gamma: None }, &SolverConfig::default()).unwrap();
        assert!(m.predict(&DMatrix::zeros(2, 4)).is_err());
    }
}
