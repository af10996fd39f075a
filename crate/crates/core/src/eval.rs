//! Evaluation protocol: stratified splits and folds, precision/recall/F1,
//! repeated train-test experiments and the embedding ablation suite.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::aaeme::{build_meta_embedding, train_aaeme, AaemeConfig};
use crate::classifiers::{grid_search_cv, ModelFamily, ParamGrid, Params, SolverConfig};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureKind, Featurizer, MinMaxScaler};
use crate::mapper::{
    build_ate, build_partial_adjusted, train_centroid_mapper, train_mapper, CentroidConfig,
    CentroidVariant, MapperTrainConfig,
};

/// Row indices of a train/test partition, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut by = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by[(l == 1) as usize].push(i);
    }
    by
}

/// Stratified partition with `round(n·train_frac)` training rows.
///
/// Per-class training counts are the floors of their exact shares, with the
/// leftover rows going to the classes with the largest fractional parts.
pub fn stratified_split(labels: &[u8], train_frac: f64, seed: u64) -> Result<Split> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config("train fraction must be in (0, 1)".into()));
    }
    let by = class_indices(labels);
    if by.iter().any(|c| c.len() < 2) {
        return Err(Error::InvalidInput("each class needs at least 2 rows to split".into()));
    }
    let n = labels.len();
    let target = (n as f64 * train_frac).round() as usize;
    let exact: Vec<f64> = by.iter().map(|c| c.len() as f64 * train_frac).collect();
    let mut take: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order = [0usize, 1];
    // Largest remainder first; on equal remainders the positive class goes first.
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(b.cmp(&a))
    });
    let mut left = target.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(2 * left) {
        if left == 0 {
            break;
        }
        if take[c] < by[c].len() {
            take[c] += 1;
            left -= 1;
        }
    }
    for (t, c) in take.iter_mut().zip(&by) {
        *t = (*t).clamp(1, c.len() - 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for (class, &k) in by.into_iter().zip(&take) {
        let mut class = class;
        class.shuffle(&mut rng);
        split.train.extend_from_slice(&class[..k]);
        split.test.extend_from_slice(&class[k..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Stratified `k`-fold partition: each class is shuffled and dealt
/// round-robin, so fold sizes and per-fold class counts differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    if k > labels.len() {
        return Err(Error::InvalidInput(format!("{k} folds requested for {} rows", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    let [neg, pos] = class_indices(labels);
    for mut class in [pos, neg] {
        class.shuffle(&mut rng);
        for i in class {
            folds[next % k].push(i);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of the positive class (label 1). Zero
/// denominators yield 0.
pub fn prf1(y_true: &[u8], y_pred: &[u8]) -> Result<Prf1> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch { expected: y_true.len(), found: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == 1, p == 1) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf1 { precision, recall, f1 })
}

/// Seed of run `i`: a separate ChaCha stream of the master seed, so adding
/// runs never changes earlier ones.
pub fn run_seed(master: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(i as u64);
    rng.next_u64()
}

/// One feature representation evaluated with one model family.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    /// Row label used in reports.
    pub label: String,
    pub features: FeatureKind,
    pub model: ModelFamily,
    pub grid: ParamGrid,
    pub solver: SolverConfig,
    pub runs: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub folds: usize,
    /// Min-max scale features using training-split ranges.
    pub scale: bool,
}

impl ExperimentSpec {
    pub fn new(label: impl Into<String>, features: FeatureKind, model: ModelFamily) -> Self {
        ExperimentSpec {
            label: label.into(),
            features,
            model,
            grid: ParamGrid::default(),
            solver: SolverConfig::default(),
            runs: 30,
            seed: 1,
            train_frac: 0.7,
            folds: 10,
            scale: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.model == ModelFamily::Nb && self.features.is_embedding() && !self.scale {
            return Err(Error::Config(
                "naive Bayes needs nonnegative features; enable scaling for embedding features".into(),
            ));
        }
        self.grid.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub train_size: usize,
    pub train_positive: usize,
    pub test_size: usize,
    pub test_positive: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub params: Params,
    pub cv_f1: f64,
    /// Test rows whose embedding features were all-zero for lack of known tokens.
    pub test_all_oov: usize,
}

/// Split, fit features on the training rows, grid-search, refit, and score on the test rows.
pub fn run_experiment(data: &Dataset, spec: &ExperimentSpec, run: usize, seed: u64) -> Result<RunRecord> {
    spec.validate()?;
    let split = stratified_split(&data.labels, spec.train_frac, seed)?;
    let train = data.subset(&split.train);
    let test = data.subset(&split.test);
    let featurizer = Featurizer::fit(spec.features.clone(), &train.texts)?;
    let (mut xtr, _) = featurizer.transform(&train.texts);
    let (mut xte, diag) = featurizer.transform(&test.texts);
    if spec.scale {
        let scaler = MinMaxScaler::fit(&xtr)?;
        xtr = scaler.transform(&xtr)?;
        xte = scaler.transform(&xte)?;
    }
    let mut fold_rng = ChaCha8Rng::seed_from_u64(seed);
    fold_rng.set_stream(1);
    let search = grid_search_cv(
        &xtr,
        &train.labels,
        spec.model,
        &spec.grid,
        spec.folds,
        fold_rng.next_u64(),
        &spec.solver,
    )?;
    let pred = search.model.predict(&xte)?;
    let score = prf1(&test.labels, &pred)?;
    Ok(RunRecord {
        run,
        seed,
        train_size: train.len(),
        train_positive: train.positives(),
        test_size: test.len(),
        test_positive: test.positives(),
        precision: score.precision,
        recall: score.recall,
        f1: score.f1,
        params: search.best,
        cv_f1: search.best_mean_f1,
        test_all_oov: diag.all_oov_rows.len(),
    })
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// With a single value the deviation is reported as 0.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        if values.is_empty() {
            return Summary { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub label: String,
    pub features: String,
    pub model: ModelFamily,
    pub master_seed: u64,
    pub runs: Vec<RunRecord>,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    /// Set when only one run was made, so the deviations carry no information.
    pub single_run: bool,
}

impl EvalReport {
    pub fn from_runs(spec: &ExperimentSpec, runs: Vec<RunRecord>) -> Self {
        let col = |f: fn(&RunRecord) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        EvalReport {
            label: spec.label.clone(),
            features: spec.features.name().to_string(),
            model: spec.model,
            master_seed: spec.seed,
            precision: Summary::of(&col(|r| r.precision)),
            recall: Summary::of(&col(|r| r.recall)),
            f1: Summary::of(&col(|r| r.f1)),
            single_run: runs.len() == 1,
            runs,
        }
    }
}

/// `spec.runs` independent experiments with seeds from [`run_seed`].
pub fn repeat_experiments(data: &Dataset, spec: &ExperimentSpec) -> Result<EvalReport> {
    spec.validate()?;
    let runs: Vec<RunRecord> = (0..spec.runs)
        .into_par_iter()
        .map(|i| run_experiment(data, spec, i, run_seed(spec.seed, i)))
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_runs(spec, runs))
}

/// Aligned text table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<5}  {:>17}  {:>17}  {:>17}  {:>5}  Train(pos)/Test(pos)",
        "Features", "Model", "Precision", "Recall", "F1", "Runs"
    );
    for r in reports {
        let cell = |s: Summary| format!("{:.4} ± {:.4}", s.mean, s.std);
        let sizes = r
            .runs
            .first()
            .map(|x| format!("{}({})/{}({})", x.train_size, x.train_positive, x.test_size, x.test_positive))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<width$}  {:<5}  {:>17}  {:>17}  {:>17}  {:>5}  {}",
            r.label,
            r.model.name().to_uppercase(),
            cell(r.precision),
            cell(r.recall),
            cell(r.f1),
            r.runs.len(),
            sizes
        );
    }
    out
}

/// Settings for the embedding ablation.
#[derive(Clone, Debug, Default)]
pub struct AblationConfig {
    pub mapper: MapperTrainConfig,
    pub centroid: CentroidConfig,
    pub aaeme: AaemeConfig,
}

/// The compared embedding spaces, in report order.
pub fn ablation_embeddings(te: &Embedding, de: &Embedding, cfg: &AblationConfig) -> Result<Vec<(String, Embedding)>> {
    if te.dim() != de.dim() {
        return Err(Error::DimensionMismatch { expected: te.dim(), found: de.dim() });
    }
    let mapper = train_mapper(te, de, &cfg.mapper)?;
    let ate = build_ate(te, &mapper)?;
    let partial = build_partial_adjusted(te, de, &mapper)?;
    let c1 = CentroidConfig { variant: CentroidVariant::Centroid1, ..cfg.centroid.clone() };
    let c2 = CentroidConfig { variant: CentroidVariant::Centroid2, ..cfg.centroid.clone() };
    let cent1 = build_ate(te, &train_centroid_mapper(te, de, &cfg.mapper, &c1)?)?;
    let cent2 = build_ate(te, &train_centroid_mapper(te, de, &cfg.mapper, &c2)?)?;
    let aaeme = build_meta_embedding(&train_aaeme(te, de, &cfg.aaeme)?, te, de)?;
    let aaeme_oov = build_meta_embedding(&train_aaeme(te, &ate, &cfg.aaeme)?, te, &ate)?;
    Ok(vec![
        ("TE".into(), te.clone()),
        ("DE".into(), de.clone()),
        ("ATE".into(), ate),
        ("TE∩DE-in-TE-adjusted".into(), partial),
        ("ATE-Centroid-1".into(), cent1),
        ("ATE-Centroid-2".into(), cent2),
        ("ATE-AAEME".into(), aaeme),
        ("ATE-AAEME-OOV".into(), aaeme_oov),
    ])
}

/// Evaluate averaged-embedding features for every space of
/// [`ablation_embeddings`] with the same model, grid and seed schedule.
pub fn ablation_suite(
    data: &Dataset,
    te: &Embedding,
    de: &Embedding,
    cfg: &AblationConfig,
    base: &ExperimentSpec,
) -> Result<Vec<EvalReport>> {
    base.validate()?;
    ablation_embeddings(te, de, cfg)?
        .into_iter()
        .map(|(label, emb)| {
            let spec = ExperimentSpec {
                label,
                features: FeatureKind::Average(Arc::new(emb)),
                ..base.clone()
            };
            repeat_experiments(data, &spec)
        })
        .collect()
}
