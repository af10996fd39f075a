//! Principal component projections of word lists and a cluster-separation
//! statistic for inspecting them.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::text::tokenize_tweet;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// One principal axis per row, strongest first.
    pub axes: DMatrix<f64>,
    /// Variance along each axis.
    pub explained_variance: Vec<f64>,
    /// Share of the total variance captured by each axis.
    pub explained_variance_ratio: Vec<f64>,
}

/// Top-`q` eigenvectors of the sample covariance of the rows of `x`.
///
/// Each axis is oriented so its largest-magnitude component is positive.
pub fn pca_fit(x: &DMatrix<f64>, q: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if q == 0 || q > d {
        return Err(Error::InvalidInput(format!("cannot keep {q} components of {d}-dimensional data")));
    }
    if n < q + 1 {
        return Err(Error::InvalidInput(format!("PCA with {q} components needs at least {} rows", q + 1)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("PCA input must be finite".into()));
    }
    let mean = x.row_mean().transpose();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centred.tr_mul(&centred) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut axes = DMatrix::zeros(q, d);
    let mut variance = Vec::with_capacity(q);
    for (r, &k) in order.iter().take(q).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v.iter().cloned().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if lead < 0.0 {
            v.neg_mut();
        }
        axes.row_mut(r).copy_from(&v.transpose());
        variance.push(eig.eigenvalues[k].max(0.0));
    }
    let ratio = variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaModel { mean, axes, explained_variance: variance, explained_variance_ratio: ratio })
}

impl PcaModel {
    /// Coordinates of each row of `x` along the axes.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), found: x.ncols() });
        }
        let mut centred = x.clone();
        for mut row in centred.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centred * self.axes.transpose())
    }

    /// Map coordinates back into the input space.
    pub fn inverse_transform(&self, coords: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = coords * &self.axes;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

/// Mean silhouette coefficient of labelled points, using Euclidean distance.
/// Points alone in their cluster score 0. Needs at least two clusters.
pub fn silhouette(points: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: labels.len() });
    }
    let clusters: BTreeSet<usize> = labels.iter().cloned().collect();
    if clusters.len() < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two clusters".into()));
    }
    let size: HashMap<usize, usize> = clusters
        .iter()
        .map(|&c| (c, labels.iter().filter(|&&l| l == c).count()))
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        if size[&labels[i]] == 1 {
            continue;
        }
        let mut sums: HashMap<usize, f64> = HashMap::new();
        for (j, &lj) in labels.iter().enumerate() {
            if i != j {
                *sums.entry(lj).or_default() += (points.row(i) - points.row(j)).norm();
            }
        }
        let a = sums.get(&labels[i]).copied().unwrap_or(0.0) / (size[&labels[i]] - 1) as f64;
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|c| sums.get(c).copied().unwrap_or(0.0) / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedWord {
    pub word: String,
    pub list: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    pub points: Vec<ProjectedWord>,
    /// `(list, word)` pairs absent from the embedding.
    pub missing: Vec<(String, String)>,
    pub explained_variance_ratio: [f64; 2],
    /// Separation of the lists in the plane; absent with fewer than two lists.
    pub silhouette: Option<f64>,
}

/// Project the words of named lists onto the first two principal axes of
/// their vectors. A word listed twice keeps its first label.
pub fn project_wordlists(emb: &Embedding, lists: &[(String, Vec<String>)]) -> Result<Projection> {
    let mut label_of: HashMap<&str, usize> = HashMap::new();
    let mut ordered: Vec<&str> = Vec::new();
    let mut missing = Vec::new();
    for (li, (name, words)) in lists.iter().enumerate() {
        for w in words {
            if !emb.contains(w) {
                missing.push((name.clone(), w.clone()));
            } else if !label_of.contains_key(w.as_str()) {
                label_of.insert(w, li);
                ordered.push(w);
            }
        }
    }
    if ordered.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "only {} listed words are in the embedding; at least 3 are needed",
            ordered.len()
        )));
    }
    // Fit on the sorted word set so list order cannot influence the axes.
    let mut fit_words = ordered.clone();
    fit_words.sort_unstable();
    let matrix = |words: &[&str]| {
        DMatrix::from_fn(words.len(), emb.dim(), |i, j| emb.vector(words[i]).expect("present")[j] as f64)
    };
    let pca = pca_fit(&matrix(&fit_words), 2)?;
    let coords = pca.transform(&matrix(&ordered))?;
    let labels: Vec<usize> = ordered.iter().map(|w| label_of[w]).collect();
    let distinct: BTreeSet<usize> = labels.iter().cloned().collect();
    let silhouette = if distinct.len() >= 2 { Some(silhouette(&coords, &labels)?) } else { None };
    let points = ordered
        .iter()
        .enumerate()
        .map(|(i, w)| ProjectedWord {
            word: w.to_string(),
            list: lists[labels[i]].0.clone(),
            x: coords[(i, 0)],
            y: coords[(i, 1)],
        })
        .collect();
    Ok(Projection {
        points,
        missing,
        explained_variance_ratio: [pca.explained_variance_ratio[0], pca.explained_variance_ratio[1]],
        silhouette,
    })
}

/// Delimited `word, list, x, y` rows after `#` comment lines with the summary.
pub fn write_projection<W: Write>(p: &Projection, mut out: W, delimiter: char) -> Result<()> {
    match p.silhouette {
        Some(s) => writeln!(out, "# silhouette {s:.6}")?,
        None => writeln!(out, "# silhouette n/a")?,
    }
    writeln!(
        out,
        "# explained_variance_ratio {:.6} {:.6}",
        p.explained_variance_ratio[0], p.explained_variance_ratio[1]
    )?;
    writeln!(out, "# missing {}", p.missing.len())?;
    let d = delimiter;
    writeln!(out, "word{d}list{d}x{d}y")?;
    for r in &p.points {
        writeln!(out, "{}{d}{}{d}{:?}{d}{:?}", r.word, r.list, r.x, r.y)?;
    }
    Ok(())
}

/// Words occurring at least `min_count` times across `texts`.
pub fn frequent_words(texts: &[impl AsRef<str>], min_count: usize) -> BTreeSet<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in texts {
        for tok in tokenize_tweet(t.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    counts.into_iter().filter(|(_, c)| *c >= min_count).map(|(w, _)| w).collect()
}
