//! Feature selection over fused traces.
//!
//! mRMR, Filter and Gini rank the `w` columns of a fused feature matrix. PCA
//! is the projection baseline and runs on the `2w` concatenation of power and
//! EM samples.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infomath::{discretize, mi_binned_pair, mi_discrete};
use crate::tracekit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Mrmr,
    Filter,
    Gini,
    Pca,
}

impl Selector {
    pub const ALL: [Selector; 4] = [Selector::Mrmr, Selector::Filter, Selector::Gini, Selector::Pca];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Mrmr => "mrmr",
            Selector::Filter => "filter",
            Selector::Gini => "gini",
            Selector::Pca => "pca",
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Selector::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown selector '{s}'")))
    }
}

/// Ordered selected indices with the score each one was picked with
/// (MID for mRMR, relevance for Filter, impurity gain for Gini).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub method: Selector,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The first `n` picks. Greedy orderings are prefix-consistent, so this is
    /// the set a smaller `w*` would have produced.
    pub fn truncated(&self, n: usize) -> FeatureSet {
        let n = n.min(self.len());
        FeatureSet {
            method: self.method,
            indices: self.indices[..n].to_vec(),
            scores: self.scores[..n].to_vec(),
        }
    }

    pub fn select(&self, row: &[f32], out: &mut Vec<f64>) {
        out.extend(self.indices.iter().map(|&k| row[k] as f64));
    }

    /// Keeps the selected columns of `m`.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        m.select_columns(&self.indices)
    }
}

fn check_request(x: &Matrix, labels: &[usize], w_star: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != x.rows() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: x.rows(),
        });
    }
    if w_star == 0 || w_star > x.cols() {
        return Err(Error::InsufficientFeatures {
            requested: w_star,
            available: x.cols(),
        });
    }
    Ok(())
}

fn n_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn binned_columns(x: &Matrix, bins: usize) -> Result<Vec<Vec<u8>>> {
    crate::par_map(x.cols(), |k| discretize(&x.column(k), bins))
        .into_iter()
        .collect()
}

/// Histogram relevance `G(s_k, C)` of every column.
pub fn relevances(x: &Matrix, labels: &[usize], bins: usize) -> Result<Vec<f64>> {
    let codes = binned_columns(x, bins)?;
    let nc = n_classes(labels);
    Ok(crate::par_map(codes.len(), |k| mi_discrete(&codes[k], bins, labels, nc)))
}

/// First index of the maximum among `candidates`.
fn argmax_by<F: Fn(usize) -> f64>(candidates: impl Iterator<Item = usize>, score: F) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for k in candidates {
        let s = score(k);
        if s > best.1 || best.0 == usize::MAX {
            best = (k, s);
        }
    }
    best
}

/// Greedy max-relevance min-redundancy selection with the MID criterion.
///
/// Step one takes the most relevant column. Each later step takes the column
/// maximizing `G(s_i, C) − mean_j R(s_i, s'_j)` over the already-selected
/// `s'_j`. Ties go to the lowest index.
pub fn mrmr_select(x: &Matrix, labels: &[usize], w_star: usize, bins: usize) -> Result<FeatureSet> {
    check_request(x, labels, w_star)?;
    let codes = binned_columns(x, bins)?;
    let nc = n_classes(labels);
    let rel = crate::par_map(codes.len(), |k| mi_discrete(&codes[k], bins, labels, nc));
    let w = x.cols();
    let mut chosen = vec![false; w];
    let mut red_sum = vec![0.0; w];
    let (first, s0) = argmax_by(0..w, |k| rel[k]);
    let mut set = FeatureSet {
        method: Selector::Mrmr,
        indices: vec![first],
        scores: vec![s0],
    };
    chosen[first] = true;
    while set.len() < w_star {
        let last = *set.indices.last().expect("non-empty");
        let added = crate::par_map(w, |k| {
            if chosen[k] {
                0.0
            } else {
                mi_binned_pair(&codes[k], &codes[last], bins)
            }
        });
        for (r, a) in red_sum.iter_mut().zip(added) {
            *r += a;
        }
        let m = set.len() as f64;
        let (k, s) = argmax_by((0..w).filter(|&k| !chosen[k]), |k| rel[k] - red_sum[k] / m);
        chosen[k] = true;
        set.indices.push(k);
        set.scores.push(s);
    }
    Ok(set)
}

fn top_by_score(method: Selector, scores: Vec<f64>, w_star: usize) -> FeatureSet {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep ascending index order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(w_star);
    FeatureSet {
        method,
        scores: order.iter().map(|&k| scores[k]).collect(),
        indices: order,
    }
}

/// Ranks columns by relevance alone.
pub fn filter_select(x: &Matrix, labels: &[usize], w_star: usize, bins: usize) -> Result<FeatureSet> {
    check_request(x, labels, w_star)?;
    Ok(top_by_score(Selector::Filter, relevances(x, labels, bins)?, w_star))
}

fn gini_impurity(counts: &[u64], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Best impurity reduction of a single-threshold stump `x ≤ t` over the
/// decile thresholds of `values`.
pub fn gini_gain(values: &[f64], labels: &[usize]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let nc = n_classes(labels);
    let mut total = vec![0u64; nc];
    for &c in labels {
        total[c] += 1;
    }
    let parent = gini_impurity(&total, n as u64);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = 0.0f64;
    let mut left = vec![0u64; nc];
    for d in 1..10 {
        let idx = ((d as f64 / 10.0) * n as f64).ceil() as usize;
        let t = sorted[idx.saturating_sub(1).min(n - 1)];
        left.iter_mut().for_each(|c| *c = 0);
        let mut n_left = 0u64;
        for (&v, &c) in values.iter().zip(labels) {
            if v <= t {
                left[c] += 1;
                n_left += 1;
            }
        }
        let n_right = n as u64 - n_left;
        let right: Vec<u64> = total.iter().zip(&left).map(|(a, b)| a - b).collect();
        let child = (n_left as f64 * gini_impurity(&left, n_left)
            + n_right as f64 * gini_impurity(&right, n_right))
            / n as f64;
        best = best.max(parent - child);
    }
    best
}

/// Ranks columns by decile-stump Gini gain.
pub fn gini_select(x: &Matrix, labels: &[usize], w_star: usize) -> Result<FeatureSet> {
    check_request(x, labels, w_star)?;
    let gains = crate::par_map(x.cols(), |k| gini_gain(&x.column(k), labels));
    Ok(top_by_score(Selector::Gini, gains, w_star))
}

/// Principal-component projection fitted on the covariance of the input
/// columns (power ‖ EM for the offline baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Row-major `k × d` orthonormal component matrix.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

impl PcaProjection {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 0.0;
        }
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }

    /// The leading `k` components.
    pub fn truncated(&self, k: usize) -> PcaProjection {
        let k = k.min(self.k());
        PcaProjection {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            total_variance: self.total_variance,
        }
    }

    pub(crate) fn project_into<I: IntoIterator<Item = f64> + Clone>(&self, x: I, out: &mut Vec<f64>) {
        for c in &self.components {
            out.push(
                x.clone()
                    .into_iter()
                    .zip(c.iter().zip(&self.mean))
                    .map(|(v, (w, m))| (v - m) * w)
                    .sum(),
            );
        }
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &a) in self.components.iter().zip(y) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += a * ci;
            }
        }
        x
    }
}

/// Fits the top-`k` principal components of the rows of `x`.
///
/// When fewer than `k` eigenvalues are distinguishable from zero a warning is
/// logged and only the non-zero components are kept.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaProjection> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = x.cols();
    if k == 0 || k > d {
        return Err(Error::InsufficientFeatures {
            requested: k,
            available: d,
        });
    }
    let n = x.rows();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] as f64 - mean[j]);
    let cov = centered.tr_mul(&centered) / n as f64;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-12 * d as f64;
    let mut components = vec![];
    let mut eigenvalues = vec![];
    for &j in order.iter().take(k) {
        let lambda = eig.eigenvalues[j];
        if lambda <= tol {
            break;
        }
        components.push(eig.eigenvectors.column(j).iter().copied().collect());
        eigenvalues.push(lambda);
    }
    if components.len() < k {
        log::warn!(
            "pca: rank deficient input, {} of {} components available",
            components.len(),
            k
        );
    }
    Ok(PcaProjection {
        mean,
        components,
        eigenvalues,
        total_variance,
    })
}

/// Projects one input row onto the fitted components.
pub fn pca_project(x: &[f32], projection: &PcaProjection) -> Result<Vec<f64>> {
    if x.len() != projection.dim() {
        return Err(Error::DimensionMismatch {
            expected: projection.dim(),
            found: x.len(),
        });
    }
    let mut out = Vec::with_capacity(projection.k());
    projection.project_into(x.iter().map(|&v| v as f64), &mut out);
    Ok(out)
}
