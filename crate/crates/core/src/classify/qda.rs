//! Gaussian discriminant classifiers.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracekit::Matrix;

/// Ridge added when a class covariance has zero trace.
pub const RIDGE_FLOOR: f64 = 1e-12;
const RIDGE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discriminant {
    /// one covariance per class
    Qda,
    /// pooled covariance
    Lda,
}

impl fmt::Display for Discriminant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Discriminant::Qda => "qda",
            Discriminant::Lda => "lda",
        })
    }
}

impl FromStr for Discriminant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qda" => Ok(Discriminant::Qda),
            "lda" => Ok(Discriminant::Lda),
            _ => Err(Error::InvalidArgument(format!("unknown classifier '{s}'"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    mean: Vec<f64>,
    cov: Vec<f64>,
    prior: f64,
}

/// Per-class discriminant parameters. The inverse covariance, log-determinant
/// and bias `b = 2 ln p − ln|Σ|` are derived from `cov` and never serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct QdaClassParams {
    mean: Vec<f64>,
    cov: Vec<f64>,
    inv_cov: Vec<f64>,
    log_det: f64,
    prior: f64,
    bias: f64,
}

impl TryFrom<RawParams> for QdaClassParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        let d = r.mean.len();
        if r.cov.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: r.cov.len(),
            });
        }
        QdaClassParams::new(r.mean, r.cov, r.prior).ok_or(Error::SingularCovariance { class: 0 })
    }
}

impl From<QdaClassParams> for RawParams {
    fn from(p: QdaClassParams) -> Self {
        RawParams {
            mean: p.mean,
            cov: p.cov,
            prior: p.prior,
        }
    }
}

/// Inverse and log-determinant via Cholesky; `None` if not positive definite.
pub(crate) fn factor(cov: &[f64], d: usize) -> Option<(Vec<f64>, f64)> {
    let m = DMatrix::from_row_slice(d, d, cov);
    let chol = m.cholesky()?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    let inv = chol.inverse();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            // exact symmetry keeps scores independent of summation order
            out.push(if j >= i { inv[(i, j)] } else { inv[(j, i)] });
        }
    }
    Some((out, log_det))
}

impl QdaClassParams {
    /// Builds the parameters from an already-regularized covariance.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, prior: f64) -> Option<Self> {
        let d = mean.len();
        let (inv_cov, log_det) = factor(&cov, d)?;
        Some(QdaClassParams {
            bias: 2.0 * prior.ln() - log_det,
            mean,
            cov,
            inv_cov,
            log_det,
            prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn inv_cov(&self) -> &[f64] {
        &self.inv_cov
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    /// `b = 2(ln p − ½ ln|Σ|)`.
    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub(crate) fn mean_mut(&mut self) -> &mut [f64] {
        &mut self.mean
    }

    pub(crate) fn cov_mut(&mut self) -> &mut Vec<f64> {
        &mut self.cov
    }

    /// Re-derives inverse, log-determinant and bias after `cov` changed.
    pub(crate) fn refactor(&mut self) -> bool {
        match factor(&self.cov, self.dim()) {
            Some((inv, ld)) => {
                self.inv_cov = inv;
                self.log_det = ld;
                self.bias = 2.0 * self.prior.ln() - ld;
                true
            }
            None => false,
        }
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)`.
    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut acc = 0.0;
        for i in 0..d {
            let row = &self.inv_cov[i * d..(i + 1) * d];
            let s: f64 = row.iter().zip(&diff).map(|(a, b)| a * b).sum();
            acc += diff[i] * s;
        }
        acc
    }

    /// `δ = −½ (x − μ)ᵀ Σ⁻¹ (x − μ) + ln p − ½ ln|Σ|`.
    pub fn discriminant(&self, x: &[f64]) -> f64 {
        -0.5 * self.mahalanobis(x) + self.prior.ln() - 0.5 * self.log_det
    }
}

/// Multi-class discriminant classifier: the label is the argmax of the
/// per-class discriminants, ties going to the lowest class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qda {
    pub kind: Discriminant,
    pub classes: Vec<QdaClassParams>,
}

impl Qda {
    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.dim())
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        qda_scores(self, x)
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        classify(self, x)
    }

    /// Classifies every row of `x`.
    pub fn classify_rows(&self, x: &Matrix) -> Result<Vec<usize>> {
        crate::par_map(x.rows(), |i| {
            let row: Vec<f64> = x.row(i).iter().map(|&v| v as f64).collect();
            self.classify(&row)
        })
        .into_iter()
        .collect()
    }
}

pub fn qda_scores(model: &Qda, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    Ok(model.classes.iter().map(|c| c.discriminant(x)).collect())
}

/// Index of the first maximum.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|b| b.0)
}

pub fn classify(model: &Qda, x: &[f64]) -> Result<usize> {
    argmax(&qda_scores(model, x)?).ok_or(Error::EmptyScores)
}

struct Moments {
    count: usize,
    mean: Vec<f64>,
    /// population covariance, row-major
    cov: Vec<f64>,
}

fn class_moments(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<Vec<Moments>> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != x.rows() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: x.rows(),
        });
    }
    let d = x.cols();
    let mut members = vec![vec![]; n_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::InvalidArgument(format!("label {c} >= {n_classes} classes")));
        }
        members[c].push(i);
    }
    crate::par_map(n_classes, |c| {
        let rows = &members[c];
        if rows.len() < 2 {
            return Err(Error::TooFewSamples {
                class: c,
                count: rows.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let centered = DMatrix::from_fn(rows.len(), d, |r, j| x.row(rows[r])[j] as f64 - mean[j]);
        let cov = centered.tr_mul(&centered) / n;
        let mut flat = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                flat.push(if j >= i { cov[(i, j)] } else { cov[(j, i)] });
            }
        }
        Ok(Moments {
            count: rows.len(),
            mean,
            cov: flat,
        })
    })
    .into_iter()
    .collect()
}

/// `Σ + λI` with `λ = 1e-6 · trace(Σ) / d`, floored at [`RIDGE_FLOOR`].
pub fn regularize(cov: &mut [f64], d: usize) {
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let lambda = (RIDGE_SCALE * trace / d as f64).max(RIDGE_FLOOR);
    for i in 0..d {
        cov[i * d + i] += lambda;
    }
}

fn build(kind: Discriminant, moments: Vec<Moments>, priors: Option<&[f64]>) -> Result<Qda> {
    let total: usize = moments.iter().map(|m| m.count).sum();
    let d = moments[0].mean.len();
    let priors: Vec<f64> = match priors {
        Some(p) => {
            if p.len() != moments.len() {
                return Err(Error::LengthMismatch {
                    left: p.len(),
                    right: moments.len(),
                });
            }
            p.to_vec()
        }
        None => moments.iter().map(|m| m.count as f64 / total as f64).collect(),
    };
    let pooled = if kind == Discriminant::Lda {
        let mut p = vec![0.0; d * d];
        for m in &moments {
            let w = m.count as f64 / total as f64;
            for (a, b) in p.iter_mut().zip(&m.cov) {
                *a += w * b;
            }
        }
        regularize(&mut p, d);
        Some(p)
    } else {
        None
    };
    let classes = moments
        .into_iter()
        .zip(priors)
        .enumerate()
        .map(|(c, (m, p))| {
            let cov = match &pooled {
                Some(pc) => pc.clone(),
                None => {
                    let mut cov = m.cov;
                    regularize(&mut cov, d);
                    cov
                }
            };
            QdaClassParams::new(m.mean, cov, p).ok_or(Error::SingularCovariance { class: c })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Qda { kind, classes })
}

/// Per-class population mean and ridge-regularized covariance; priors are
/// the empirical class frequencies unless given.
pub fn train_qda(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<Qda> {
    build(Discriminant::Qda, class_moments(x, labels, n_classes)?, None)
}

/// As [`train_qda`] with a single pooled covariance.
pub fn train_lda(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<Qda> {
    build(Discriminant::Lda, class_moments(x, labels, n_classes)?, None)
}

pub fn train(
    kind: Discriminant,
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    priors: Option<&[f64]>,
) -> Result<Qda> {
    build(kind, class_moments(x, labels, n_classes)?, priors)
}

pub fn lda_classify(model: &Qda, x: &[f64]) -> Result<usize> {
    classify(model, x)
}
