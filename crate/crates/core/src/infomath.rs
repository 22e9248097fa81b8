//! Entropy and mutual-information kernels. All results are in bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 32;

/// Standard deviations below this are treated as a constant feature.
pub const SIGMA_FLOOR: f64 = 1e-12;

const TWO_PI_E: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::E;

/// Per-feature Gaussian summary: overall spread, per-class spread and priors.
/// `class_means` is optional; when both channels of a fusion carry means the
/// between-class covariance of the channels enters the fused variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub sigma: f64,
    pub class_sigmas: Vec<f64>,
    pub priors: Vec<f64>,
    pub class_means: Option<Vec<f64>>,
}

impl ClassStats {
    pub fn new(sigma: f64, class_sigmas: Vec<f64>, priors: Vec<f64>) -> Result<Self> {
        let s = ClassStats {
            sigma,
            class_sigmas,
            priors,
            class_means: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// Equal priors over `class_sigmas.len()` classes.
    pub fn equal_priors(sigma: f64, class_sigmas: Vec<f64>) -> Result<Self> {
        let n = class_sigmas.len();
        Self::new(sigma, class_sigmas, vec![1.0 / n as f64; n])
    }

    /// Builds the stats from class means/sigmas; the overall sigma is the
    /// mixture standard deviation.
    pub fn from_moments(means: Vec<f64>, class_sigmas: Vec<f64>, priors: Vec<f64>) -> Result<Self> {
        if means.len() != class_sigmas.len() {
            return Err(Error::LengthMismatch {
                left: means.len(),
                right: class_sigmas.len(),
            });
        }
        let mu: f64 = means.iter().zip(&priors).map(|(m, p)| m * p).sum();
        let var: f64 = means
            .iter()
            .zip(&class_sigmas)
            .zip(&priors)
            .map(|((m, s), p)| p * (s * s + (m - mu).powi(2)))
            .sum();
        let s = ClassStats {
            sigma: var.max(0.0).sqrt(),
            class_sigmas,
            priors,
            class_means: Some(means),
        };
        s.validate()?;
        Ok(s)
    }

    /// Population moments of `values` grouped by `labels` (0..n_classes).
    /// Priors are the empirical class frequencies; empty classes are dropped.
    pub fn from_samples(values: &[f64], labels: &[usize], n_classes: usize) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: labels.len(),
            });
        }
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut acc = vec![(0usize, 0.0f64, 0.0f64); n_classes];
        for (&v, &l) in values.iter().zip(labels) {
            let a = &mut acc[l];
            a.0 += 1;
            a.1 += v;
        }
        for (&v, &l) in values.iter().zip(labels) {
            let a = &mut acc[l];
            let m = a.1 / a.0 as f64;
            a.2 += (v - m) * (v - m);
        }
        let n = values.len() as f64;
        let mut means = vec![];
        let mut sigmas = vec![];
        let mut priors = vec![];
        for &(c, sum, ss) in acc.iter().filter(|a| a.0 > 0) {
            means.push(sum / c as f64);
            sigmas.push((ss / c as f64).sqrt());
            priors.push(c as f64 / n);
        }
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let s = ClassStats {
            sigma: var.sqrt(),
            class_sigmas: sigmas,
            priors,
            class_means: Some(means),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n_classes(&self) -> usize {
        self.class_sigmas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.class_sigmas.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {n}")));
        }
        if self.priors.len() != n {
            return Err(Error::LengthMismatch {
                left: self.priors.len(),
                right: n,
            });
        }
        if let Some(m) = &self.class_means {
            if m.len() != n {
                return Err(Error::LengthMismatch { left: m.len(), right: n });
            }
        }
        if !(self.sigma >= 0.0) || self.class_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("standard deviations must be >= 0".into()));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("priors sum to {total}")));
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma < SIGMA_FLOOR || self.class_sigmas.iter().any(|&s| s < SIGMA_FLOOR)
    }
}

/// Differential entropy of a Gaussian, `½·log2(2πe·σ²)`.
pub fn gaussian_entropy(sigma: f64) -> Result<f64> {
    if !(sigma >= SIGMA_FLOOR) {
        return Err(Error::DegenerateSigma(sigma));
    }
    Ok(0.5 * (TWO_PI_E * sigma * sigma).log2())
}

/// Gaussian approximation of I(X; C): `h(X) − Σ p_i h(X | c_i)`, clamped at 0.
pub fn mi_gaussian(stats: &ClassStats) -> Result<f64> {
    let hx = gaussian_entropy(stats.sigma)?;
    let mut hxc = 0.0;
    for (&s, &p) in stats.class_sigmas.iter().zip(&stats.priors) {
        hxc += p * gaussian_entropy(s)?;
    }
    Ok((hx - hxc).max(0.0))
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Equal-width bin indices on [0, 1].
pub fn discretize(values: &[f64], bins: usize) -> Result<Vec<u8>> {
    if !(2..=256).contains(&bins) {
        return Err(Error::InvalidArgument(format!("bins must be in 2..=256, got {bins}")));
    }
    values
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                Err(Error::RangeViolation(v))
            } else {
                Ok(bin_of(v, bins) as u8)
            }
        })
        .collect()
}

fn entropy_of_counts(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Plug-in MI between two discrete sequences with `nx` and `ny` symbols.
pub fn mi_discrete(x: &[u8], nx: usize, y: &[usize], ny: usize) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mut joint = vec![0u64; nx * ny];
    for (&a, &b) in x.iter().zip(y) {
        joint[a as usize * ny + b] += 1;
    }
    mi_from_joint(&joint, nx, ny, n)
}

/// Plug-in MI between two binned features.
pub fn mi_binned_pair(x: &[u8], y: &[u8], bins: usize) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mut joint = vec![0u64; bins * bins];
    for (&a, &b) in x.iter().zip(y) {
        joint[a as usize * bins + b as usize] += 1;
    }
    mi_from_joint(&joint, bins, bins, n)
}

fn mi_from_joint(joint: &[u64], nx: usize, ny: usize, n: f64) -> f64 {
    let mut px = vec![0u64; nx];
    let mut py = vec![0u64; ny];
    for i in 0..nx {
        for j in 0..ny {
            let c = joint[i * ny + j];
            px[i] += c;
            py[j] += c;
        }
    }
    let hx = entropy_of_counts(&px, n);
    let hy = entropy_of_counts(&py, n);
    let hxy = entropy_of_counts(joint, n);
    (hx + hy - hxy).max(0.0)
}

/// Entropy (bits) of a binned feature.
pub fn binned_entropy_codes(x: &[u8], bins: usize) -> f64 {
    let mut counts = vec![0u64; bins];
    for &a in x {
        counts[a as usize] += 1;
    }
    entropy_of_counts(&counts, x.len() as f64)
}

fn check_pair(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Histogram estimate of I(X; C) with `bins` equal-width bins on [0, 1].
pub fn mi_histogram(values: &[f64], labels: &[usize], bins: usize) -> Result<f64> {
    check_pair(values.len(), labels.len())?;
    let x = discretize(values, bins)?;
    let nc = labels.iter().max().map_or(0, |m| m + 1);
    Ok(mi_discrete(&x, bins, labels, nc))
}

/// Relevance of a feature to the class label.
pub fn relevance(feature: &[f64], labels: &[usize], bins: usize) -> Result<f64> {
    mi_histogram(feature, labels, bins)
}

/// Redundancy between two features: histogram MI over the `bins × bins` joint.
pub fn redundancy(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    check_pair(a.len(), b.len())?;
    let x = discretize(a, bins)?;
    let y = discretize(b, bins)?;
    Ok(mi_binned_pair(&x, &y, bins))
}

pub fn binned_entropy(values: &[f64], bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(binned_entropy_codes(&discretize(values, bins)?, bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_reference_points() {
        let unit = 1.0 / TWO_PI_E.sqrt();
        assert_abs_diff_eq!(gaussian_entropy(unit).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_entropy(2.0 * unit).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(gaussian_entropy(1e-15), Err(Error::DegenerateSigma(_))));
    }

    #[test]
    fn gaussian_mi_examples() {
        let none = ClassStats::equal_priors(0.3, vec![0.3, 0.3, 0.3]).unwrap();
        assert_abs_diff_eq!(mi_gaussian(&none).unwrap(), 0.0, epsilon = 1e-12);

        // mixture variance 0.01 + 0.2^2 / 4 = 0.02, so I = ½·log2(0.02 / 0.01)
        let two = ClassStats::from_moments(vec![0.4, 0.6], vec![0.1, 0.1], vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(two.sigma * two.sigma, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(mi_gaussian(&two).unwrap(), 0.5, epsilon = 1e-12);

        let bad = ClassStats::equal_priors(0.3, vec![0.3, 0.0]).unwrap();
        assert!(matches!(mi_gaussian(&bad), Err(Error::DegenerateSigma(_))));
    }

    #[test]
    fn equal_prior_closed_form() {
        let s = ClassStats::equal_priors(0.5, vec![0.1, 0.2, 0.3, 0.25]).unwrap();
        let n = 4.0;
        let prod: f64 = s.class_sigmas.iter().map(|x| (x * x).powf(1.0 / n)).product();
        let closed = 0.5 * (s.sigma * s.sigma / prod).log2();
        assert_abs_diff_eq!(mi_gaussian(&s).unwrap(), closed, epsilon = 1e-12);
    }

    #[test]
    fn histogram_deterministic_channel() {
        let values: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.25 } else { 0.75 }).collect();
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        assert_abs_diff_eq!(mi_histogram(&values, &labels, 32).unwrap(), 1.0, epsilon = 1e-9);
        let single = vec![0usize; 1000];
        assert_eq!(mi_histogram(&values, &single, 32).unwrap(), 0.0);
    }

    #[test]
    fn histogram_independent_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<usize> = (0..100_000).map(|_| rng.random_range(0..2)).collect();
        assert!(mi_histogram(&values, &labels, 32).unwrap() < 0.02);
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(mi_histogram(&[], &[], 32), Err(Error::EmptyInput)));
        assert!(matches!(mi_histogram(&[1.5], &[0], 32), Err(Error::RangeViolation(_))));
        assert!(mi_histogram(&[0.5], &[0], 1).is_err());
        assert!(matches!(
            mi_histogram(&[0.5, 0.2], &[0], 32),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn redundancy_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let g: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let self_mi = redundancy(&f, &f, 32).unwrap();
        assert_abs_diff_eq!(self_mi, binned_entropy(&f, 32).unwrap(), epsilon = 1e-9);
        assert!(redundancy(&f, &g, 32).unwrap() < 0.03);

        let constant = vec![0.4; 1000];
        let labels: Vec<usize> = (0..1000).map(|i| i % 3).collect();
        assert_eq!(relevance(&constant, &labels, 32).unwrap(), 0.0);
    }

    #[test]
    fn from_samples_population_moments() {
        let values = [0.0, 2.0, 10.0, 14.0];
        let labels = [0, 0, 1, 1];
        let s = ClassStats::from_samples(&values, &labels, 2).unwrap();
        assert_eq!(s.class_sigmas, vec![1.0, 2.0]);
        assert_eq!(s.class_means, Some(vec![1.0, 12.0]));
        assert_abs_diff_eq!(s.sigma, 32.75f64.sqrt(), epsilon = 1e-12);
    }
}
