//! Per-index fusion of normalized power and EM samples, `z = α·p + (1 − α)·em`.
//!
//! Under the Gaussian model the mutual information of the fused feature is
//! maximal where `d f / dα = 0` with `f(α) = Π σ_Z² / σ_{Z,c}²`. Apart from
//! the trivial points α = 0 and α = 1 that derivative vanishes exactly where
//!
//! ```text
//! v(α) = Σ_c (σ1²·σ2c² − σ2²·σ1c²) / (α²·σ1c² + (1 − α)²·σ2c²)
//! ```
//!
//! changes sign. Fused per-class variances assume the two channels are
//! independent within a class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infomath::{mi_gaussian, ClassStats, SIGMA_FLOOR};
use crate::tracekit::{DualTrace, Matrix, Trace};

/// Interior of the search interval for the root of `v`.
pub const ALPHA_EPS: f64 = 1e-6;
const SCAN_STEPS: usize = 200;

fn check_pair(p: &ClassStats, e: &ClassStats) -> Result<()> {
    if p.n_classes() != e.n_classes() {
        return Err(Error::LengthMismatch {
            left: p.n_classes(),
            right: e.n_classes(),
        });
    }
    Ok(())
}

/// The sign-determining factor of `d f / dα`.
pub fn v_alpha(alpha: f64, power: &ClassStats, em: &ClassStats) -> Result<f64> {
    check_pair(power, em)?;
    let (a, b) = (power.sigma.powi(2), em.sigma.powi(2));
    let mut v = 0.0;
    for (s1, s2) in power.class_sigmas.iter().zip(&em.class_sigmas) {
        let (a_c, b_c) = (s1 * s1, s2 * s2);
        let num = a * b_c - b * a_c;
        let den = alpha * alpha * a_c + (1.0 - alpha).powi(2) * b_c;
        if den < SIGMA_FLOOR * SIGMA_FLOOR {
            if num == 0.0 {
                continue;
            }
            return Err(Error::DegenerateSigma(den.sqrt()));
        }
        v += num / den;
    }
    Ok(v)
}

fn v_identically_zero(power: &ClassStats, em: &ClassStats) -> bool {
    let (a, b) = (power.sigma.powi(2), em.sigma.powi(2));
    power.class_sigmas.iter().zip(&em.class_sigmas).all(|(s1, s2)| {
        let (l, r) = (a * s2 * s2, b * s1 * s1);
        (l - r).abs() <= 1e-12 * (l + r).max(f64::MIN_POSITIVE)
    })
}

/// Class statistics of the fused feature for a given α.
pub fn fused_class_stats(power: &ClassStats, em: &ClassStats, alpha: f64) -> Result<ClassStats> {
    check_pair(power, em)?;
    let beta = 1.0 - alpha;
    let class_sigmas: Vec<f64> = power
        .class_sigmas
        .iter()
        .zip(&em.class_sigmas)
        .map(|(s1, s2)| (alpha * alpha * s1 * s1 + beta * beta * s2 * s2).sqrt())
        .collect();
    let mut var = alpha * alpha * power.sigma.powi(2) + beta * beta * em.sigma.powi(2);
    let means = match (&power.class_means, &em.class_means) {
        (Some(m1), Some(m2)) => {
            var += 2.0 * alpha * beta * mean_cross(power, em);
            Some(m1.iter().zip(m2).map(|(x, y)| alpha * x + beta * y).collect())
        }
        _ => None,
    };
    Ok(ClassStats {
        sigma: var.max(0.0).sqrt(),
        class_sigmas,
        priors: power.priors.clone(),
        class_means: means,
    })
}

/// Gaussian MI of the fused feature.
pub fn fused_mi(power: &ClassStats, em: &ClassStats, alpha: f64) -> Result<f64> {
    mi_gaussian(&fused_class_stats(power, em, alpha)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaBranch {
    /// interior zero of `v`
    Root,
    /// `v` has no useful interior zero; best single channel
    Boundary,
    /// `v ≡ 0`: both channels carry the same information
    Tie,
    /// at least one channel is constant at this index
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha: f64,
    pub fused_mi: f64,
    pub branch: AlphaBranch,
}

fn mean_cross(power: &ClassStats, em: &ClassStats) -> f64 {
    match (&power.class_means, &em.class_means) {
        (Some(m1), Some(m2)) => {
            let pri = &power.priors;
            let mu1: f64 = m1.iter().zip(pri).map(|(m, p)| m * p).sum();
            let mu2: f64 = m2.iter().zip(pri).map(|(m, p)| m * p).sum();
            m1.iter()
                .zip(m2)
                .zip(pri)
                .map(|((x, y), p)| p * (x - mu1) * (y - mu2))
                .sum()
        }
        _ => 0.0,
    }
}

/// Sign of `d I(Z; C) / dα` on the open interval, scaled so that it equals
/// the prior-weighted `v(α)` whenever the class means of the two channels are
/// uncorrelated (or absent). With between-class covariance `C` each term picks
/// up `C·((1−α)²σ2c² − α²σ1c²) / (α(1−α))`.
pub fn stationarity(alpha: f64, power: &ClassStats, em: &ClassStats) -> Result<f64> {
    check_pair(power, em)?;
    let (a, b) = (power.sigma.powi(2), em.sigma.powi(2));
    let c = mean_cross(power, em);
    let beta = 1.0 - alpha;
    let mut u = 0.0;
    for ((s1, s2), p) in power.class_sigmas.iter().zip(&em.class_sigmas).zip(&power.priors) {
        let (a_c, b_c) = (s1 * s1, s2 * s2);
        let den = alpha * alpha * a_c + beta * beta * b_c;
        let mut num = a * b_c - b * a_c;
        if c != 0.0 {
            num += c * (beta * beta * b_c - alpha * alpha * a_c) / (alpha * beta);
        }
        if den < SIGMA_FLOOR * SIGMA_FLOOR {
            if num == 0.0 {
                continue;
            }
            return Err(Error::DegenerateSigma(den.sqrt()));
        }
        u += p * num / den;
    }
    Ok(u)
}

fn stationary_everywhere(power: &ClassStats, em: &ClassStats) -> bool {
    mean_cross(power, em) == 0.0 && v_identically_zero(power, em)
}

/// All sign changes of [`stationarity`] on `[ε, 1 − ε]`, each refined by
/// bisection. For means-free statistics with equal priors these are exactly
/// the zeros of `v`.
pub fn v_roots(power: &ClassStats, em: &ClassStats) -> Result<Vec<f64>> {
    let f = |a: f64| stationarity(a, power, em);
    let step = (1.0 - 2.0 * ALPHA_EPS) / SCAN_STEPS as f64;
    let mut roots = vec![];
    let mut lo = ALPHA_EPS;
    let mut f_lo = f(lo)?;
    for j in 1..=SCAN_STEPS {
        let hi = ALPHA_EPS + j as f64 * step;
        let f_hi = f(hi)?;
        if f_lo == 0.0 {
            roots.push(lo);
        } else if f_lo * f_hi < 0.0 {
            roots.push(bisect(&f, lo, hi, f_lo)?);
        }
        lo = hi;
        f_lo = f_hi;
    }
    if f_lo == 0.0 {
        roots.push(lo);
    }
    Ok(roots)
}

fn bisect<F: Fn(f64) -> Result<f64>>(f: &F, mut lo: f64, mut hi: f64, mut f_lo: f64) -> Result<f64> {
    loop {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() < 1e-9 || hi - lo < 1e-6 {
            return Ok(mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
}

/// Optimal combination coefficient with its fused MI.
///
/// Candidates are every bracketed zero of `v` plus both boundaries; the one
/// with the largest fused Gaussian MI wins (interior roots first on ties, then
/// power, then EM), so the result never loses to either single channel.
pub fn solve_alpha(power: &ClassStats, em: &ClassStats) -> Result<AlphaSolution> {
    check_pair(power, em)?;
    match (power.is_degenerate(), em.is_degenerate()) {
        (true, true) => {
            return Ok(AlphaSolution {
                alpha: 0.5,
                fused_mi: 0.0,
                branch: AlphaBranch::Degenerate,
            })
        }
        (true, false) => {
            return Ok(AlphaSolution {
                alpha: 0.0,
                fused_mi: mi_gaussian(em)?,
                branch: AlphaBranch::Degenerate,
            })
        }
        (false, true) => {
            return Ok(AlphaSolution {
                alpha: 1.0,
                fused_mi: mi_gaussian(power)?,
                branch: AlphaBranch::Degenerate,
            })
        }
        _ => {}
    }
    if stationary_everywhere(power, em) {
        return Ok(AlphaSolution {
            alpha: 0.5,
            fused_mi: fused_mi(power, em, 0.5)?,
            branch: AlphaBranch::Tie,
        });
    }
    let mut best = AlphaSolution {
        alpha: f64::NAN,
        fused_mi: f64::NEG_INFINITY,
        branch: AlphaBranch::Root,
    };
    for r in v_roots(power, em)? {
        let mi = fused_mi(power, em, r)?;
        if mi > best.fused_mi {
            best = AlphaSolution {
                alpha: r,
                fused_mi: mi,
                branch: AlphaBranch::Root,
            };
        }
    }
    for alpha in [1.0, 0.0] {
        let mi = fused_mi(power, em, alpha)?;
        if mi > best.fused_mi {
            best = AlphaSolution {
                alpha,
                fused_mi: mi,
                branch: AlphaBranch::Boundary,
            };
        }
    }
    Ok(best)
}

/// [`solve_alpha`] reduced to the coefficient; falls back to 0.5 on invalid input.
pub fn solve_alpha_star(power: &ClassStats, em: &ClassStats) -> f64 {
    solve_alpha(power, em).map_or(0.5, |s| s.alpha)
}

/// Whether the fused feature carries at least as much Gaussian MI as the
/// power channel alone: `Π σ1c ≥ (σ1 / σZ)^n · Π σZc` for equal priors,
/// evaluated in log space with the priors as weights.
pub fn check_improvement(power: &ClassStats, em: &ClassStats, alpha: f64) -> Result<bool> {
    improvement_over(power, &fused_class_stats(power, em, alpha)?)
}

/// Improvement of the fused feature over (power, EM).
pub fn check_improvement_both(
    power: &ClassStats,
    em: &ClassStats,
    alpha: f64,
) -> Result<(bool, bool)> {
    let z = fused_class_stats(power, em, alpha)?;
    Ok((improvement_over(power, &z)?, improvement_over(em, &z)?))
}

fn improvement_over(single: &ClassStats, fused: &ClassStats) -> Result<bool> {
    for s in std::iter::once(&single.sigma)
        .chain(&single.class_sigmas)
        .chain(std::iter::once(&fused.sigma))
        .chain(&fused.class_sigmas)
    {
        if *s < SIGMA_FLOOR {
            return Err(Error::DegenerateSigma(*s));
        }
    }
    let lhs: f64 = single
        .class_sigmas
        .iter()
        .zip(&single.priors)
        .map(|(s, p)| p * s.ln())
        .sum::<f64>();
    let rhs = (single.sigma / fused.sigma).ln()
        + fused
            .class_sigmas
            .iter()
            .zip(&fused.priors)
            .map(|(s, p)| p * s.ln())
            .sum::<f64>();
    Ok(lhs >= rhs - 1e-12 * (lhs.abs() + rhs.abs()).max(1.0))
}

/// Per-index coefficients α_k and the MI figures that produced them.
/// Single-channel profiles (all α = 1 or all α = 0) carry no MI figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineProfile {
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub fused_mi: Vec<f64>,
    #[serde(default)]
    pub power_mi: Vec<f64>,
    #[serde(default)]
    pub em_mi: Vec<f64>,
}

impl CombineProfile {
    pub fn uniform(w: usize, alpha: f64) -> Self {
        CombineProfile {
            alphas: vec![alpha; w],
            fused_mi: vec![],
            power_mi: vec![],
            em_mi: vec![],
        }
    }

    pub fn power_only(w: usize) -> Self {
        Self::uniform(w, 1.0)
    }

    pub fn em_only(w: usize) -> Self {
        Self::uniform(w, 0.0)
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub(crate) fn combine_into(&self, power: &[f32], em: &[f32], out: &mut Vec<f32>) {
        out.extend(
            self.alphas
                .iter()
                .zip(power.iter().zip(em))
                .map(|(&a, (&p, &e))| (a * p as f64 + (1.0 - a) * e as f64) as f32),
        );
    }
}

/// `out[k] = α_k·power[k] + (1 − α_k)·em[k]`.
pub fn combine(dual: &DualTrace, profile: &CombineProfile) -> Result<Trace> {
    if dual.len() != profile.len() {
        return Err(Error::DimensionMismatch {
            expected: profile.len(),
            found: dual.len(),
        });
    }
    let mut out = Vec::with_capacity(dual.len());
    profile.combine_into(dual.power().samples(), dual.em().samples(), &mut out);
    Ok(Trace::new(out))
}

/// Fuses whole normalized matrices row by row.
pub fn combine_matrix(power: &Matrix, em: &Matrix, profile: &CombineProfile) -> Result<Matrix> {
    if power.cols() != profile.len() || em.cols() != profile.len() || power.rows() != em.rows() {
        return Err(Error::DimensionMismatch {
            expected: profile.len(),
            found: power.cols(),
        });
    }
    let mut data = Vec::with_capacity(power.rows() * power.cols());
    for i in 0..power.rows() {
        profile.combine_into(power.row(i), em.row(i), &mut data);
    }
    Matrix::new(power.rows(), power.cols(), data)
}

/// Fits α*_k at every index from normalized training matrices.
pub fn fit_combine_profile(
    power: &Matrix,
    em: &Matrix,
    labels: &[usize],
    n_classes: usize,
) -> Result<CombineProfile> {
    if power.cols() != em.cols() || power.rows() != em.rows() {
        return Err(Error::DimensionMismatch {
            expected: power.cols(),
            found: em.cols(),
        });
    }
    if labels.len() != power.rows() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: power.rows(),
        });
    }
    let fit = |k: usize| -> Result<(f64, f64, f64, f64)> {
        let p = ClassStats::from_samples(&power.column(k), labels, n_classes)?;
        let e = ClassStats::from_samples(&em.column(k), labels, n_classes)?;
        let sol = solve_alpha(&p, &e)?;
        let mi = |s: &ClassStats| if s.is_degenerate() { Ok(0.0) } else { mi_gaussian(s) };
        Ok((sol.alpha, sol.fused_mi, mi(&p)?, mi(&e)?))
    };
    let per_index = crate::par_map(power.cols(), fit);
    let mut profile = CombineProfile {
        alphas: vec![],
        fused_mi: vec![],
        power_mi: vec![],
        em_mi: vec![],
    };
    for r in per_index {
        let (a, z, p, e) = r?;
        profile.alphas.push(a);
        profile.fused_mi.push(z);
        profile.power_mi.push(p);
        profile.em_mi.push(e);
    }
    Ok(profile)
}

/// Which measurement feeds the feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Power,
    Em,
    Fused,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Power, Channel::Em, Channel::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Power => "power",
            Channel::Em => "em",
            Channel::Fused => "fused",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown channel '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid_argmax(p: &ClassStats, e: &ClassStats) -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for j in 0..=100 {
            let a = j as f64 / 100.0;
            let mi = fused_mi(p, e, a).unwrap();
            if mi > best.0 {
                best = (mi, a);
            }
        }
        best.1
    }

    fn stats(means: &[f64], sigmas: &[f64]) -> ClassStats {
        let n = means.len();
        ClassStats::from_moments(means.to_vec(), sigmas.to_vec(), vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn identical_information_ratio_gives_zero_v() {
        let p = ClassStats::equal_priors(0.4, vec![0.1, 0.2]).unwrap();
        // every per-class ratio matches: σ2/σ2c = σ1/σ1c
        let e = ClassStats::equal_priors(0.2, vec![0.05, 0.1]).unwrap();
        for a in [0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(v_alpha(a, &p, &e).unwrap(), 0.0, epsilon = 1e-12);
        }
        assert_eq!(solve_alpha_star(&p, &e), 0.5);
    }

    #[test]
    fn uninformative_em_keeps_v_positive() {
        let p = stats(&[0.3, 0.7], &[0.1, 0.1]);
        let e = ClassStats::equal_priors(0.2, vec![0.2, 0.2]).unwrap();
        for j in 1..100 {
            assert!(v_alpha(j as f64 / 100.0, &p, &e).unwrap() > 0.0);
        }
        assert_eq!(solve_alpha_star(&p, &e), 1.0);
        assert_eq!(grid_argmax(&p, &e), 1.0);
    }

    #[test]
    fn symmetric_channels() {
        let p = stats(&[0.3, 0.6, 0.5], &[0.1, 0.15, 0.12]);
        let e = p.clone();
        assert_abs_diff_eq!(v_alpha(0.5, &p, &e).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(solve_alpha_star(&p, &e), 0.5);
    }

    #[test]
    fn fused_stats_limits() {
        let p = stats(&[0.3, 0.6], &[0.1, 0.15]);
        let e = stats(&[0.5, 0.4], &[0.2, 0.05]);
        let one = fused_class_stats(&p, &e, 1.0).unwrap();
        assert_abs_diff_eq!(one.sigma, p.sigma, epsilon = 1e-15);
        assert_eq!(one.class_sigmas, p.class_sigmas);
        let zero = fused_class_stats(&p, &e, 0.0).unwrap();
        assert_abs_diff_eq!(zero.sigma, e.sigma, epsilon = 1e-15);
        assert_eq!(zero.class_sigmas, e.class_sigmas);

        let iid = ClassStats::equal_priors(0.3, vec![0.2, 0.2]).unwrap();
        let half = fused_class_stats(&iid, &iid, 0.5).unwrap();
        for s in half.class_sigmas {
            assert_abs_diff_eq!(s, 0.2 / 2f64.sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn fused_variance_matches_mixture() {
        let p = stats(&[0.3, 0.6, 0.45], &[0.1, 0.15, 0.05]);
        let e = stats(&[0.5, 0.4, 0.7], &[0.2, 0.05, 0.1]);
        let z = fused_class_stats(&p, &e, 0.3).unwrap();
        let direct =
            ClassStats::from_moments(z.class_means.clone().unwrap(), z.class_sigmas.clone(), z.priors.clone())
                .unwrap();
        assert_abs_diff_eq!(z.sigma, direct.sigma, epsilon = 1e-14);
    }

    #[test]
    fn combine_affine_forms() {
        let dual = DualTrace::new(Trace::new(vec![1.0; 4]), Trace::new(vec![0.0; 4])).unwrap();
        let out = combine(&dual, &CombineProfile::uniform(4, 0.3)).unwrap();
        assert!(out.samples().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        let dual = DualTrace::new(
            Trace::new(vec![0.1, 0.2, 0.3]),
            Trace::new(vec![0.9, 0.8, 0.7]),
        )
        .unwrap();
        assert_eq!(combine(&dual, &CombineProfile::power_only(3)).unwrap(), *dual.power());
        assert_eq!(combine(&dual, &CombineProfile::em_only(3)).unwrap(), *dual.em());
        assert!(matches!(
            combine(&dual, &CombineProfile::power_only(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn improvement_condition() {
        // class means move together in both channels, noise is independent
        let p = stats(&[0.3, 0.7, 0.5], &[0.1, 0.1, 0.1]);
        let e = stats(&[0.35, 0.6, 0.55], &[0.08, 0.12, 0.1]);
        assert!(check_improvement(&p, &e, 1.0).unwrap());
        let sol = solve_alpha(&p, &e).unwrap();
        assert!(sol.alpha > 0.0 && sol.alpha < 1.0);
        assert!(sol.fused_mi > fused_mi(&p, &e, 1.0).unwrap());
        assert!(check_improvement(&p, &e, sol.alpha).unwrap());
        // the condition agrees with the direct MI comparison across the grid
        let base = mi_gaussian(&p).unwrap();
        for j in 0..=100 {
            let a = j as f64 / 100.0;
            let direct = fused_mi(&p, &e, a).unwrap() >= base - 1e-12;
            assert_eq!(check_improvement(&p, &e, a).unwrap(), direct, "alpha {a}");
        }
    }

    #[test]
    fn stationarity_reduces_to_v_without_means() {
        let p = ClassStats::equal_priors(0.5, vec![0.1, 0.3, 0.2]).unwrap();
        let e = ClassStats::equal_priors(0.4, vec![0.35, 0.05, 0.2]).unwrap();
        for j in 1..20 {
            let a = j as f64 / 20.0;
            let v = v_alpha(a, &p, &e).unwrap();
            assert_abs_diff_eq!(stationarity(a, &p, &e).unwrap() * 3.0, v, epsilon = 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn root_matches_grid_with_correlated_means() {
        let p = stats(&[0.2, 0.5, 0.8], &[0.1, 0.1, 0.1]);
        let e = stats(&[0.3, 0.5, 0.7], &[0.05, 0.05, 0.05]);
        let sol = solve_alpha(&p, &e).unwrap();
        assert_eq!(sol.branch, AlphaBranch::Root);
        assert!((sol.alpha - grid_argmax(&p, &e)).abs() <= 0.01);
    }

    #[test]
    fn degenerate_channel_falls_back() {
        let p = stats(&[0.3, 0.7], &[0.1, 0.1]);
        let flat = ClassStats::equal_priors(0.0, vec![0.0, 0.0]).unwrap();
        assert_eq!(solve_alpha(&p, &flat).unwrap().alpha, 1.0);
        assert_eq!(solve_alpha(&flat, &p).unwrap().alpha, 0.0);
        assert_eq!(solve_alpha(&flat, &flat).unwrap().alpha, 0.5);
    }
}
