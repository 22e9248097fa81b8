//! Integer-only scoring of a discriminant classifier.
//!
//! Inputs, means and the inverse covariance are held as signed 16-bit values
//! at `q` fraction bits and all products accumulate in `i64`:
//!
//! ```text
//! Score_c(z) = −dᵀ S_c d + (b_c << 2q),   d = z − μ_c
//! ```
//!
//! which is `2δ_c` at scale `2^{3q}` (times `2^{-shift}` for scaled models).

use serde::{Deserialize, Serialize};

use super::qda::Qda;
use crate::error::{Error, Result};

pub const DEFAULT_FRAC_BITS: u32 = 12;
pub const FRAC_BITS_RANGE: std::ops::RangeInclusive<u32> = 8..=14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedClass {
    pub mean: Vec<i16>,
    /// row-major inverse covariance
    pub inv_cov: Vec<i16>,
    pub bias: i16,
}

/// Quantized classifier. Real coefficients are `value · 2^{q − shift}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedQda {
    pub frac_bits: u32,
    pub shift: u32,
    pub classes: Vec<FixedClass>,
}

fn quantize(v: f64, scale: f64, q: u32) -> Result<i16> {
    let r = (v * scale).round();
    if !(i16::MIN as f64..=i16::MAX as f64).contains(&r) {
        return Err(Error::OverflowRisk {
            value: v,
            frac_bits: q,
        });
    }
    Ok(r as i16)
}

fn check_q(q: u32) -> Result<()> {
    if !FRAC_BITS_RANGE.contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "fraction bits must be in {FRAC_BITS_RANGE:?}, got {q}"
        )));
    }
    Ok(())
}

fn quantize_with(model: &Qda, q: u32, shift: u32, bias_offset: f64) -> Result<FixedQda> {
    let unit = (1u64 << q) as f64;
    let coef = unit / (1u64 << shift) as f64;
    let classes = model
        .classes
        .iter()
        .map(|c| {
            Ok(FixedClass {
                mean: c.mean().iter().map(|&m| quantize(m, unit, q)).collect::<Result<_>>()?,
                inv_cov: c.inv_cov().iter().map(|&s| quantize(s, coef, q)).collect::<Result<_>>()?,
                bias: quantize(c.bias() - bias_offset, coef, q)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FixedQda {
        frac_bits: q,
        shift,
        classes,
    })
}

/// Rounds every coefficient to nearest at scale `2^q`.
///
/// Fails with [`Error::OverflowRisk`] as soon as one value needs more than
/// 16 signed bits.
pub fn quantize_model(model: &Qda, q: u32) -> Result<FixedQda> {
    check_q(q)?;
    quantize_with(model, q, 0, 0.0)
}

/// Like [`quantize_model`], but first subtracts the mean bias from every
/// class and scales the inverse covariances and biases by a common power of
/// two so they fit 16 bits. Both operations shift or scale all class scores
/// alike, so the argmax is unchanged.
pub fn quantize_model_scaled(model: &Qda, q: u32) -> Result<FixedQda> {
    check_q(q)?;
    let n = model.n_classes().max(1) as f64;
    let offset = model.classes.iter().map(|c| c.bias()).sum::<f64>() / n;
    let unit = (1u64 << q) as f64;
    let peak = model
        .classes
        .iter()
        .flat_map(|c| c.inv_cov().iter().copied().chain(std::iter::once(c.bias() - offset)))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let limit = i16::MAX as f64 - 0.5;
    let mut shift = 0;
    while peak * unit / (1u64 << shift) as f64 > limit {
        shift += 1;
        if shift > 48 {
            return Err(Error::OverflowRisk {
                value: peak,
                frac_bits: q,
            });
        }
    }
    quantize_with(model, q, shift, offset)
}

/// Input sample at scale `2^q`.
pub fn quantize_input(x: &[f64], q: u32) -> Vec<i32> {
    let unit = (1u64 << q) as f64;
    x.iter().map(|&v| (v * unit).round() as i32).collect()
}

impl FixedQda {
    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Integer scores for an already-quantized input.
    pub fn scores_quantized(&self, z: &[i32]) -> Result<Vec<i64>> {
        let dim = self.dim();
        if z.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: z.len(),
            });
        }
        let mut d = vec![0i64; dim];
        Ok(self
            .classes
            .iter()
            .map(|c| {
                for ((di, &zi), &mi) in d.iter_mut().zip(z).zip(&c.mean) {
                    *di = zi as i64 - mi as i64;
                }
                let mut quad = 0i64;
                for (i, &di) in d.iter().enumerate() {
                    let row = &c.inv_cov[i * dim..(i + 1) * dim];
                    let s: i64 = row.iter().zip(&d).map(|(&a, &b)| a as i64 * b).sum();
                    quad += di * s;
                }
                -quad + ((c.bias as i64) << (2 * self.frac_bits))
            })
            .collect())
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<i64>> {
        self.scores_quantized(&quantize_input(x, self.frac_bits))
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        bubble_argmax(&self.scores(x)?)
    }

    /// Real value represented by an integer score (≈ `2δ` plus a common offset).
    pub fn score_to_real(&self, s: i64) -> f64 {
        s as f64 * (1u64 << self.shift) as f64 / 2f64.powi(3 * self.frac_bits as i32)
    }

    /// Mean-only update `μ ← (1 − θ)μ + θz` in integer arithmetic.
    pub fn adjust_mean(&mut self, class: usize, z: &[i32], theta: f64) {
        let unit = 1i64 << self.frac_bits;
        let t = (theta * unit as f64).round() as i64;
        let half = unit / 2;
        for (m, &zi) in self.classes[class].mean.iter_mut().zip(z) {
            let v = ((unit - t) * *m as i64 + t * zi as i64 + half) >> self.frac_bits;
            *m = v.clamp(i16::MIN as i64, i16::MAX as i64) as i16;
        }
    }
}

/// Index of the maximum by successive pairwise comparison, keeping the
/// earlier entry on ties.
pub fn bubble_argmax<T: PartialOrd + Copy>(scores: &[T]) -> Result<usize> {
    let first = *scores.first().ok_or(Error::EmptyScores)?;
    let mut best = (0, first);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// one pairwise bank across the groups plus one inside every group
    Hierarchical,
    /// one pairwise bank across all instructions
    Flat,
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Number of pairwise classifiers a one-versus-one bank needs.
pub fn count_classifiers(group_sizes: &[usize], strategy: Strategy) -> u64 {
    match strategy {
        Strategy::Flat => choose2(group_sizes.iter().sum::<usize>() as u64),
        Strategy::Hierarchical => {
            choose2(group_sizes.len() as u64)
                + group_sizes.iter().map(|&s| choose2(s as u64)).sum::<u64>()
        }
    }
}
