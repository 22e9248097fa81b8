//! Self-labelled covariate-shift adaptation.
//!
//! Each incoming feature vector `z` is classified by the model as it stood
//! at the start of the batch; the winning class is then moved towards it:
//!
//! ```text
//! μ' = (1 − θ)μ + θz
//! Σ' = (1 − θ)Σ + θ(z − μ)(z − μ)ᵀ      (mean-and-covariance mode only)
//! ```
//!
//! A lone window always moves its class by `θ`. Inside a batch the
//! [`Schedule`] decides how far each window moves the mean; the default
//! gives every one of the `m_c` windows the pre-batch model assigns to
//! class `c` a step of `θ / m_c`, so a batch shifts the class by about `θ`
//! whatever its size. The covariance step is always `θ / m_c`. Classes with
//! fewer batch windows than features get a mean-only update, since so few
//! windows cannot support a full-rank covariance estimate. Covariances are
//! re-factorized once per batch; a class whose updated covariance is no
//! longer positive definite gets its pre-batch covariance
//! back and the event is logged.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::qda::argmax;
use crate::classify::{FixedHier, FixedQda, HierQda, Qda};
use crate::error::{Error, Result};

pub const DEFAULT_BATCH: usize = 400;
pub const THETA_MIN: f64 = 1e-4;
pub const THETA_MAX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptMode {
    MeanOnly,
    MeanAndCov,
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptMode::MeanOnly => "mean-only",
            AdaptMode::MeanAndCov => "mean-and-cov",
        })
    }
}

impl FromStr for AdaptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-only" => Ok(AdaptMode::MeanOnly),
            "mean-and-cov" => Ok(AdaptMode::MeanAndCov),
            _ => Err(Error::InvalidArgument(format!("unknown adaptation mode '{s}'"))),
        }
    }
}

/// How the step coefficient evolves while one class collects windows
/// inside a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// every window moves its class by `θ`
    Constant,
    /// the `n`-th window gets `θ / (1 + (n − 1)θ)`: the model weighs as much
    /// as `(1 − θ)/θ` windows and the batch windows are averaged into it
    PseudoCount,
    /// a class that collects `m` windows in a batch moves by `θ / m` per
    /// window, so the whole batch shifts it by about `θ`
    #[default]
    Batch,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::PseudoCount => "pseudo-count",
            Schedule::Batch => "batch",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "pseudo-count" => Ok(Schedule::PseudoCount),
            "batch" => Ok(Schedule::Batch),
            _ => Err(Error::InvalidArgument(format!("unknown adaptation schedule '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptState {
    pub theta: f64,
    pub mode: AdaptMode,
    pub schedule: Schedule,
    pub batch: usize,
    /// updates received per class (instruction index for hierarchical models)
    pub counters: Vec<u64>,
    pub steps: u64,
}

impl AdaptState {
    pub fn new(theta: f64, mode: AdaptMode, batch: usize, n_classes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidArgument(format!("theta {theta} outside [0, 1]")));
        }
        if batch == 0 {
            return Err(Error::InvalidArgument("adaptation batch must be >= 1".into()));
        }
        Ok(AdaptState {
            theta,
            mode,
            batch,
            counters: vec![0; n_classes],
            steps: 0,
            schedule: Schedule::default(),
        })
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Step for the `n`-th of `m` windows one class receives in a batch.
    pub fn step_theta(&self, n: u64, m: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.theta,
            Schedule::PseudoCount => self.theta / (1.0 + (n.max(1) - 1) as f64 * self.theta),
            Schedule::Batch => self.theta / m.max(1) as f64,
        }
    }

    fn count(&mut self, class: usize) {
        if class >= self.counters.len() {
            self.counters.resize(class + 1, 0);
        }
        self.counters[class] += 1;
        self.steps += 1;
    }
}

/// `θ = n_adapt / (n_train + n_adapt)`, clamped to `[1e-4, 0.5]`.
pub fn default_theta(n_adapt: usize, n_train_per_class: usize) -> f64 {
    let total = n_adapt + n_train_per_class;
    if total == 0 {
        return THETA_MIN;
    }
    (n_adapt as f64 / total as f64).clamp(THETA_MIN, THETA_MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptStep {
    pub step: u64,
    pub predicted_label: usize,
    pub predicted_group: Option<usize>,
    pub theta: f64,
    pub mode: AdaptMode,
    /// winner minus runner-up discriminant, before and after the update
    pub gap_before: f64,
    pub gap_after: f64,
    /// ground truth when the caller knows it
    pub truth: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptLog {
    pub steps: Vec<AdaptStep>,
    /// classes whose covariance update was rolled back
    pub reverted: Vec<usize>,
    /// classes that got a mean-only update because the batch held fewer of
    /// their windows than there are features
    #[serde(default)]
    pub cov_skipped: Vec<usize>,
}

impl AdaptLog {
    /// Fraction of steps whose self-assigned label matched the known truth.
    pub fn label_accuracy(&self) -> Option<f64> {
        let known: Vec<_> = self.steps.iter().filter_map(|s| s.truth.map(|t| t == s.predicted_label)).collect();
        if known.is_empty() {
            return None;
        }
        Some(known.iter().filter(|&&b| b).count() as f64 / known.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,predicted_label,theta,mode,gap_before,gap_after,truth")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.step,
                s.predicted_label,
                s.theta,
                s.mode,
                s.gap_before,
                s.gap_after,
                s.truth.map_or(String::new(), |t| t.to_string())
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

fn gap_of(scores: &[f64], winner: usize) -> f64 {
    let runner = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != winner)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if runner.is_finite() {
        scores[winner] - runner
    } else {
        0.0
    }
}

/// Moves class `c` towards `z` without refreshing the cached factorization.
fn adjust_class(model: &mut Qda, c: usize, z: &[f64], theta: f64, cov_theta: Option<f64>) {
    let params = &mut model.classes[c];
    let d = params.dim();
    let diff: Vec<f64> = z.iter().zip(params.mean()).map(|(a, b)| a - b).collect();
    for (m, &zi) in params.mean_mut().iter_mut().zip(z) {
        *m = (1.0 - theta) * *m + theta * zi;
    }
    if let Some(t) = cov_theta {
        let cov = params.cov_mut();
        for i in 0..d {
            for j in 0..d {
                let v = &mut cov[i * d + j];
                *v = (1.0 - t) * *v + t * (diff[i] * diff[j]);
            }
        }
    }
}

/// Refactors the listed classes, restoring the saved covariance of any
/// class that lost positive definiteness.
fn refactor(model: &mut Qda, saved: Vec<(usize, Vec<f64>)>, reverted: &mut Vec<usize>) {
    for (c, old) in saved {
        let params = &mut model.classes[c];
        if !params.refactor() {
            log::warn!("adaptation: covariance of class {c} became singular, update skipped");
            *params.cov_mut() = old;
            params.refactor();
            reverted.push(c);
        }
    }
}

/// Covariance step for a class the pre-batch model assigns `share` windows,
/// or `None` when that many windows cannot support a full-rank estimate in
/// `dim` dimensions (a lone window always gets the plain step).
fn cov_theta(state: &AdaptState, share: usize, dim: usize, stream_len: usize) -> Option<f64> {
    if state.mode != AdaptMode::MeanAndCov || (stream_len > 1 && share < dim) {
        return None;
    }
    Some(state.theta / share.max(1) as f64)
}

fn check_dim(model: &Qda, z: &[f64]) -> Result<()> {
    if z.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: z.len(),
        });
    }
    Ok(())
}

/// Classifies `z` with the current model and updates the winning class.
pub fn self_adjust(model: &mut Qda, z: &[f64], state: &mut AdaptState) -> Result<AdaptStep> {
    let mut log = adapt_batch(model, std::slice::from_ref(&z.to_vec()), state)?;
    Ok(log.steps.remove(0))
}

/// Per-batch count of windows assigned to each class.
#[derive(Default)]
struct BatchCounts(std::collections::HashMap<(usize, usize), u64>);

impl BatchCounts {
    /// Step coefficient for the next window of `key` in this batch.
    fn next(&mut self, key: (usize, usize), share: usize, state: &AdaptState) -> f64 {
        let n = self.0.entry(key).or_insert(0);
        *n += 1;
        state.step_theta(*n, share)
    }
}

/// Self-labelled updates over `stream`. Every window is labelled by the
/// model as it stood at the start of the batch; the updates are then applied
/// in stream order and covariances re-factorized once at the end.
pub fn adapt_batch(model: &mut Qda, stream: &[Vec<f64>], state: &mut AdaptState) -> Result<AdaptLog> {
    for z in stream {
        check_dim(model, z)?;
    }
    let before = crate::par_map(stream.len(), |i| model.scores(&stream[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let labels = before
        .iter()
        .map(|s| argmax(s).ok_or(Error::EmptyScores))
        .collect::<Result<Vec<_>>>()?;
    let mut share = vec![0usize; model.n_classes()];
    for &c in &labels {
        share[c] += 1;
    }

    let mut log = AdaptLog::default();
    let mut saved: Vec<(usize, Vec<f64>)> = vec![];
    let mut counts = BatchCounts::default();
    for ((z, &c), before) in stream.iter().zip(&labels).zip(&before) {
        let t = counts.next((0, c), share[c], state);
        let ct = cov_theta(state, share[c], model.dim(), stream.len());
        if ct.is_some() && !saved.iter().any(|(k, _)| *k == c) {
            saved.push((c, model.classes[c].cov().to_vec()));
        }
        if state.mode == AdaptMode::MeanAndCov && ct.is_none() && !log.cov_skipped.contains(&c) {
            log.cov_skipped.push(c);
        }
        adjust_class(model, c, z, t, ct);
        let after = model.scores(z)?;
        state.count(c);
        log.steps.push(AdaptStep {
            step: state.steps,
            predicted_label: c,
            predicted_group: None,
            theta: t,
            mode: state.mode,
            gap_before: gap_of(before, c),
            gap_after: gap_of(&after, c),
            truth: None,
        });
    }
    refactor(model, saved, &mut log.reverted);
    Ok(log)
}

/// Hierarchical variant: the self-assigned group and instruction are both
/// updated, in the inter-group and the matching within-group classifier.
pub fn adapt_batch_hier(
    model: &mut HierQda,
    stream: &[Vec<f64>],
    state: &mut AdaptState,
) -> Result<AdaptLog> {
    for z in stream {
        check_dim(&model.inter, z)?;
    }
    let labelled = crate::par_map(stream.len(), |i| -> Result<(usize, usize, Vec<f64>)> {
        let g = model.inter.classify(&stream[i])?;
        let scores = model.within[g].scores(&stream[i])?;
        let w = argmax(&scores).ok_or(Error::EmptyScores)?;
        Ok((g, w, scores))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut share_inter = vec![0usize; model.inter.n_classes()];
    let mut share_within: Vec<Vec<usize>> = model.within.iter().map(|m| vec![0; m.n_classes()]).collect();
    for &(g, w, _) in &labelled {
        share_inter[g] += 1;
        share_within[g][w] += 1;
    }

    let mut log = AdaptLog::default();
    let mut saved_inter: Vec<(usize, Vec<f64>)> = vec![];
    let mut saved_within: Vec<Vec<(usize, Vec<f64>)>> = vec![vec![]; model.within.len()];
    let mut counts = BatchCounts::default();
    let dim = model.inter.dim();
    for (z, (g, w, before)) in stream.iter().zip(&labelled) {
        let (g, w) = (*g, *w);
        let instr = model.members[g][w];
        let tg = counts.next((usize::MAX, g), share_inter[g], state);
        let tw = counts.next((g, w), share_within[g][w], state);
        let cg = cov_theta(state, share_inter[g], dim, stream.len());
        let cw = cov_theta(state, share_within[g][w], dim, stream.len());
        if cg.is_some() && !saved_inter.iter().any(|(k, _)| *k == g) {
            saved_inter.push((g, model.inter.classes[g].cov().to_vec()));
        }
        if cw.is_some() && !saved_within[g].iter().any(|(k, _)| *k == w) {
            saved_within[g].push((w, model.within[g].classes[w].cov().to_vec()));
        }
        if state.mode == AdaptMode::MeanAndCov && cw.is_none() && !log.cov_skipped.contains(&instr) {
            log.cov_skipped.push(instr);
        }
        adjust_class(&mut model.inter, g, z, tg, cg);
        adjust_class(&mut model.within[g], w, z, tw, cw);
        let after = model.within[g].scores(z)?;
        state.count(instr);
        log.steps.push(AdaptStep {
            step: state.steps,
            predicted_label: instr,
            predicted_group: Some(g),
            theta: tw,
            mode: state.mode,
            gap_before: gap_of(before, w),
            gap_after: gap_of(&after, w),
            truth: None,
        });
    }
    refactor(&mut model.inter, saved_inter, &mut log.reverted);
    for (g, saved) in saved_within.into_iter().enumerate() {
        let mut rev = vec![];
        refactor(&mut model.within[g], saved, &mut rev);
        log.reverted.extend(rev.into_iter().map(|w| model.members[g][w]));
    }
    Ok(log)
}

fn real_scores(m: &FixedQda, z: &[i32]) -> Result<Vec<f64>> {
    Ok(m.scores_quantized(z)?.into_iter().map(|s| m.score_to_real(s)).collect())
}

/// Integer-only mean adaptation of a fixed-point hierarchy, labelled by the
/// pre-batch model like [`adapt_batch`]. Only the mean update exists on
/// this path.
pub fn adapt_batch_fixed(
    model: &mut FixedHier,
    stream: &[Vec<f64>],
    state: &mut AdaptState,
) -> Result<AdaptLog> {
    if state.mode != AdaptMode::MeanOnly {
        return Err(Error::InvalidArgument(
            "fixed-point adaptation supports mean-only mode".into(),
        ));
    }
    let q = model.frac_bits();
    let labelled = crate::par_map(stream.len(), |i| -> Result<(Vec<i32>, usize, usize, Vec<f64>)> {
        let z = crate::classify::fixed::quantize_input(&stream[i], q);
        let (g, instr) = model.classify_quantized(&z)?;
        let w = model.members[g].iter().position(|&m| m == instr).expect("member");
        let before = real_scores(&model.within[g], &z)?;
        Ok((z, g, w, before))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut share: std::collections::HashMap<(usize, usize), usize> = Default::default();
    for (_, g, w, _) in &labelled {
        *share.entry((usize::MAX, *g)).or_default() += 1;
        *share.entry((*g, *w)).or_default() += 1;
    }
    let mut log = AdaptLog::default();
    let mut counts = BatchCounts::default();
    for (z, g, w, before) in labelled {
        let instr = model.members[g][w];
        let tg = counts.next((usize::MAX, g), share[&(usize::MAX, g)], state);
        let tw = counts.next((g, w), share[&(g, w)], state);
        model.inter.adjust_mean(g, &z, tg);
        model.within[g].adjust_mean(w, &z, tw);
        let after = real_scores(&model.within[g], &z)?;
        state.count(instr);
        log.steps.push(AdaptStep {
            step: state.steps,
            predicted_label: instr,
            predicted_group: Some(g),
            mode: state.mode,
            theta: tw,
            gap_before: gap_of(&before, w) / 2.0,
            gap_after: gap_of(&after, w) / 2.0,
            truth: None,
        });
    }
    Ok(log)
}
