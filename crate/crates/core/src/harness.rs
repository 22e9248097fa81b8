//! Experiment drivers: the offline study, the six-point reboot timeline,
//! cycle budgets, sampling-rate sweeps and confusion matrices.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_batch_fixed, adapt_batch_hier, default_theta, AdaptLog, AdaptMode, AdaptState, Schedule};
use crate::classify::{Discriminant, Extractor, FixedHier, HierModel, HierQda};
use crate::error::{Error, Result};
use crate::featsel::{filter_select, gini_select, mrmr_select, pca_fit, FeatureSet, PcaProjection, Selector};
use crate::fuse::{combine_matrix, fit_combine_profile, Channel, CombineProfile};
use crate::leaksim::{reboot, LeakModel, LeakParams, Session, BENCHMARKS};
use crate::rng::{self, streams};
use crate::tracekit::{fit_normalizer, normalize_dataset, DualTrace, LabeledDataset, Matrix, NormalizationStats};

/// Knobs shared by every pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub w_star: usize,
    pub selector: Selector,
    pub classifier: Discriminant,
    pub bins: usize,
    /// adaptation coefficient; derived from the batch and training sizes when absent
    pub theta: Option<f64>,
    pub batch: usize,
    pub schedule: Schedule,
    pub frac_bits: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            w_star: 50,
            selector: Selector::Mrmr,
            classifier: Discriminant::Qda,
            bins: crate::infomath::DEFAULT_BINS,
            theta: None,
            batch: crate::adapt::DEFAULT_BATCH,
            schedule: Schedule::default(),
            frac_bits: crate::classify::DEFAULT_FRAC_BITS,
        }
    }
}

/// Normalized training data with instruction labels.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub norm: NormalizationStats,
    pub power: Matrix,
    pub em: Matrix,
    pub instr: Vec<usize>,
}

impl Prepared {
    pub fn new(dataset: &LabeledDataset) -> Result<Self> {
        let norm = fit_normalizer(dataset)?;
        Self::with_norm(dataset, norm)
    }

    pub fn with_norm(dataset: &LabeledDataset, norm: NormalizationStats) -> Result<Self> {
        let (power, em) = normalize_dataset(dataset, &norm)?;
        Ok(Prepared {
            norm,
            power,
            em,
            instr: dataset.instr_labels(),
        })
    }

    pub fn rows(&self, idx: &[usize]) -> Prepared {
        Prepared {
            norm: self.norm.clone(),
            power: self.power.select_rows(idx),
            em: self.em.select_rows(idx),
            instr: idx.iter().map(|&i| self.instr[i]).collect(),
        }
    }
}

/// Stratified split: `test_fraction` of every class goes to the test side.
pub fn split_indices(labels: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![vec![]; n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = rng::stream(seed, streams::SPLIT);
    let (mut train, mut test) = (vec![], vec![]);
    for mut rows in by_class {
        rows.shuffle(&mut rng);
        let n_test = (rows.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Per-index coefficients for a channel choice.
pub fn channel_profile(data: &Prepared, channel: Channel, n_classes: usize) -> Result<CombineProfile> {
    let w = data.power.cols();
    match channel {
        Channel::Power => Ok(CombineProfile::power_only(w)),
        Channel::Em => Ok(CombineProfile::em_only(w)),
        Channel::Fused => fit_combine_profile(&data.power, &data.em, &data.instr, n_classes),
    }
}

/// Ranks features (or fits principal components) for up to `max_features`.
pub fn fit_extractor(
    data: &Prepared,
    channel: Channel,
    profile: &CombineProfile,
    selector: Selector,
    max_features: usize,
    bins: usize,
) -> Result<Extractor> {
    if selector == Selector::Pca {
        let input = match channel {
            Channel::Power => data.power.clone(),
            Channel::Em => data.em.clone(),
            Channel::Fused => data.power.hstack(&data.em)?,
        };
        let projection = pca_fit(&input, max_features.min(input.cols()))?;
        return Ok(Extractor::Pca { input: channel, projection });
    }
    let fused = combine_matrix(&data.power, &data.em, profile)?;
    let features = match selector {
        Selector::Mrmr => mrmr_select(&fused, &data.instr, max_features, bins)?,
        Selector::Filter => filter_select(&fused, &data.instr, max_features, bins)?,
        Selector::Gini => gini_select(&fused, &data.instr, max_features)?,
        Selector::Pca => unreachable!(),
    };
    Ok(Extractor::Selected {
        profile: profile.clone(),
        features,
    })
}

/// The first `n` features of a ranked extractor.
pub fn truncate_extractor(e: &Extractor, n: usize) -> Extractor {
    match e {
        Extractor::Selected { profile, features } => Extractor::Selected {
            profile: profile.clone(),
            features: features.truncated(n),
        },
        Extractor::Pca { input, projection } => Extractor::Pca {
            input: *input,
            projection: projection.truncated(n),
        },
    }
}

/// Fits normalization, fusion, selection and the two-level classifier.
pub fn fit_model(dataset: &LabeledDataset, cfg: &PipelineConfig) -> Result<HierModel> {
    let table = crate::leaksim::GroupTable::avr();
    fit_model_with(dataset, &table, cfg, Channel::Fused)
}

pub fn fit_model_with(
    dataset: &LabeledDataset,
    table: &crate::leaksim::GroupTable,
    cfg: &PipelineConfig,
    channel: Channel,
) -> Result<HierModel> {
    let data = Prepared::new(dataset)?;
    let profile = channel_profile(&data, channel, table.n_instr())?;
    let extractor = fit_extractor(&data, channel, &profile, cfg.selector, cfg.w_star, cfg.bins)?;
    let x = extractor.extract_matrix(&data.power, &data.em)?;
    let classifier = HierQda::train(&x, &data.instr, table, cfg.classifier)?;
    Ok(HierModel {
        table: table.clone(),
        norm: data.norm,
        extractor,
        classifier,
        fixed: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub group_accuracy: f64,
    pub predictions: Vec<(usize, usize)>,
}

fn score(pred: Vec<(usize, usize)>, truth: &[usize], table: &crate::leaksim::GroupTable) -> Evaluation {
    let n = truth.len().max(1) as f64;
    let hits = pred.iter().zip(truth).filter(|(p, &t)| p.1 == t).count();
    let ghits = pred.iter().zip(truth).filter(|(p, &t)| p.0 == table.group_of(t)).count();
    Evaluation {
        accuracy: hits as f64 / n,
        group_accuracy: ghits as f64 / n,
        predictions: pred,
    }
}

/// Classifies extracted feature rows with a float hierarchy.
pub fn evaluate_features(
    classifier: &HierQda,
    x: &Matrix,
    truth: &[usize],
    table: &crate::leaksim::GroupTable,
) -> Result<Evaluation> {
    let pred = crate::par_map(x.rows(), |i| {
        let row: Vec<f64> = x.row(i).iter().map(|&v| v as f64).collect();
        classifier.classify(&row)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(score(pred, truth, table))
}

/// Feature vectors of raw dual traces under a model's normalization and extractor.
pub fn features_of(model: &HierModel, traces: &[DualTrace]) -> Result<Vec<Vec<f64>>> {
    crate::par_map(traces.len(), |i| model.features(&traces[i]))
        .into_iter()
        .collect()
}

/// Scores a deployed model on labelled raw windows, on the float path or,
/// for the real-time mode, on the model's fixed-point twin.
pub fn evaluate_model(model: &HierModel, dataset: &LabeledDataset, mode: RunMode) -> Result<Evaluation> {
    let traces: Vec<DualTrace> = dataset.records().iter().map(|r| r.trace.clone()).collect();
    let x = features_of(model, &traces)?;
    let pred = match mode {
        RunMode::Offline => classify_float(&model.classifier, &x)?,
        RunMode::RealtimeEmu => {
            let fixed = model
                .fixed
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("model has no fixed-point part".into()))?;
            classify_fixed(fixed, &x)?
        }
    };
    Ok(score(pred, &dataset.instr_labels(), &model.table))
}

fn classify_float(c: &HierQda, x: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    crate::par_map(x.len(), |i| c.classify(&x[i])).into_iter().collect()
}

fn classify_fixed(c: &FixedHier, x: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    crate::par_map(x.len(), |i| c.classify(&x[i])).into_iter().collect()
}

// ---------------------------------------------------------------------------
// confusion matrices

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    /// `counts[truth][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Row-normalized rates; rows without samples are all zero.
    pub fn rates(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Diagonal of [`Confusion::rates`].
    pub fn per_class(&self) -> Vec<f64> {
        self.rates().iter().enumerate().map(|(i, r)| r[i]).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().flatten().sum();
        let diag: u64 = (0..self.n()).map(|i| self.counts[i][i]).sum();
        if total == 0 {
            0.0
        } else {
            diag as f64 / total as f64
        }
    }

    /// Row-normalized rates with truth down the rows and predictions across.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "truth\\predicted")?;
        for l in &self.labels {
            write!(out, ",{l}")?;
        }
        writeln!(out)?;
        for (l, row) in self.labels.iter().zip(self.rates()) {
            write!(out, "{l}")?;
            for v in row {
                write!(out, ",{v:.4}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// Confusion matrix over `labels.len()` classes.
pub fn confusion_matrix(predictions: &[usize], truth: &[usize], labels: Vec<String>) -> Result<Confusion> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= n || t >= n {
            return Err(Error::InvalidArgument(format!("label {} outside {n} classes", p.max(t))));
        }
        counts[t][p] += 1;
    }
    Ok(Confusion { labels, counts })
}

// ---------------------------------------------------------------------------
// offline study

/// Simulator settings for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    #[serde(flatten)]
    pub params: LeakParams,
    pub n_per_class: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            params: LeakParams::default(),
            n_per_class: 3000,
        }
    }
}

impl SimConfig {
    pub fn model(&self) -> Result<LeakModel> {
        LeakModel::new(self.params.clone(), crate::leaksim::GroupTable::avr())
    }

    /// Training session: the first boot of the target.
    pub fn training_session(&self) -> Session {
        Session::boot(self.params.seed, 0, self.params.offset_spread)
    }

    /// Template traces for every instruction in the training session.
    pub fn training_set(&self) -> Result<LabeledDataset> {
        let model = self.model()?;
        let all: Vec<usize> = (0..model.table().n_instr()).collect();
        model.gen_dataset(&all, self.n_per_class, &self.training_session())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    pub test_fraction: f64,
    pub feature_counts: Vec<usize>,
    pub channels: Vec<Channel>,
    pub selectors: Vec<Selector>,
    pub classifiers: Vec<Discriminant>,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            test_fraction: 0.1,
            feature_counts: vec![5, 10, 25, 50, 70],
            channels: Channel::ALL.to_vec(),
            selectors: Selector::ALL.to_vec(),
            classifiers: vec![Discriminant::Qda, Discriminant::Lda],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub channel: Channel,
    pub selector: Selector,
    pub classifier: Discriminant,
    pub features: usize,
    pub accuracy: f64,
    pub group_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub curves: Vec<CurvePoint>,
    /// mean fused / power / EM Gaussian MI over all indices
    pub mean_mi: [f64; 3],
    /// inter-group and instruction confusion of the headline configuration
    pub group_confusion: Option<Confusion>,
    pub instr_confusion: Option<Confusion>,
}

impl OfflineReport {
    pub fn accuracy(&self, channel: Channel, selector: Selector, classifier: Discriminant, features: usize) -> Option<f64> {
        self.curves
            .iter()
            .find(|p| p.channel == channel && p.selector == selector && p.classifier == classifier && p.features == features)
            .map(|p| p.accuracy)
    }

    pub fn write_curves_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "channel,selector,classifier,features,accuracy,group_accuracy")?;
        for p in &self.curves {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6}",
                p.channel, p.selector, p.classifier, p.features, p.accuracy, p.group_accuracy
            )?;
        }
        Ok(())
    }
}

/// Recognition-rate curves on a 90/10 split of simulated template traces.
pub fn run_offline(sim: &SimConfig, pipe: &PipelineConfig, off: &OfflineConfig) -> Result<OfflineReport> {
    let dataset = sim.training_set()?;
    run_offline_on(&dataset, sim.params.seed, pipe, off)
}

pub fn run_offline_on(
    dataset: &LabeledDataset,
    seed: u64,
    pipe: &PipelineConfig,
    off: &OfflineConfig,
) -> Result<OfflineReport> {
    let table = crate::leaksim::GroupTable::avr();
    let labels = dataset.instr_labels();
    let (train_idx, test_idx) = split_indices(&labels, off.test_fraction, seed);
    let train_ds = dataset.subset(&train_idx)?;
    let test_ds = dataset.subset(&test_idx)?;
    let train = Prepared::new(&train_ds)?;
    let test = Prepared::with_norm(&test_ds, train.norm.clone())?;
    let w = train.power.cols();
    let max_features = off.feature_counts.iter().copied().max().unwrap_or(pipe.w_star).min(w);

    let mut curves = vec![];
    let mut mean_mi = [0.0; 3];
    let mut headline: Option<Evaluation> = None;
    for &channel in &off.channels {
        let profile = channel_profile(&train, channel, table.n_instr())?;
        if channel == Channel::Fused {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            mean_mi = [mean(&profile.fused_mi), mean(&profile.power_mi), mean(&profile.em_mi)];
        }
        for &selector in &off.selectors {
            let full = fit_extractor(&train, channel, &profile, selector, max_features, pipe.bins)?;
            let x_train = full.extract_matrix(&train.power, &train.em)?;
            let x_test = full.extract_matrix(&test.power, &test.em)?;
            let available = full.dim();
            for &count in &off.feature_counts {
                let n = count.min(available);
                let cols: Vec<usize> = (0..n).collect();
                let (xtr, xte) = (x_train.select_columns(&cols), x_test.select_columns(&cols));
                for &classifier in &off.classifiers {
                    let model = HierQda::train(&xtr, &train.instr, &table, classifier)?;
                    let ev = evaluate_features(&model, &xte, &test.instr, &table)?;
                    log::info!(
                        "offline {channel}/{selector}/{classifier} w*={n}: {:.4}",
                        ev.accuracy
                    );
                    curves.push(CurvePoint {
                        channel,
                        selector,
                        classifier,
                        features: count,
                        accuracy: ev.accuracy,
                        group_accuracy: ev.group_accuracy,
                    });
                    if channel == Channel::Fused
                        && selector == pipe.selector
                        && classifier == pipe.classifier
                        && count == pipe.w_star
                    {
                        headline = Some(ev);
                    }
                }
            }
        }
    }
    let (group_confusion, instr_confusion) = match headline {
        Some(ev) => {
            let gp: Vec<usize> = ev.predictions.iter().map(|p| p.0).collect();
            let gt: Vec<usize> = test.instr.iter().map(|&t| table.group_of(t)).collect();
            let ip: Vec<usize> = ev.predictions.iter().map(|p| p.1).collect();
            let gnames = (0..table.n_groups()).map(|g| format!("G{}", g + 1)).collect();
            (
                Some(confusion_matrix(&gp, &gt, gnames)?),
                Some(confusion_matrix(&ip, &test.instr, table.names().to_vec())?),
            )
        }
        None => (None, None),
    };
    Ok(OfflineReport {
        seed,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        curves,
        mean_mi,
        group_confusion,
        instr_confusion,
    })
}

// ---------------------------------------------------------------------------
// six-point timeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimelineConfig {
    /// features of the offline (float, mean + covariance) mode
    pub offline_w_star: usize,
    /// features of the real-time (fixed-point, mean-only) mode
    pub realtime_w_star: usize,
    /// windows per evaluation point
    pub eval_windows: usize,
    /// noise of the real-time capture front end relative to the offline one
    pub realtime_noise_factor: f64,
    pub offline_adapt: AdaptMode,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        TimelineConfig {
            offline_w_star: 50,
            realtime_w_star: 70,
            eval_windows: 1000,
            realtime_noise_factor: 1.5,
            offline_adapt: AdaptMode::MeanAndCov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Offline,
    RealtimeEmu,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Offline => "offline",
            RunMode::RealtimeEmu => "realtime-emu",
        })
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(RunMode::Offline),
            "realtime-emu" | "realtime" => Ok(RunMode::RealtimeEmu),
            _ => Err(Error::InvalidArgument(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub point: usize,
    pub session: u32,
    pub rate: f64,
    pub group_rate: f64,
    /// recognition rate per benchmark program
    pub per_benchmark: Vec<(String, f64)>,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTimeline {
    pub mode: RunMode,
    pub w_star: usize,
    pub theta: f64,
    pub points: Vec<TimePoint>,
    /// one log per adaptation batch (after points 1, 3 and 5)
    pub adaptation: Vec<AdaptLog>,
}

impl ModeTimeline {
    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineReport {
    pub seed: u64,
    pub session_offsets: Vec<[f64; 2]>,
    pub budget: CycleBudget,
    pub offline: ModeTimeline,
    pub realtime: ModeTimeline,
}

/// Benchmark windows of one boot session, interleaved round-robin over the
/// benchmark programs.
fn session_stream(model: &LeakModel, session: &Session, len: usize) -> Result<Vec<(DualTrace, usize, usize)>> {
    let per = len.div_ceil(BENCHMARKS.len());
    let mut programs = vec![];
    for (b, bench) in BENCHMARKS.iter().enumerate() {
        let prog = bench.program(model.table())?;
        let take = per.min(prog.len());
        let windows = model.gen_benchmark(&prog[..take.max(1)], session, (b as u64) << 24)?;
        programs.push(windows);
    }
    let mut out = Vec::with_capacity(len);
    let mut j = 0;
    while out.len() < len {
        let b = j % BENCHMARKS.len();
        let k = j / BENCHMARKS.len();
        if let Some((w, i)) = programs[b].get(k) {
            out.push((w.clone(), *i, b));
        } else if programs.iter().all(|p| p.len() <= k) {
            break;
        }
        j += 1;
    }
    Ok(out)
}

fn time_point(
    point: usize,
    session: u32,
    pred: &[(usize, usize)],
    truth: &[usize],
    bench: &[usize],
    table: &crate::leaksim::GroupTable,
) -> Result<TimePoint> {
    let ev = score(pred.to_vec(), truth, table);
    let per_benchmark = BENCHMARKS
        .iter()
        .enumerate()
        .map(|(b, bm)| {
            let idx: Vec<usize> = (0..truth.len()).filter(|&i| bench[i] == b).collect();
            let hits = idx.iter().filter(|&&i| pred[i].1 == truth[i]).count();
            (bm.name.to_string(), hits as f64 / idx.len().max(1) as f64)
        })
        .collect();
    let ip: Vec<usize> = pred.iter().map(|p| p.1).collect();
    Ok(TimePoint {
        point,
        session,
        rate: ev.accuracy,
        group_rate: ev.group_accuracy,
        per_benchmark,
        confusion: confusion_matrix(&ip, truth, table.names().to_vec())?,
    })
}

/// Capture chain and datapath of one timeline mode.
struct ModeSpec {
    mode: RunMode,
    w_star: usize,
    noise_factor: f64,
}

/// Trains one mode on its own capture chain and walks it through three
/// reboots, evaluating before and after an adaptation batch in each.
fn run_mode(
    sim: &SimConfig,
    pipe: &PipelineConfig,
    tl: &TimelineConfig,
    spec: &ModeSpec,
) -> Result<(ModeTimeline, Vec<[f64; 2]>)> {
    let mut params = sim.params.clone();
    params.noise_sigma = params.noise_sigma.map(|s| s * spec.noise_factor);
    let leak = LeakModel::new(params, crate::leaksim::GroupTable::avr())?;
    let table = leak.table().clone();
    let mut session = sim.training_session();
    let all: Vec<usize> = (0..table.n_instr()).collect();
    let dataset = leak.gen_dataset(&all, sim.n_per_class, &session)?;
    let data = Prepared::new(&dataset)?;
    let profile = channel_profile(&data, Channel::Fused, table.n_instr())?;
    let w_star = spec.w_star.min(data.power.cols());
    let extractor = fit_extractor(&data, Channel::Fused, &profile, pipe.selector, w_star, pipe.bins)?;
    let x = extractor.extract_matrix(&data.power, &data.em)?;
    let model = HierModel {
        table: table.clone(),
        norm: data.norm.clone(),
        extractor,
        classifier: HierQda::train(&x, &data.instr, &table, pipe.classifier)?,
        fixed: None,
    };
    drop((x, data, dataset));

    let theta = pipe.theta.unwrap_or_else(|| default_theta(pipe.batch, sim.n_per_class));
    let (mut float_cls, mut fixed_cls, adapt_mode) = match spec.mode {
        RunMode::Offline => (Some(model.classifier.clone()), None, tl.offline_adapt),
        RunMode::RealtimeEmu => (None, Some(model.classifier.quantize(pipe.frac_bits)?), AdaptMode::MeanOnly),
    };
    let mut state = AdaptState::new(theta, adapt_mode, pipe.batch, table.n_instr())?.with_schedule(pipe.schedule);
    let classify = |f: &Option<HierQda>, q: &Option<FixedHier>, x: &[Vec<f64>]| match (f, q) {
        (Some(f), _) => classify_float(f, x),
        (_, Some(q)) => classify_fixed(q, x),
        _ => unreachable!(),
    };

    let mut out = ModeTimeline {
        mode: spec.mode,
        w_star,
        theta,
        points: vec![],
        adaptation: vec![],
    };
    let mut offsets = vec![session.offsets];
    let n_eval = tl.eval_windows;
    let needed = n_eval + pipe.batch;
    for reboot_no in 0..3 {
        session = reboot(&session);
        offsets.push(session.offsets);
        let stream = session_stream(&leak, &session, needed)?;
        if stream.len() < needed {
            return Err(Error::config("timeline.eval_windows", "benchmark programs too short"));
        }
        let truth: Vec<usize> = stream.iter().map(|s| s.1).collect();
        let bench: Vec<usize> = stream.iter().map(|s| s.2).collect();
        let traces: Vec<DualTrace> = stream.into_iter().map(|s| s.0).collect();
        let x = features_of(&model, &traces)?;
        drop(traces);
        let before = 0..n_eval;
        let adapt = n_eval..n_eval + pipe.batch;
        let after = before.clone();
        let p1 = 2 * reboot_no + 1;

        let pred = classify(&float_cls, &fixed_cls, &x[before.clone()])?;
        out.points.push(time_point(p1, session.id, &pred, &truth[before.clone()], &bench[before.clone()], &table)?);
        let mut log = match (&mut float_cls, &mut fixed_cls) {
            (Some(f), _) => adapt_batch_hier(f, &x[adapt.clone()], &mut state)?,
            (_, Some(q)) => adapt_batch_fixed(q, &x[adapt.clone()], &mut state)?,
            _ => unreachable!(),
        };
        for (s, &t) in log.steps.iter_mut().zip(&truth[adapt]) {
            s.truth = Some(t);
        }
        out.adaptation.push(log);
        let pred = classify(&float_cls, &fixed_cls, &x[after.clone()])?;
        out.points.push(time_point(p1 + 1, session.id, &pred, &truth[after.clone()], &bench[after], &table)?);
        log::info!(
            "{} reboot {}: {:.4} -> {:.4}",
            spec.mode,
            reboot_no + 1,
            out.points[p1 - 1].rate,
            out.points[p1].rate
        );
    }
    Ok((out, offsets))
}

/// Six-point timeline of both modes. Each mode trains on template traces
/// from its own capture chain in the first boot session, then sees three
/// reboots with fresh DC offsets. In each session the same benchmark
/// windows are classified before and after adaptation on a disjoint batch
/// of later windows, so the two rates of a session form a paired comparison.
pub fn run_timeline(sim: &SimConfig, pipe: &PipelineConfig, tl: &TimelineConfig) -> Result<TimelineReport> {
    if !(tl.realtime_noise_factor > 0.0) {
        return Err(Error::config("timeline.realtime_noise_factor", "must be > 0"));
    }
    if tl.eval_windows == 0 {
        return Err(Error::config("timeline.eval_windows", "must be positive"));
    }
    let (offline, offsets) = run_mode(
        sim,
        pipe,
        tl,
        &ModeSpec {
            mode: RunMode::Offline,
            w_star: tl.offline_w_star,
            noise_factor: 1.0,
        },
    )?;
    let (realtime, _) = run_mode(
        sim,
        pipe,
        tl,
        &ModeSpec {
            mode: RunMode::RealtimeEmu,
            w_star: tl.realtime_w_star,
            noise_factor: tl.realtime_noise_factor,
        },
    )?;
    let table = crate::leaksim::GroupTable::avr();
    let sizes = table.group_sizes();
    Ok(TimelineReport {
        seed: sim.params.seed,
        session_offsets: offsets,
        budget: cycle_budget(
            realtime.w_star,
            table.n_groups(),
            sizes.iter().copied().max().unwrap_or(1),
            DEFAULT_SAMPLING_RATIO,
        ),
        offline,
        realtime,
    })
}

// ---------------------------------------------------------------------------
// cycle budget

/// Processing-clock cycles available per instruction (sampling clock ratio).
pub const DEFAULT_SAMPLING_RATIO: u32 = 160;
pub const DEFAULT_CLOCK_HZ: f64 = 160e6;
/// Feature count at which the stage costs below were measured.
const REFERENCE_FEATURES: u32 = 70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub combine: u32,
    pub inter: u32,
    pub within: u32,
    pub sort: u32,
    pub adjust: u32,
}

impl Stages {
    /// Stage costs scaled linearly in the feature count (10/40/40/10 cycles
    /// at 70 features); sorting costs one cycle per compared score.
    pub fn model(w_star: usize, groups: usize, max_group: usize) -> Self {
        let scale = |base: u32| (base as u64 * w_star as u64).div_ceil(REFERENCE_FEATURES as u64) as u32;
        Stages {
            combine: scale(10),
            inter: scale(40),
            within: scale(40),
            sort: groups.max(max_group) as u32,
            adjust: scale(10),
        }
    }

    pub fn total(&self) -> u32 {
        self.combine + self.inter + self.within + self.sort + self.adjust
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleBudget {
    pub stages: Stages,
    pub total: u32,
    pub deadline: u32,
    pub real_time: bool,
    pub clock_hz: f64,
    /// instructions classified per second
    pub throughput: f64,
}

impl CycleBudget {
    pub fn from_stages(stages: Stages, deadline: u32, clock_hz: f64) -> Self {
        let total = stages.total();
        CycleBudget {
            stages,
            total,
            deadline,
            real_time: total <= deadline,
            clock_hz,
            throughput: if total == 0 { f64::INFINITY } else { clock_hz / total as f64 },
        }
    }
}

/// Per-instruction processing cost of the real-time datapath.
pub fn cycle_budget(w_star: usize, groups: usize, max_group: usize, sampling_ratio: u32) -> CycleBudget {
    CycleBudget::from_stages(Stages::model(w_star, groups, max_group), sampling_ratio, DEFAULT_CLOCK_HZ)
}

// ---------------------------------------------------------------------------
// sampling sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub points_per_cycle: usize,
    pub window: usize,
    /// feature count that reached `accuracy`
    pub features: usize,
    pub accuracy: f64,
    /// `(features, accuracy)` for every count tried
    pub by_features: Vec<(usize, f64)>,
}

/// Best held-out accuracy of the full fused pipeline at each sampling
/// density, taken over `feature_counts` (capped at the window length).
/// Selection runs once per density at the largest count and is truncated for
/// the smaller ones.
pub fn sampling_sweep(
    sim: &SimConfig,
    pipe: &PipelineConfig,
    test_fraction: f64,
    points_per_cycle: &[usize],
    feature_counts: &[usize],
) -> Result<Vec<SweepPoint>> {
    let table = crate::leaksim::GroupTable::avr();
    if feature_counts.is_empty() || feature_counts.contains(&0) {
        return Err(Error::config("sweep.feature_counts", "entries must be positive"));
    }
    points_per_cycle
        .iter()
        .map(|&ppc| {
            if ppc == 0 {
                return Err(Error::config("sweep.points_per_cycle", "entries must be positive"));
            }
            let s = SimConfig {
                params: sim.params.clone().with_points_per_cycle(ppc),
                n_per_class: sim.n_per_class,
            };
            let dataset = s.training_set()?;
            let (tr, te) = split_indices(&dataset.instr_labels(), test_fraction, sim.params.seed);
            let train = Prepared::new(&dataset.subset(&tr)?)?;
            let test = Prepared::with_norm(&dataset.subset(&te)?, train.norm.clone())?;
            let w = train.power.cols();
            let mut counts: Vec<usize> = feature_counts.iter().map(|&n| n.min(w)).collect();
            counts.sort_unstable();
            counts.dedup();
            let top = *counts.last().expect("non-empty");
            let profile = channel_profile(&train, Channel::Fused, table.n_instr())?;
            let full = fit_extractor(&train, Channel::Fused, &profile, pipe.selector, top, pipe.bins)?;
            let by_features = counts
                .iter()
                .map(|&n| {
                    let ex = truncate_extractor(&full, n);
                    let model =
                        HierQda::train(&ex.extract_matrix(&train.power, &train.em)?, &train.instr, &table, pipe.classifier)?;
                    let ev = evaluate_features(&model, &ex.extract_matrix(&test.power, &test.em)?, &test.instr, &table)?;
                    Ok((n, ev.accuracy))
                })
                .collect::<Result<Vec<_>>>()?;
            // first count reaching the maximum
            let (features, accuracy) = by_features
                .iter()
                .copied()
                .fold((0, f64::NEG_INFINITY), |b, p| if p.1 > b.1 { p } else { b });
            log::info!("sweep {ppc} points/cycle: {accuracy:.4} at {features} features");
            Ok(SweepPoint {
                points_per_cycle: ppc,
                window: w,
                features,
                accuracy,
                by_features,
            })
        })
        .collect()
}

/// Selected indices of an extractor, for reporting.
pub fn selected_indices(e: &Extractor) -> Option<&FeatureSet> {
    match e {
        Extractor::Selected { features, .. } => Some(features),
        Extractor::Pca { .. } => None,
    }
}

/// Principal components of an extractor, for reporting.
pub fn projection(e: &Extractor) -> Option<&PcaProjection> {
    match e {
        Extractor::Pca { projection, .. } => Some(projection),
        Extractor::Selected { .. } => None,
    }
}
