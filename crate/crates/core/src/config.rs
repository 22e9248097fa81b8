//! Run configuration and model persistence.
//!
//! A run is described by one TOML file with a section per stage:
//!
//! ```toml
//! mode = "offline"
//!
//! [paths]
//! dataset = "templates.scdt"
//!
//! [simulator]
//! seed = 7
//! n_per_class = 300
//! noise_sigma = [0.05, 0.05]
//!
//! [pipeline]
//! w_star = 50
//! selector = "mrmr"
//! ```
//!
//! Every key is optional and unknown keys are rejected. Trained models are
//! stored as versioned JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::HierModel;
use crate::error::{Error, Result};
use crate::harness::{OfflineConfig, PipelineConfig, RunMode, SimConfig, TimelineConfig};

/// Output file names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub model: PathBuf,
    /// subdirectory for reports
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "templates.scdt".into(),
            model: "model.json".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub points_per_cycle: Vec<usize>,
    /// feature counts tried at every density; the best one is reported
    pub feature_counts: Vec<usize>,
    /// templates per instruction at each sampling density
    pub n_per_class: usize,
    pub test_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            points_per_cycle: vec![5, 10, 20, 30, 40, 80, 160],
            feature_counts: vec![10, 25, 50, 70, 100],
            n_per_class: 300,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub paths: Paths,
    pub simulator: SimConfig,
    pub pipeline: PipelineConfig,
    pub offline: OfflineConfig,
    pub timeline: TimelineConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::Offline,
            paths: Paths::default(),
            simulator: SimConfig::default(),
            pipeline: PipelineConfig::default(),
            offline: OfflineConfig::default(),
            timeline: TimelineConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses and validates a configuration.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = match e.span() {
                Some(span) => format!("line {}", line_of(text, span.start)),
                None => "config".to_string(),
            };
            Error::config(field, e.message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { field, message } => {
                Error::config(format!("{}: {field}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The seed everything random in a run derives from.
    pub fn seed(&self) -> u64 {
        self.simulator.params.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.simulator.params.seed = seed;
        self
    }

    /// Feature count of the configured mode.
    pub fn w_star(&self) -> usize {
        match self.mode {
            RunMode::Offline => self.pipeline.w_star,
            RunMode::RealtimeEmu => self.timeline.realtime_w_star,
        }
    }

    /// Checks value ranges and cross-field limits, naming the first bad field.
    pub fn validate(&self) -> Result<()> {
        let sim = &self.simulator;
        let p = &sim.params;
        let w = p.window;
        // the simulator checks its own knobs when a model is built
        crate::leaksim::LeakModel::new(p.clone(), crate::leaksim::GroupTable::avr()).map(|_| ())?;
        if sim.n_per_class < 2 {
            return Err(Error::config("simulator.n_per_class", "need at least 2 templates per instruction"));
        }

        let pipe = &self.pipeline;
        if pipe.w_star == 0 {
            return Err(Error::config("pipeline.w_star", "must be positive"));
        }
        if pipe.w_star > w {
            return Err(Error::config(
                "pipeline.w_star",
                format!("{} exceeds the window of {w} samples", pipe.w_star),
            ));
        }
        if pipe.bins < 2 {
            return Err(Error::config("pipeline.bins", "need at least 2 bins"));
        }
        if let Some(t) = pipe.theta {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::config("pipeline.theta", "must lie in (0, 1]"));
            }
        }
        if pipe.batch == 0 {
            return Err(Error::config("pipeline.batch", "must be positive"));
        }
        if !(1..=15).contains(&pipe.frac_bits) {
            return Err(Error::config("pipeline.frac_bits", "must lie in 1..=15"));
        }

        let off = &self.offline;
        if !(off.test_fraction > 0.0 && off.test_fraction < 1.0) {
            return Err(Error::config("offline.test_fraction", "must lie in (0, 1)"));
        }
        if off.feature_counts.is_empty() {
            return Err(Error::config("offline.feature_counts", "must not be empty"));
        }
        if let Some(&bad) = off.feature_counts.iter().find(|&&n| n == 0 || n > w) {
            return Err(Error::config("offline.feature_counts", format!("{bad} is outside 1..={w}")));
        }
        for (name, list_empty) in [
            ("offline.channels", off.channels.is_empty()),
            ("offline.selectors", off.selectors.is_empty()),
            ("offline.classifiers", off.classifiers.is_empty()),
        ] {
            if list_empty {
                return Err(Error::config(name, "must not be empty"));
            }
        }

        let tl = &self.timeline;
        for (name, n) in [
            ("timeline.offline_w_star", tl.offline_w_star),
            ("timeline.realtime_w_star", tl.realtime_w_star),
        ] {
            if n == 0 || n > w {
                return Err(Error::config(name, format!("{n} is outside 1..={w}")));
            }
        }
        if tl.eval_windows == 0 {
            return Err(Error::config("timeline.eval_windows", "must be positive"));
        }
        if !(tl.realtime_noise_factor > 0.0) {
            return Err(Error::config("timeline.realtime_noise_factor", "must be positive"));
        }

        let sw = &self.sweep;
        if sw.points_per_cycle.is_empty() || sw.points_per_cycle.contains(&0) {
            return Err(Error::config("sweep.points_per_cycle", "needs positive entries"));
        }
        if sw.feature_counts.is_empty() || sw.feature_counts.contains(&0) {
            return Err(Error::config("sweep.feature_counts", "needs positive entries"));
        }
        if sw.n_per_class < 2 {
            return Err(Error::config("sweep.n_per_class", "need at least 2 templates per instruction"));
        }
        if !(sw.test_fraction > 0.0 && sw.test_fraction < 1.0) {
            return Err(Error::config("sweep.test_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

pub const MODEL_FORMAT: &str = "scd-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk form of a trained pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub mode: RunMode,
    pub model: HierModel,
}

impl ModelFile {
    pub fn new(model: HierModel, seed: u64, mode: RunMode) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            seed,
            mode,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let head: Header = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if head.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a model file (format `{}`)", head.format)));
        }
        if head.version != MODEL_VERSION {
            return Err(Error::FormatVersionMismatch {
                expected: MODEL_VERSION,
                found: head.version,
            });
        }
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
