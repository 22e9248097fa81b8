//! `scd`: command-line driver for the dual-channel disassembly pipeline.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use scd_core::config::{ModelFile, RunConfig};
use scd_core::error::ErrorKind;
use scd_core::fuse::Channel;
use scd_core::harness::{self, OfflineReport, PipelineConfig, RunMode, SimConfig, SweepPoint};
use scd_core::leaksim::GroupTable;
use scd_core::tracekit::{load_dataset, save_dataset, LabeledDataset};
use scd_core::{Error, Result};

const AFTER_HELP: &str = "\
CONFIGURATION
  --config takes a TOML file. Every key is optional; unknown keys are errors.
  Sections and their defaults:
    mode = \"offline\"            offline | realtime-emu
    [paths]       dataset = \"templates.scdt\", model = \"model.json\", reports = \"reports\"
    [simulator]   seed = 1485, n_per_class = 3000, window = 315, noise_sigma = [0.05, 0.05],
                  offset_spread = [0.05, 0.05], dc_jitter = [0.015, 0.015], bleed = 0.25,
                  coupling = 0.5, ...
    [pipeline]    w_star = 50, selector = \"mrmr\", classifier = \"qda\", bins = 32,
                  theta = (from batch and n_per_class), batch = 400,
                  schedule = \"batch\", frac_bits = 12
    [offline]     test_fraction = 0.1, feature_counts = [5, 10, 25, 50, 70], channels,
                  selectors, classifiers
    [timeline]    offline_w_star = 50, realtime_w_star = 70, eval_windows = 1000,
                  realtime_noise_factor = 1.5, offline_adapt = \"mean-and-cov\"
    [sweep]       points_per_cycle = [5, 10, 20, 30, 40, 80, 160],
                  feature_counts = [10, 25, 50, 70, 100], n_per_class = 300,
                  test_fraction = 0.2
  configs/example.toml in the source tree lists every key.

EXIT CODES
  0 ok, 2 configuration error, 3 data error, 4 numeric error";

#[derive(Parser)]
#[command(name = "scd", version, about = "Dual-channel side-channel instruction disassembler", after_help = AFTER_HELP)]
struct Cli {
    /// run configuration (TOML); defaults apply when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// overrides simulator.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// directory for datasets, models and reports
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// more log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// generate the template dataset
    Simulate,
    /// fit normalization, fusion, feature selection and classifiers
    Train,
    /// score the trained model on held-out templates and run the offline study
    Evaluate,
    /// six-point reboot timeline in both modes
    Timeline,
    /// cycle budget of the real-time datapath
    Budget,
    /// accuracy against sampling density
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let ctx = Ctx {
        out: cli.out_dir.clone(),
        cfg,
    };
    match cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Train => train(&ctx),
        Command::Evaluate => evaluate(&ctx),
        Command::Timeline => timeline(&ctx),
        Command::Budget => budget(&ctx),
        Command::Sweep => sweep(&ctx),
    }
}

struct Ctx {
    out: PathBuf,
    cfg: RunConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.out.join(p)
    }

    fn report_dir(&self) -> Result<PathBuf> {
        let dir = self.path(&self.cfg.paths.reports);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            w_star: self.cfg.w_star(),
            ..self.cfg.pipeline.clone()
        }
    }

    fn dataset(&self) -> Result<LabeledDataset> {
        let path = self.path(&self.cfg.paths.dataset);
        info!("loading {}", path.display());
        load_dataset(&path)
    }

    /// Stratified train/test split shared by `train` and `evaluate`.
    fn split(&self, dataset: &LabeledDataset) -> (Vec<usize>, Vec<usize>) {
        harness::split_indices(&dataset.instr_labels(), self.cfg.offline.test_fraction, self.cfg.seed())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = vec![];
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn simulate(ctx: &Ctx) -> Result<()> {
    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let dataset = ctx.cfg.simulator.training_set()?;
    let path = ctx.path(&ctx.cfg.paths.dataset);
    save_dataset(&dataset, &path)?;
    println!(
        "wrote {} windows ({} samples/channel) to {}",
        dataset.len(),
        dataset.window().unwrap_or(0),
        path.display()
    );
    Ok(())
}

fn train(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let (train_idx, _) = ctx.split(&dataset);
    let train = dataset.subset(&train_idx)?;
    let pipe = ctx.pipeline();
    info!("training on {} windows, w* = {}", train.len(), pipe.w_star);
    let mut model = harness::fit_model_with(&train, &GroupTable::avr(), &pipe, Channel::Fused)?;
    if ctx.cfg.mode == RunMode::RealtimeEmu {
        model = model.with_fixed(pipe.frac_bits)?;
    }
    let path = ctx.path(&ctx.cfg.paths.model);
    ModelFile::new(model, ctx.cfg.seed(), ctx.cfg.mode).save(&path)?;
    println!("wrote {} model (w* = {}) to {}", ctx.cfg.mode, pipe.w_star, path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport {
    seed: u64,
    mode: RunMode,
    w_star: usize,
    n_test: usize,
    accuracy: f64,
    group_accuracy: f64,
    offline: OfflineReport,
}

fn evaluate(ctx: &Ctx) -> Result<()> {
    let dataset = ctx.dataset()?;
    let file = ModelFile::load(&ctx.path(&ctx.cfg.paths.model))?;
    if file.seed != ctx.cfg.seed() {
        warn!("model was trained with seed {}, config says {}", file.seed, ctx.cfg.seed());
    }
    let (_, test_idx) = ctx.split(&dataset);
    let test = dataset.subset(&test_idx)?;
    let ev = harness::evaluate_model(&file.model, &test, file.mode)?;
    let table = &file.model.table;
    let truth = test.instr_labels();
    let instr_pred: Vec<usize> = ev.predictions.iter().map(|p| p.1).collect();
    let group_pred: Vec<usize> = ev.predictions.iter().map(|p| p.0).collect();
    let group_truth: Vec<usize> = truth.iter().map(|&t| table.group_of(t)).collect();
    let group_names = (0..table.n_groups()).map(|g| format!("G{}", g + 1)).collect();
    let instr_cm = harness::confusion_matrix(&instr_pred, &truth, table.names().to_vec())?;
    let group_cm = harness::confusion_matrix(&group_pred, &group_truth, group_names)?;

    let offline = harness::run_offline_on(&dataset, ctx.cfg.seed(), &ctx.cfg.pipeline, &ctx.cfg.offline)?;
    let dir = ctx.report_dir()?;
    instr_cm.save_csv(&dir.join("confusion_instr.csv"))?;
    group_cm.save_csv(&dir.join("confusion_group.csv"))?;
    write_with(&dir.join("offline_curves.csv"), |b| offline.write_curves_csv(b))?;
    let report = EvaluateReport {
        seed: ctx.cfg.seed(),
        mode: file.mode,
        w_star: file.model.extractor.dim(),
        n_test: test.len(),
        accuracy: ev.accuracy,
        group_accuracy: ev.group_accuracy,
        offline,
    };
    write_json(&dir.join("evaluate.json"), &report)?;
    println!(
        "{} model on {} held-out windows: accuracy {:.4}, group accuracy {:.4}",
        report.mode, report.n_test, report.accuracy, report.group_accuracy
    );
    println!("reports in {}", dir.display());
    Ok(())
}

fn timeline(ctx: &Ctx) -> Result<()> {
    let report = harness::run_timeline(&ctx.cfg.simulator, &ctx.cfg.pipeline, &ctx.cfg.timeline)?;
    let dir = ctx.report_dir()?;
    write_json(&dir.join("timeline.json"), &report)?;
    let mut csv = String::from("mode,point,session,rate,group_rate\n");
    for mode in [&report.offline, &report.realtime] {
        for p in &mode.points {
            csv.push_str(&format!("{},{},{},{},{}\n", mode.mode, p.point, p.session, p.rate, p.group_rate));
        }
        for (k, log) in mode.adaptation.iter().enumerate() {
            log.save_csv(&dir.join(format!("adaptation_{}_{}.csv", mode.mode, k + 1)))?;
        }
    }
    write_text(&dir.join("timeline.csv"), &csv)?;

    println!("seed {}", report.seed);
    println!("{:<14} {}", "point", (1..=6).map(|p| format!("{p:>7}")).collect::<String>());
    for mode in [&report.offline, &report.realtime] {
        let rates: String = mode.rates().iter().map(|r| format!("{:>7.3}", r)).collect();
        println!("{:<14} {rates}", mode.mode.to_string());
    }
    println!("reports in {}", dir.display());
    Ok(())
}

fn budget(ctx: &Ctx) -> Result<()> {
    let table = GroupTable::avr();
    let max_group = table.group_sizes().into_iter().max().unwrap_or(0);
    let w_star = ctx.cfg.w_star();
    let b = harness::cycle_budget(w_star, table.n_groups(), max_group, harness::DEFAULT_SAMPLING_RATIO);
    let s = b.stages;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "cycle budget, w* = {w_star}");
    for (name, c) in [
        ("combine", s.combine),
        ("inter-group", s.inter),
        ("within-group", s.within),
        ("sort", s.sort),
        ("adjust", s.adjust),
    ] {
        let _ = writeln!(out, "  {name:<13}{c:>5}");
    }
    let _ = writeln!(out, "  {:<13}{:>5}  (deadline {})", "total", b.total, b.deadline);
    let _ = writeln!(
        out,
        "  real time: {}, throughput {:.3} M instructions/s",
        if b.real_time { "yes" } else { "no" },
        b.throughput / 1e6
    );
    let dir = ctx.report_dir()?;
    write_json(&dir.join("budget.json"), &b)
}

#[derive(Serialize)]
struct SweepReport {
    seed: u64,
    points: Vec<SweepPoint>,
}

fn sweep(ctx: &Ctx) -> Result<()> {
    let sw = &ctx.cfg.sweep;
    let sim = SimConfig {
        n_per_class: sw.n_per_class,
        ..ctx.cfg.simulator.clone()
    };
    let points = harness::sampling_sweep(&sim, &ctx.pipeline(), sw.test_fraction, &sw.points_per_cycle, &sw.feature_counts)?;
    let dir = ctx.report_dir()?;
    let mut csv = String::from("points_per_cycle,window,features,accuracy\n");
    for p in &points {
        csv.push_str(&format!("{},{},{},{}\n", p.points_per_cycle, p.window, p.features, p.accuracy));
        println!("{:>4} points/cycle: {:.4}", p.points_per_cycle, p.accuracy);
    }
    write_text(&dir.join("sweep.csv"), &csv)?;
    write_json(
        &dir.join("sweep.json"),
        &SweepReport {
            seed: ctx.cfg.seed(),
            points,
        },
    )
}
