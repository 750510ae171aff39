//! Command-line driver: dataset simulation, kernel training, candidate
//! detection, ensembling, the full experiment protocol, and report
//! summarization.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dmia_core::attack::{
    detect_candidate, ensemble_detect, train_deep_kernel_from_pool, DetectConfig, DetectionReport,
    EnsembleReport, TrainConfig,
};
use dmia_core::error::Error;
use dmia_core::experiment::{run_experiment, with_thread_pool, ExperimentConfig, RunReport};
use dmia_core::io::{
    load_kernel, load_matrix, read_json, save_kernel, save_matrix, write_json, Format,
};
use dmia_core::numeric::RngStream;
use dmia_core::world::{build_world, EncoderHandle, WorldSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dmia",
    about = "Distribution-level membership inference for distilled generative models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed override applied to the loaded configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dataset format for matrix files.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    /// Worker threads (falls back to DMIA_THREADS, then the rayon default).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a synthetic distillation world and export its datasets.
    Simulate(SimulateArgs),
    /// Train one deep kernel from dataset files and persist it.
    TrainKernel(TrainKernelArgs),
    /// Run candidate detection with a saved kernel.
    Detect(DetectArgs),
    /// Train an ensemble of kernels and detect a candidate dataset.
    Ensemble(EnsembleArgs),
    /// Run the full experiment protocol from a JSON config.
    Experiment(ExperimentArgs),
    /// Summarize a saved experiment report to CSV and histogram JSON.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// World spec JSON; the reference world when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainKernelArgs {
    /// Training config JSON; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Non-member dataset file.
    #[arg(long)]
    non: PathBuf,
    /// Student-generated pool file.
    #[arg(long)]
    gen: PathBuf,
    /// Encoder JSON; identity when omitted.
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Detection config JSON; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Saved kernel JSON.
    #[arg(long)]
    kernel: PathBuf,
    /// Anchor feature batch file.
    #[arg(long)]
    anchor: PathBuf,
    /// Candidate dataset file.
    #[arg(long)]
    candidate: PathBuf,
    /// Non-member dataset file.
    #[arg(long)]
    non: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    /// Ensemble config JSON; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    non: PathBuf,
    /// Student-generated pool file.
    #[arg(long)]
    gen: PathBuf,
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment config JSON; the reference protocol when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Saved report.json.
    #[arg(long)]
    input: PathBuf,
}

/// Ensemble subcommand configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleCliConfig {
    pub train: TrainConfig,
    pub detect: DetectConfig,
    pub ensemble_size: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for EnsembleCliConfig {
    fn default() -> Self {
        EnsembleCliConfig {
            train: TrainConfig::default(),
            detect: DetectConfig::default(),
            ensemble_size: 5,
            tau: 0.7,
            seed: 0,
        }
    }
}

/// Detection envelope written by `detect`.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionEnvelope {
    pub schema_version: u32,
    pub config: DetectConfig,
    pub report: DetectionReport,
}

/// Ensemble envelope written by `ensemble`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EnsembleEnvelope {
    pub schema_version: u32,
    pub config: EnsembleCliConfig,
    pub report: EnsembleReport,
}

/// Training envelope written by `train-kernel` next to the kernel itself.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainingEnvelope {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub losses: Vec<f64>,
}

pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap's rendering includes the usage text; --help/--version land
            // here too and exit cleanly.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let format = match Format::parse(&cli.format) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("DMIA_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let result = match &cli.command {
        Command::Simulate(a) => run_simulate(a, &cli, format),
        Command::TrainKernel(a) => run_train_kernel(a, &cli, format),
        Command::Detect(a) => run_detect(a, &cli),
        Command::Ensemble(a) => run_ensemble(a, &cli, threads),
        Command::Experiment(a) => run_experiment_cmd(a, &cli, threads),
        Command::Report(a) => run_report(a, &cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            }
        }
    }
}

fn load_encoder(path: &Option<PathBuf>) -> Result<EncoderHandle, Error> {
    match path {
        Some(p) => read_json(p),
        None => Ok(EncoderHandle::Identity),
    }
}

fn load_config_or<T: serde::de::DeserializeOwned>(
    path: &Option<PathBuf>,
    default: impl FnOnce() -> T,
) -> Result<T, Error> {
    match path {
        Some(p) => read_json(p),
        None => Ok(default()),
    }
}

fn ensure_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run_simulate(args: &SimulateArgs, cli: &Cli, format: Format) -> Result<(), Error> {
    let mut spec: WorldSpec =
        load_config_or(&args.config, || WorldSpec::reference(cli.seed.unwrap_or(0)))?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let world = build_world(&spec)?;
    ensure_out(&cli.out)?;
    let ext = format.extension();
    save_matrix(
        &cli.out.join(format!("mem.{ext}")),
        &world.d_mem.matrix,
        format,
    )?;
    save_matrix(
        &cli.out.join(format!("non.{ext}")),
        &world.d_non.matrix,
        format,
    )?;
    save_matrix(
        &cli.out.join(format!("teacher_gen.{ext}")),
        &world.d_teacher_gen.matrix,
        format,
    )?;
    save_matrix(
        &cli.out.join(format!("student_gen.{ext}")),
        &world.d_student_gen.matrix,
        format,
    )?;
    write_json(&cli.out.join("world.json"), &spec)?;
    write_json(&cli.out.join("encoder.json"), &world.encoder)?;
    println!(
        "simulated world seed {} into {} ({} member, {} non-member, {} generated rows)",
        spec.seed,
        cli.out.display(),
        world.d_mem.rows(),
        world.d_non.rows(),
        world.d_student_gen.rows()
    );
    Ok(())
}

fn run_train_kernel(args: &TrainKernelArgs, cli: &Cli, format: Format) -> Result<(), Error> {
    let mut cfg: TrainConfig = load_config_or(&args.config, TrainConfig::default)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let non = load_matrix(&args.non, format)?;
    let gen = load_matrix(&args.gen, format)?;
    let encoder = load_encoder(&args.encoder)?;
    let trained =
        train_deep_kernel_from_pool(&non, &gen, &encoder, &cfg, RngStream::new(cfg.seed))?;
    ensure_out(&cli.out)?;
    save_kernel(&cli.out.join("kernel.json"), &trained.kernel)?;
    save_matrix(
        &cli.out.join(format!("anchor.{}", format.extension())),
        &trained.anchor,
        format,
    )?;
    write_json(
        &cli.out.join("training.json"),
        &TrainingEnvelope {
            schema_version: 1,
            config: cfg,
            losses: trained.losses.clone(),
        },
    )?;
    println!(
        "trained kernel ({} epochs, loss {:.6} -> {:.6}) into {}",
        trained.losses.len(),
        trained.losses.first().unwrap(),
        trained.losses.last().unwrap(),
        cli.out.display()
    );
    Ok(())
}

fn run_detect(args: &DetectArgs, cli: &Cli) -> Result<(), Error> {
    let format = Format::parse(&cli.format)?;
    let mut cfg: DetectConfig = load_config_or(&args.config, DetectConfig::default)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let kernel = load_kernel(&args.kernel)?;
    let anchor = load_matrix(&args.anchor, format)?;
    let candidate = load_matrix(&args.candidate, format)?;
    let non = load_matrix(&args.non, format)?;
    let encoder = load_encoder(&args.encoder)?;
    let report = detect_candidate(
        &candidate,
        &non,
        &anchor,
        &kernel,
        &encoder,
        &cfg,
        RngStream::new(cfg.seed),
    )?;
    ensure_out(&cli.out)?;
    write_json(
        &cli.out.join("detection.json"),
        &DetectionEnvelope {
            schema_version: 1,
            config: cfg,
            report: report.clone(),
        },
    )?;
    println!(
        "p_mem {:.4} over {} trials",
        report.p_mem,
        report.trials.len()
    );
    Ok(())
}

fn run_ensemble(args: &EnsembleArgs, cli: &Cli, threads: Option<usize>) -> Result<(), Error> {
    let format = Format::parse(&cli.format)?;
    let mut cfg: EnsembleCliConfig = load_config_or(&args.config, EnsembleCliConfig::default)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let candidate = load_matrix(&args.candidate, format)?;
    let non = load_matrix(&args.non, format)?;
    let gen = load_matrix(&args.gen, format)?;
    let encoder = load_encoder(&args.encoder)?;
    let report = with_thread_pool(threads, || {
        ensemble_detect(
            &candidate,
            &non,
            &gen,
            &encoder,
            cfg.ensemble_size,
            cfg.tau,
            &cfg.train,
            &cfg.detect,
            RngStream::new(cfg.seed),
        )
    })??;
    ensure_out(&cli.out)?;
    write_json(
        &cli.out.join("ensemble.json"),
        &EnsembleEnvelope {
            schema_version: 1,
            config: cfg,
            report: report.clone(),
        },
    )?;
    println!(
        "ensemble p_mem {:.4} over {} kernels -> decision {}",
        report.p_mem_mean,
        report.members.len(),
        report.decision as u8
    );
    Ok(())
}

fn run_experiment_cmd(
    args: &ExperimentArgs,
    cli: &Cli,
    threads: Option<usize>,
) -> Result<(), Error> {
    let mut cfg: ExperimentConfig = load_config_or(&args.config, || {
        ExperimentConfig::reference(cli.seed.unwrap_or(0))
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.world.seed = seed;
    }
    let report = match run_experiment(&cfg, threads) {
        Ok(report) => report,
        Err(e) => {
            // A failed member aborts the run; leave a partial-run marker so
            // downstream tooling never mistakes the directory for a finished
            // experiment.
            if ensure_out(&cli.out).is_ok() {
                let _ = write_json(
                    &cli.out.join("failed.json"),
                    &serde_json::json!({ "partial": true, "error": e.to_string() }),
                );
            }
            return Err(e);
        }
    };
    report.write_to_dir(&cli.out)?;
    println!(
        "experiment seed {} finished in {:.1}s; report at {}",
        cfg.seed,
        report.wall_clock_seconds,
        cli.out.join("report.json").display()
    );
    for r in &report.per_ratio {
        println!(
            "  rho {:.2}: asr {:.3} auc {:.3} tpr@5% {:.3}",
            r.ratio, r.asr, r.auc, r.tpr_at_fpr_05
        );
    }
    Ok(())
}

fn run_report(args: &ReportArgs, cli: &Cli) -> Result<(), Error> {
    let report = RunReport::read_from_file(&args.input)?;
    ensure_out(&cli.out)?;
    std::fs::write(cli.out.join("metrics.csv"), report.metrics_csv_string())?;
    std::fs::write(cli.out.join("baseline.csv"), report.baseline_csv_string())?;
    write_json(&cli.out.join("histograms.json"), &report.histograms)?;
    std::fs::write(
        cli.out.join("histograms.csv"),
        report.histograms_csv_string(),
    )?;
    println!(
        "summarized {} ratios into {}",
        report.per_ratio.len(),
        cli.out.display()
    );
    Ok(())
}
