//! Argument parsing and command dispatch.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ModeName, RunConfig};
use crate::error::{CliError, Result};
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "paced-forest", version, about = "Self-paced deep regression forests with fairness-aware ranking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $PACED_FOREST_OUT, else ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// drf, sp, spu or spu-robust; overrides the configured mode.
    #[arg(long)]
    pub mode: Option<String>,
    /// Worker threads for per-sample evaluation.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (data.csv) and its manifest.
    Generate(Common),
    /// Train one model and write a run directory run-{seed}.
    Train(TrainArgs),
    /// Re-evaluate a run's checkpoint and print the metrics as JSON.
    Evaluate {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Pace checkpoint to load (default: the last).
        #[arg(long)]
        pace: Option<usize>,
        /// CSV to evaluate on (default: the run's test.csv).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "y")]
        target_column: String,
        /// Write the JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train spu-robust once per cap proportion and tabulate final metrics.
    SweepCap {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated cap proportions, e.g. 0,0.1,0.2.
        #[arg(long, value_delimiter = ',', required = true)]
        proportions: Vec<f64>,
        /// Comma-separated seeds (default: the configured seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Train once per weighting scheme and tabulate final metrics.
    SweepSchemes {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Merge paces.csv and metrics.json of runs into a long-format table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output file; `.json` writes JSON, anything else CSV. Default: standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common, mode: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(m) = mode {
        cfg.mode = ModeName::parse(m)?;
    }
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
            }
            std::fs::write(p, text).map_err(CliError::io(p))
        }
        None => stdout.write_all(text.as_bytes()).map_err(CliError::io("<stdout>")),
    }
}

fn seeds_or(seeds: &[u64], cfg: &RunConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds.to_vec()
    }
}

/// Runs one parsed command, writing human output to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = load_config(&common, None)?;
            let dir = match &common.out {
                Some(p) => p.clone(),
                None => run::output_root(None).join(format!("data-{}", cfg.seed)),
            };
            let m = run::generate(&cfg, &dir)?;
            writeln!(stdout, "{} ({} samples)", dir.join("data.csv").display(), m.n).map_err(CliError::io("<stdout>"))?;
        }
        Command::Train(args) => {
            let cfg = load_config(&args.common, args.mode.as_deref())?;
            let root = run::output_root(args.common.out.as_deref());
            let res = run::train_run(&cfg, &root, args.parallel, "train")?;
            let l = res.final_log();
            writeln!(
                stdout,
                "{}: {} paces, final MAE {:.4}, FAIR {}",
                res.dir.display(),
                res.outcome.paces.len(),
                l.mae,
                l.fair.map_or("n/a".into(), |f| format!("{f:.4}"))
            )
            .map_err(CliError::io("<stdout>"))?;
        }
        Command::Evaluate {
            run: dir,
            pace,
            data,
            target_column,
            out,
        } => {
            let report = run::evaluate_run(&dir, pace, data.as_deref().map(|p| (p, target_column.as_str())))?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            emit(&text, out.as_deref(), stdout)?;
        }
        Command::SweepCap { train, proportions, seeds } => {
            let cfg = load_config(&train.common, train.mode.as_deref())?;
            let root = run::output_root(train.common.out.as_deref());
            let rows = run::sweep_cap(&cfg, &proportions, &seeds_or(&seeds, &cfg), &root, train.parallel)?;
            let text = run::cap_csv(&rows);
            emit(&text, Some(&root.join("sweep_cap.csv")), stdout)?;
            emit(&text, None, stdout)?;
        }
        Command::SweepSchemes { train, seeds } => {
            let cfg = load_config(&train.common, train.mode.as_deref())?;
            let root = run::output_root(train.common.out.as_deref());
            let rows = run::sweep_schemes(&cfg, &seeds_or(&seeds, &cfg), &root, train.parallel)?;
            let text = run::scheme_csv(&rows);
            emit(&text, Some(&root.join("sweep_schemes.csv")), stdout)?;
            emit(&text, None, stdout)?;
        }
        Command::Report { runs, out } => {
            let rows = run::report(&runs)?;
            let text = match &out {
                Some(p) if p.extension().is_some_and(|e| e == "json") => {
                    serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n"
                }
                _ => run::report_csv(&rows),
            };
            emit(&text, out.as_deref(), stdout)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; errors are printed to standard error.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { CliError::EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
