use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::config::{keys_help, ExperimentConfig};
use super::persist::{read_metrics_csv, read_summary, write_series_csv, write_summary, Summary};
use super::verify::{run_suite, SuiteSize};
use crate::data::{
    inject, read_labeled_csv, write_noisy_csv, EvalAccess, NoiseSpec, TransitionMap,
};
use crate::error::{Error, Result};
use crate::par;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "EMLC_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "emlc",
    version,
    about = "Meta label correction on noisy datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Size {
    Tiny,
    Small,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Symmetric,
    Asymmetric,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config file.
    #[command(after_help = keys_help())]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Run this many consecutive seeds, each in `seed-<n>/`.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
    },
    /// Check meta-gradients against reference computations.
    VerifyGradients {
        #[arg(long, value_enum, default_value_t = Size::Tiny)]
        size: Size,
        /// Random draws per check.
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
    },
    /// Corrupt the labels of a labeled CSV.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        rate: f64,
        /// Number of classes; defaults to the largest label + 1.
        #[arg(long)]
        classes: Option<usize>,
        /// Asymmetric map as a comma list; defaults to `c -> c+1 mod C`.
        #[arg(long)]
        map: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a metrics CSV into JSON and a plottable series.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Defaults to `report.json` next to the metrics file.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Defaults to `series.csv` next to the metrics file.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Moving-average width for the meta-loss.
        #[arg(long, default_value_t = 5)]
        smooth: usize,
    },
}

/// Worker threads from the environment value; unset means 1.
pub fn parse_threads(value: Option<&str>) -> Result<usize> {
    match value {
        None => Ok(1),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

enum Failure {
    Usage(String),
    Verification,
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

/// Run the command line `argv` (including the program name) and return
/// the process exit code: 0 on success, 1 on failed verification or a
/// runtime failure, 2 on bad arguments.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match parse_threads(std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match par::with_threads(threads, || dispatch(cli.command)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Verification) => 1,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Train {
            config,
            seed,
            out_dir,
            seeds,
        } => train(&config, seed, out_dir, seeds),
        Command::VerifyGradients { size, seeds } => {
            let size = match size {
                Size::Tiny => SuiteSize::Tiny,
                Size::Small => SuiteSize::Small,
            };
            let checks = run_suite(size, seeds as usize)?;
            let mut out = std::io::stdout().lock();
            for c in &checks {
                let _ = writeln!(out, "{c}");
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::InjectNoise {
            input,
            output,
            kind,
            rate,
            classes,
            map,
            seed,
        } => Ok(inject_noise(
            &input,
            &output,
            kind,
            rate,
            classes,
            map.as_deref(),
            seed,
        )?),
        Command::Report {
            metrics,
            summary,
            series,
            smooth,
        } => Ok(report(&metrics, summary, series, smooth)?),
    }
}

fn train(
    config: &Path,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    seeds: u64,
) -> std::result::Result<(), Failure> {
    let base = ExperimentConfig::load(config)?;
    let first = seed.unwrap_or(base.seed);
    let root = out_dir.unwrap_or_else(|| base.out_dir.clone());
    let runs: Vec<(ExperimentConfig, PathBuf)> = (0..seeds)
        .map(|i| {
            let s = first + i;
            let dir = if seeds == 1 {
                root.clone()
            } else {
                root.join(format!("seed-{s}"))
            };
            (base.with_seed(s), dir)
        })
        .collect();
    // seeds share nothing but the output root
    let results = par::map_slice(&runs, |(c, dir)| {
        super::run_experiment(c, dir).map(|(o, _)| o)
    });
    let mut failure = None;
    for ((c, dir), r) in runs.iter().zip(results) {
        match r {
            Ok(o) => {
                let rec = o.selected_record();
                let wrong = rec
                    .wrong_label_recovery
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "seed {}: test accuracy {:.4}, wrong-label recovery {wrong} (step {}) -> {}",
                    c.seed,
                    rec.test_accuracy,
                    rec.step,
                    dir.display()
                );
            }
            Err(e) => {
                eprintln!("seed {}: {e}", c.seed);
                failure.get_or_insert(e);
            }
        }
    }
    match failure {
        None => Ok(()),
        Some(e) => Err(e.into()),
    }
}

fn inject_noise(
    input: &Path,
    output: &Path,
    kind: Kind,
    rate: f64,
    classes: Option<usize>,
    map: Option<&str>,
    seed: u64,
) -> Result<()> {
    let (_, examples) = read_labeled_csv(input)?;
    let classes = classes.unwrap_or_else(|| examples.iter().map(|e| e.y + 1).max().unwrap_or(0));
    if let Some(e) = examples.iter().find(|e| e.y >= classes) {
        return Err(Error::LabelOutOfRange {
            label: e.y,
            classes,
        });
    }
    let spec = match kind {
        Kind::Symmetric => NoiseSpec::symmetric(rate),
        Kind::Asymmetric => {
            let map = map
                .map(|m| {
                    m.split(',')
                        .map(|p| {
                            p.trim()
                                .parse()
                                .map_err(|_| Error::InvalidArgument(format!("bad map entry `{p}`")))
                        })
                        .collect::<Result<Vec<usize>>>()
                        .and_then(TransitionMap::new)
                })
                .transpose()?;
            NoiseSpec::asymmetric(rate, map)
        }
    };
    let noisy = inject(&examples, &spec, classes, seed)?;
    write_noisy_csv(output, &noisy, &EvalAccess::grant())?;
    let access = EvalAccess::grant();
    let wrong = noisy.iter().filter(|e| e.is_corrupted(&access)).count();
    println!(
        "{} examples, {wrong} labels changed -> {}",
        noisy.len(),
        output.display()
    );
    Ok(())
}

fn report(
    metrics: &Path,
    summary: Option<PathBuf>,
    series_path: Option<PathBuf>,
    smooth: usize,
) -> Result<()> {
    let series = read_metrics_csv(metrics)?;
    let dir = metrics.parent().unwrap_or(Path::new("."));
    let mut s = Summary::from_series(&series);
    if let Ok(prev) = read_summary(dir.join("summary.json")) {
        s.seed = prev.seed;
        s.wall_seconds = prev.wall_seconds;
    }
    s.config = std::fs::read_to_string(dir.join("config.echo")).ok();
    let summary = summary.unwrap_or_else(|| dir.join("report.json"));
    let series_path = series_path.unwrap_or_else(|| dir.join("series.csv"));
    write_summary(&summary, &s)?;
    write_series_csv(&series_path, &series, smooth)?;
    println!(
        "{} rows -> {}, {}",
        series.len(),
        summary.display(),
        series_path.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threads_default_and_validation() {
        assert_eq!(parse_threads(None).unwrap(), 1);
        assert_eq!(parse_threads(Some("4")).unwrap(), 4);
        assert!(parse_threads(Some("0")).is_err());
        assert!(parse_threads(Some("many")).is_err());
    }

    #[test]
    fn bad_arguments_exit_2() {
        assert_eq!(run_cli(["emlc", "train", "--bogus"]), 2);
        assert_eq!(run_cli(["emlc"]), 2);
        assert_eq!(run_cli(["emlc", "frobnicate"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run_cli(["emlc", "--help"]), 0);
    }
}
