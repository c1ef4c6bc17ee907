//! Training loops, metrics, persistence, and the command-line front end.

mod cli;
mod config;
mod metrics;
mod persist;
mod train;
pub mod verify;

pub use cli::{parse_threads, run_cli, THREADS_ENV};
pub use config::{keys_help, DataSource, ExperimentConfig, Method, KEYS};
pub use metrics::{
    accuracy_from_scores, argmax, argmax_rows, evaluate_accuracy, label_recovery,
    recovery_from_probs, smooth, student_scores_noisy, teacher_soft_labels, MetricsRecord,
    METRICS_COLUMNS,
};
pub use persist::{
    format_float, read_metrics_csv, read_summary, write_metrics, write_metrics_csv,
    write_series_csv, write_summary, RunFiles, Summary,
};
pub use train::{prepare_data, train, train_ce, train_emlc, PreparedData, TrainOutcome};

use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::models::write_checkpoint;

/// Prepare data, train, and write every output file into `dir`.
///
/// On divergence a `diagnostic.txt` with the failing step and the config
/// is left in `dir` before the error is returned.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<(TrainOutcome, RunFiles)> {
    let started = Instant::now();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = prepare_data(config)?;
    let audit = config
        .audit_gradients
        .then(|| dir.join("gradient_audit.csv"));
    let outcome = match train(config, &data, audit.as_deref()) {
        Ok(o) => o,
        Err(e) => {
            if let Error::Diverged { .. } = e {
                let path = dir.join("diagnostic.txt");
                let text = format!(
                    "error: {e}\nseed: {}\n--- config ---\n{}",
                    config.seed, config.echo
                );
                std::fs::write(&path, text).map_err(|io| Error::io(&path, io))?;
            }
            return Err(e);
        }
    };
    let files = write_metrics(
        &outcome.metrics,
        dir,
        &config.echo,
        config.seed,
        started.elapsed().as_secs_f64(),
    )?;
    write_checkpoint(dir.join("student.ckpt"), &config.student, &outcome.student)?;
    if config.method == Method::Emlc {
        write_checkpoint(dir.join("teacher.ckpt"), &config.teacher, &outcome.teacher)?;
    }
    Ok((outcome, files))
}
