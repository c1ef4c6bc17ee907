use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsRecord, METRICS_COLUMNS};
use crate::error::{Error, Result};

/// Final and best values of a metrics series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub best_total_recovery: Option<f64>,
    pub best_wrong_recovery: Option<f64>,
    pub final_meta_loss: Option<f64>,
    /// Verbatim config text, when known.
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub wall_seconds: Option<f64>,
}

fn max_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.filter(|v| !v.is_nan()).reduce(f64::max)
}

impl Summary {
    pub fn from_series(series: &[MetricsRecord]) -> Self {
        Summary {
            best_accuracy: max_of(series.iter().map(|m| m.test_accuracy)),
            final_accuracy: series.last().map(|m| m.test_accuracy),
            best_total_recovery: max_of(series.iter().map(|m| m.train_label_recovery)),
            best_wrong_recovery: max_of(series.iter().filter_map(|m| m.wrong_label_recovery)),
            final_meta_loss: series.last().map(|m| m.meta_loss),
            config: None,
            seed: None,
            wall_seconds: None,
        }
    }
}

/// Float with 9 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else {
        format!("{v}")
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Write `metrics.csv`; an empty series gives a header-only file.
pub fn write_metrics_csv(path: impl AsRef<Path>, series: &[MetricsRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_COLUMNS)
        .map_err(|e| csv_err(path, e))?;
    for m in series {
        w.write_record([
            m.step.to_string(),
            m.epoch.to_string(),
            format_float(m.meta_loss),
            format_float(m.teacher_ce),
            format_float(m.gate_bce),
            format_float(m.train_label_recovery),
            m.wrong_label_recovery.map(format_float).unwrap_or_default(),
            format_float(m.test_accuracy),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Parse a file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(METRICS_COLUMNS) {
        return Err(Error::format(
            path,
            format!("expected header {}", METRICS_COLUMNS.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |col: &str| Error::format(path, format!("row {}: bad {col}", row + 1));
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(METRICS_COLUMNS[i]));
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(METRICS_COLUMNS[i]));
        out.push(MetricsRecord {
            step: int(0)?,
            epoch: int(1)?,
            meta_loss: float(2)?,
            teacher_ce: float(3)?,
            gate_bce: float(4)?,
            train_label_recovery: float(5)?,
            wrong_label_recovery: if rec[6].is_empty() {
                None
            } else {
                Some(float(6)?)
            },
            test_accuracy: float(7)?,
        });
    }
    Ok(out)
}

pub fn write_summary(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let path = path.as_ref();
    let text =
        serde_json::to_string_pretty(summary).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Files written for one run.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub config_echo: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        RunFiles {
            metrics: dir.join("metrics.csv"),
            summary: dir.join("summary.json"),
            config_echo: dir.join("config.echo"),
        }
    }
}

/// Write `metrics.csv`, `summary.json`, and `config.echo` into `dir`.
pub fn write_metrics(
    series: &[MetricsRecord],
    dir: impl AsRef<Path>,
    config_echo: &str,
    seed: u64,
    wall_seconds: f64,
) -> Result<RunFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = RunFiles::in_dir(dir);
    write_metrics_csv(&files.metrics, series)?;
    let summary = Summary {
        config: Some(config_echo.to_string()),
        seed: Some(seed),
        wall_seconds: Some(wall_seconds),
        ..Summary::from_series(series)
    };
    write_summary(&files.summary, &summary)?;
    std::fs::write(&files.config_echo, config_echo).map_err(io_err(&files.config_echo))?;
    Ok(files)
}

/// Plottable series: step, smoothed meta-loss, and the rate columns.
pub fn write_series_csv(
    path: impl AsRef<Path>,
    series: &[MetricsRecord],
    smooth_width: usize,
) -> Result<()> {
    let path = path.as_ref();
    let losses: Vec<f64> = series.iter().map(|m| m.meta_loss).collect();
    let smoothed = super::metrics::smooth(&losses, smooth_width);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "step",
        "meta_loss",
        "meta_loss_smoothed",
        "train_label_recovery",
        "wrong_label_recovery",
        "test_accuracy",
    ])
    .map_err(|e| csv_err(path, e))?;
    for (m, s) in series.iter().zip(smoothed) {
        w.write_record([
            m.step.to_string(),
            format_float(m.meta_loss),
            format_float(s),
            format_float(m.train_label_recovery),
            m.wrong_label_recovery.map(format_float).unwrap_or_default(),
            format_float(m.test_accuracy),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize, acc: f64, wrong: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            step,
            epoch: 1,
            meta_loss: 1.25,
            teacher_ce: 0.5,
            gate_bce: 0.6875,
            train_label_recovery: 0.8,
            wrong_label_recovery: wrong,
            test_accuracy: acc,
        }
    }

    #[test]
    fn empty_series_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            format!("{}\n", METRICS_COLUMNS.join(","))
        );
        assert!(read_metrics_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_and_best() {
        let dir = tempfile::tempdir().unwrap();
        let series = vec![
            record(10, 0.5, Some(0.25)),
            record(20, 0.75, None),
            record(30, 0.625, Some(0.5)),
        ];
        let files = write_metrics(&series, dir.path(), "k = 5\n", 7, 1.5).unwrap();
        assert_eq!(read_metrics_csv(&files.metrics).unwrap(), series);
        let s = read_summary(&files.summary).unwrap();
        assert_eq!(s.best_accuracy, Some(0.75));
        assert_eq!(s.final_accuracy, Some(0.625));
        assert_eq!(s.best_wrong_recovery, Some(0.5));
        assert_eq!(s.seed, Some(7));
        assert_eq!(
            std::fs::read_to_string(&files.config_echo).unwrap(),
            "k = 5\n"
        );
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_float(0.123456789123), "1.23456789e-1");
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn summary_keys() {
        let v = serde_json::to_value(Summary::from_series(&[record(1, 0.5, None)])).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        for k in [
            "best_accuracy",
            "final_accuracy",
            "best_total_recovery",
            "best_wrong_recovery",
            "final_meta_loss",
            "config",
            "seed",
            "wall_seconds",
        ] {
            assert!(keys.iter().any(|x| *x == k), "{k}");
        }
    }
}
