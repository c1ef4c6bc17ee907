use std::path::{Path, PathBuf};

use crate::bilevel::BilevelConfig;
use crate::data::{NoiseKind, NoiseSpec, TransitionMap};
use crate::error::{Error, Result};
use crate::models::{Activation, StudentSpec, TeacherSpec};
use crate::objectives::{CorruptionStrategy, LossWeights};

/// Which trainer a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Teacher-corrected soft labels with meta-gradient teacher updates.
    Emlc,
    /// Plain cross-entropy on the observed noisy labels.
    Ce,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emlc" => Ok(Method::Emlc),
            "ce" => Ok(Method::Ce),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Emlc => "emlc",
            Method::Ce => "ce",
        }
    }
}

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Gaussian blobs around class centers.
    Blobs { dim: usize, spread: f64 },
    /// A labeled CSV file (`f0..f{d-1},label`).
    Csv(PathBuf),
}

/// One experiment, parsed from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub classes: usize,
    pub source: DataSource,
    pub noisy_count: usize,
    pub clean_count: usize,
    pub test_count: usize,
    pub noise: NoiseSpec,
    pub student: StudentSpec,
    pub teacher: TeacherSpec,
    pub bilevel: BilevelConfig,
    pub corruption: CorruptionStrategy,
    pub weights: LossWeights,
    pub method: Method,
    pub epochs: usize,
    /// Evaluate every this many inner steps (and after the last one).
    pub eval_every: usize,
    /// Multiply the inner learning rate by 0.1 halfway through.
    pub lr_step: bool,
    pub audit_gradients: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// The input text, kept verbatim for `config.echo`.
    pub echo: String,
}

/// `(key, default, meaning)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("classes", "4", "number of classes"),
    ("dim", "2", "input dimension of generated blobs"),
    ("spread", "1.0", "blob standard deviation"),
    (
        "data_csv",
        "",
        "labeled CSV to use instead of generated blobs",
    ),
    ("noisy_count", "2000", "noisy training examples"),
    (
        "clean_count",
        "100",
        "clean (trusted) examples, class-balanced",
    ),
    ("test_count", "2000", "held-out test examples"),
    ("noise_kind", "symmetric", "symmetric | asymmetric | none"),
    ("noise_rate", "0.5", "corruption rate in [0, 1]"),
    (
        "noise_map",
        "",
        "asymmetric map as comma list, default circular",
    ),
    ("student_hidden", "32", "student hidden widths, comma list"),
    (
        "teacher_feature",
        "32",
        "teacher feature widths, comma list",
    ),
    ("embed_dim", "16", "teacher label embedding width"),
    ("gate_hidden", "32", "teacher gate hidden width"),
    ("activation", "tanh", "tanh | relu"),
    ("k", "5", "look-ahead window length"),
    ("lr_inner", "0.1", "student learning rate, in (0, 1)"),
    ("lr_meta", "0.1", "teacher learning rate"),
    ("noisy_batch", "64", "noisy batch size"),
    ("clean_batch", "50", "clean batch size"),
    ("epochs", "20", "passes over the noisy set"),
    ("eval_every", "50", "inner steps between evaluations"),
    ("lr_step", "false", "scale lr_inner by 0.1 halfway"),
    (
        "corruption",
        "adversarial",
        "gate BCE corruption: none | random | adversarial",
    ),
    ("weight_ce", "1", "teacher CE weight"),
    ("weight_bce", "1", "gate BCE weight"),
    ("weight_meta", "1", "meta-gradient weight"),
    ("method", "emlc", "emlc | ce"),
    ("audit_gradients", "false", "write gradient_audit.csv"),
    ("seed", "0", "base seed"),
    ("out_dir", "runs", "output directory"),
];

/// Text for `--help` describing every key.
pub fn keys_help() -> String {
    let mut s = String::from("config keys (key = value, # comments):\n");
    for (k, d, m) in KEYS {
        let d = if d.is_empty() { "-" } else { d };
        s.push_str(&format!("  {k:<16} {m} [default {d}]\n"));
    }
    s
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("{key}: bad list entry `{p}`")))
        })
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "{key}: expected a boolean, got `{v}`"
        ))),
    }
}

struct Entries {
    values: Vec<(String, String, usize)>,
}

impl Entries {
    fn raw(&self, key: &str) -> (String, usize) {
        if let Some((_, v, line)) = self.values.iter().rev().find(|(k, _, _)| k == key) {
            return (v.clone(), *line);
        }
        let d = KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .expect("known key")
            .1;
        (d.to_string(), 0)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (v, line) = self.raw(key);
        v.parse().map_err(|_| Error::Config {
            line,
            message: format!("{key}: cannot parse `{v}`"),
        })
    }

    fn with<T>(&self, key: &str, f: impl FnOnce(&str, &str) -> Result<T>) -> Result<T> {
        let (v, line) = self.raw(key);
        f(key, &v).map_err(|e| match e {
            Error::InvalidArgument(message) | Error::Config { message, .. } => {
                Error::Config { line, message }
            }
            other => other,
        })
    }
}

impl ExperimentConfig {
    /// Parse and validate config text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(known, _, _)| *known == k) {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("unknown key `{k}`"),
                });
            }
            values.push((k.to_string(), v.to_string(), i + 1));
        }
        let e = Entries { values };

        let classes: usize = e.get("classes")?;
        let data_csv: String = e.get("data_csv")?;
        let dim: usize = e.get("dim")?;
        let source = if data_csv.is_empty() {
            DataSource::Blobs {
                dim,
                spread: e.get("spread")?,
            }
        } else {
            DataSource::Csv(PathBuf::from(data_csv))
        };
        let rate: f64 = e.get("noise_rate")?;
        let kind: Option<NoiseKind> = e.with("noise_kind", |_, v| match v {
            "none" => Ok(None),
            v => v.parse().map(Some),
        })?;
        let map = e.with("noise_map", |k, v| {
            if v.is_empty() {
                Ok(None)
            } else {
                TransitionMap::new(parse_list(k, v)?).map(Some)
            }
        })?;
        let noise = match kind {
            Some(NoiseKind::Symmetric) => NoiseSpec::symmetric(rate),
            Some(NoiseKind::Asymmetric) => NoiseSpec::asymmetric(rate, map),
            None => NoiseSpec::none(),
        };
        noise.validate(classes)?;

        let activation: Activation = e.with("activation", |_, v| v.parse())?;
        let mut widths = vec![dim];
        widths.extend(e.with("student_hidden", parse_list)?);
        widths.push(classes);
        let student = StudentSpec::new(widths, activation)?;
        let teacher = TeacherSpec::new(
            dim,
            e.with("teacher_feature", parse_list)?,
            classes,
            e.get("embed_dim")?,
            e.get("gate_hidden")?,
            activation,
        )?;

        let noisy_count: usize = e.get("noisy_count")?;
        let noisy_batch: usize = e.get("noisy_batch")?;
        let epochs: usize = e.get("epochs")?;
        let bilevel = BilevelConfig {
            k: e.get("k")?,
            lr_inner: e.get("lr_inner")?,
            lr_meta: e.get("lr_meta")?,
            steps: epochs * noisy_count.div_ceil(noisy_batch.max(1)),
            noisy_batch,
            clean_batch: e.get("clean_batch")?,
        };

        let config = ExperimentConfig {
            classes,
            source,
            noisy_count,
            clean_count: e.get("clean_count")?,
            test_count: e.get("test_count")?,
            noise,
            student,
            teacher,
            bilevel,
            corruption: e.with("corruption", |_, v| v.parse())?,
            weights: LossWeights {
                ce: e.get("weight_ce")?,
                bce: e.get("weight_bce")?,
                meta: e.get("weight_meta")?,
            },
            method: e.with("method", |_, v| v.parse())?,
            epochs,
            eval_every: e.get("eval_every")?,
            lr_step: e.with("lr_step", parse_bool)?,
            audit_gradients: e.with("audit_gradients", parse_bool)?,
            seed: e.get("seed")?,
            out_dir: PathBuf::from(e.get::<String>("out_dir")?),
            echo: text.to_string(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 || self.eval_every == 0 {
            return bad("epochs and eval_every must be positive".into());
        }
        if self.test_count == 0 {
            return bad("test_count must be positive".into());
        }
        if self.bilevel.noisy_batch > self.noisy_count {
            return bad("noisy_batch exceeds noisy_count".into());
        }
        if self.bilevel.clean_batch > self.clean_count {
            return bad("clean_batch exceeds clean_count".into());
        }
        for (name, w) in [
            ("weight_ce", self.weights.ce),
            ("weight_bce", self.weights.bce),
            ("weight_meta", self.weights.meta),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if let DataSource::Blobs { spread, .. } = self.source {
            if !(spread > 0.0 && spread.is_finite()) {
                return bad("spread must be positive".into());
            }
        }
        self.bilevel.validate()
    }

    /// Same experiment with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig {
            seed,
            ..self.clone()
        }
    }
}
