use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, ExperimentConfig, Method};
use super::metrics::{
    evaluate_accuracy, label_recovery, recovery_from_probs, student_scores_noisy, MetricsRecord,
};
use crate::autodiff::Tensor;
use crate::bilevel::oracle::UNROLL_LIMIT;
use crate::bilevel::{
    clean_feedback_grad, fpmg, inner_step, meta_step, unrolled_oracle, AuditRow, CleanObjective,
    EmlcProblem, GradientAudit, InnerProblem, SnapshotBuffer,
};
use crate::data::{
    gen_blobs, read_labeled_csv, BatchSampler, DatasetPair, EvalAccess, LabeledExample, LabeledSet,
};
use crate::error::{Error, Result};
use crate::models::{init_params, ModelSpec};
use crate::objectives::{
    clean_meta_grad, clean_meta_loss, gate_bce_loss, teacher_ce_loss, teacher_total_loss,
    CorruptionStrategy,
};

/// Largest teacher for which the audit also runs the unrolled oracle.
const AUDIT_ORACLE_LIMIT: usize = 4096;

/// Step used by the audit's unrolled oracle.
const AUDIT_FD_STEP: f64 = 1e-5;

/// Streams derived from the run seed.
#[derive(Clone, Copy)]
enum Stream {
    Data = 1,
    Student,
    Teacher,
    NoisyBatches,
    CleanBatches,
    Corruption,
    EvalCorruption,
    TestSplit,
}

/// A seed for one independent random stream of a run.
fn sub_seed(seed: u64, stream: Stream) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (stream as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// The three disjoint datasets of a run, with their pool indices.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub pair: DatasetPair,
    pub test: LabeledSet,
    pub test_source: Vec<usize>,
}

/// Build (or load) the example pool and split it into noisy, clean, and
/// test sets.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let seed = sub_seed(config.seed, Stream::Data);
    let c = config.classes;
    let need = config.noisy_count + config.clean_count + config.test_count;
    let pool: Vec<LabeledExample> = match &config.source {
        DataSource::Blobs { dim, spread } => {
            // slack so every class can fill its clean quota
            let per_class = need.div_ceil(c) + config.clean_count.div_ceil(c);
            gen_blobs(c, *dim, per_class, *spread, seed)?
        }
        DataSource::Csv(path) => {
            let (dim, examples) = read_labeled_csv(path)?;
            if dim != config.student.input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "{} has {dim} features, config dim is {}",
                    path.display(),
                    config.student.input_dim()
                )));
            }
            examples
        }
    };
    if pool.len() < need {
        return Err(Error::InvalidArgument(format!(
            "pool of {} examples cannot supply {need}",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(
        config.seed,
        Stream::TestSplit,
    )));
    let test_source: Vec<usize> = order[..config.test_count].to_vec();
    let rest: Vec<usize> = order[config.test_count..].to_vec();
    let test = LabeledSet::new(c, test_source.iter().map(|&i| pool[i].clone()).collect())?;
    let rest_examples: Vec<LabeledExample> = rest.iter().map(|&i| pool[i].clone()).collect();
    let mut pair = DatasetPair::split(
        &rest_examples,
        c,
        config.clean_count,
        config.noisy_count,
        &config.noise,
        seed,
    )?;
    // report sources against the whole pool
    for idx in pair
        .noisy_source
        .iter_mut()
        .chain(pair.clean_source.iter_mut())
    {
        *idx = rest[*idx];
    }
    Ok(PreparedData {
        pair,
        test,
        test_source,
    })
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Student with the best clean-set accuracy over all evaluations.
    pub student: Tensor,
    pub final_student: Tensor,
    pub teacher: Tensor,
    pub metrics: Vec<MetricsRecord>,
    /// Index into `metrics` of the selected student.
    pub selected: usize,
    /// Steps (0-based) after which the teacher parameters differed from
    /// before the step.
    pub teacher_update_steps: Vec<usize>,
    pub peak_snapshots: usize,
    /// Largest pass count spent on one window step by the meta-gradient.
    pub max_passes_per_step: usize,
    /// Pool indices of every example that entered a gradient.
    pub gradient_sources: BTreeSet<usize>,
}

impl TrainOutcome {
    pub fn selected_test_accuracy(&self) -> f64 {
        self.metrics[self.selected].test_accuracy
    }

    pub fn selected_record(&self) -> &MetricsRecord {
        &self.metrics[self.selected]
    }
}

fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged {
            step,
            message: e.to_string(),
        },
        other => other,
    }
}

struct Selection {
    best_clean: f64,
    index: usize,
    student: Option<Tensor>,
}

impl Selection {
    fn new() -> Self {
        Selection {
            best_clean: f64::NEG_INFINITY,
            index: 0,
            student: None,
        }
    }

    fn offer(&mut self, clean_accuracy: f64, index: usize, w: &Tensor) {
        if clean_accuracy > self.best_clean {
            self.best_clean = clean_accuracy;
            self.index = index;
            self.student = Some(w.clone());
        }
    }
}

/// Train according to `config.method`. When `audit` is given, per-meta-step
/// gradient norms are written there.
pub fn train(
    config: &ExperimentConfig,
    data: &PreparedData,
    audit: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    match config.method {
        Method::Emlc => train_emlc(config, data, audit),
        Method::Ce => train_ce(config, data),
    }
}

fn steps_per_epoch(config: &ExperimentConfig) -> usize {
    config.noisy_count.div_ceil(config.bilevel.noisy_batch)
}

fn is_eval_step(config: &ExperimentConfig, t: usize) -> bool {
    (t + 1).is_multiple_of(config.eval_every) || t + 1 == config.bilevel.steps
}

/// Teacher-corrected training with windowed meta-gradient teacher updates.
pub fn train_emlc(
    config: &ExperimentConfig,
    data: &PreparedData,
    audit: Option<&Path>,
) -> Result<TrainOutcome> {
    let (student, teacher) = (&config.student, &config.teacher);
    let noisy = &data.pair.noisy;
    let clean = &data.pair.clean;
    let problem = EmlcProblem {
        student,
        teacher,
        noisy,
    };
    let access = EvalAccess::grant();
    let clean_full = clean.full_batch()?;
    let mut cfg = config.bilevel.clone();
    let total_steps = cfg.steps;
    let spe = steps_per_epoch(config);

    let mut alpha = init_params(teacher, sub_seed(config.seed, Stream::Teacher));
    let mut window = SnapshotBuffer::new(
        cfg.k,
        init_params(student, sub_seed(config.seed, Stream::Student)),
    );
    let mut noisy_sampler = BatchSampler::new(sub_seed(config.seed, Stream::NoisyBatches));
    let mut clean_sampler = BatchSampler::new(sub_seed(config.seed, Stream::CleanBatches));
    let mut corrupt_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, Stream::Corruption));
    let mut audit_out = audit
        .map(|p| GradientAudit::create(p, &teacher.layout()))
        .transpose()?;
    let mut lr_dropped = !config.lr_step;

    let mut out = TrainOutcome {
        student: Tensor::zeros(&[student.param_count()]),
        final_student: Tensor::zeros(&[student.param_count()]),
        teacher: Tensor::zeros(&[teacher.param_count()]),
        metrics: Vec::new(),
        selected: 0,
        teacher_update_steps: Vec::new(),
        peak_snapshots: 0,
        max_passes_per_step: 0,
        gradient_sources: BTreeSet::new(),
    };
    let mut selection = Selection::new();
    let mut audited_oracle = false;

    for t in 0..total_steps {
        let guard = at_step(t);
        if !lr_dropped && window.is_empty() && t >= total_steps / 2 {
            cfg.lr_inner *= 0.1;
            lr_dropped = true;
        }
        let alpha_before = alpha.clone();

        let batch = noisy_sampler.sample(noisy.len(), cfg.noisy_batch)?;
        out.gradient_sources
            .extend(batch.iter().map(|&i| data.pair.noisy_source[i]));
        let next =
            inner_step(&problem, window.head(), &alpha, &batch, cfg.lr_inner).map_err(&guard)?;
        window.advance(batch, next);

        if cfg.is_meta_step(t) {
            let idx = clean_sampler.sample(clean.len(), cfg.clean_batch)?;
            out.gradient_sources
                .extend(idx.iter().map(|&i| data.pair.clean_source[i]));
            let outer = CleanObjective {
                student,
                batch: clean.batch(&idx)?,
            };
            let g_w = clean_feedback_grad(&outer, window.head()).map_err(&guard)?;
            let (meta, stats) = fpmg(&problem, &window, &alpha, &g_w, &cfg).map_err(&guard)?;
            out.max_passes_per_step = out.max_passes_per_step.max(stats.max_passes_per_step());

            if let Some(audit) = audit_out.as_mut() {
                let oracle = if !audited_oracle
                    && problem.teacher_len() <= AUDIT_ORACLE_LIMIT
                    && cfg.k <= UNROLL_LIMIT
                {
                    audited_oracle = true;
                    let start = &window.steps()[0].0;
                    let batches: Vec<Vec<usize>> =
                        window.steps().iter().map(|s| s.1.clone()).collect();
                    Some(
                        unrolled_oracle(
                            &problem,
                            &outer,
                            start,
                            &alpha,
                            &batches,
                            cfg.lr_inner,
                            AUDIT_FD_STEP,
                        )?
                        .grad,
                    )
                } else {
                    None
                };
                audit.write(&AuditRow::new(
                    t,
                    &meta.grad,
                    oracle.as_ref(),
                    &teacher.layout(),
                ))?;
            }

            let (_, supervised) = teacher_total_loss(
                student,
                teacher,
                &alpha,
                window.head(),
                &outer.batch,
                config.corruption,
                config.weights,
                &mut corrupt_rng,
            )
            .map_err(&guard)?;
            let mut total = meta.grad.scale(config.weights.meta);
            total.axpy(1.0, &supervised)?;
            alpha = meta_step(&alpha, &total, cfg.lr_meta)?;
            alpha.check_finite("teacher update").map_err(&guard)?;
            window.reset();
        }
        if alpha != alpha_before {
            out.teacher_update_steps.push(t);
        }

        if is_eval_step(config, t) {
            let w = window.head();
            let meta_loss = clean_meta_loss(student, w, &clean_full).map_err(&guard)?;
            let teacher_ce = teacher_ce_loss(teacher, &alpha, &clean_full).map_err(&guard)?;
            let gate_bce = if config.corruption == CorruptionStrategy::None {
                0.0
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(sub_seed(config.seed, Stream::EvalCorruption));
                gate_bce_loss(teacher, &alpha, &clean_full, config.corruption, &mut rng)
                    .map_err(&guard)?
            };
            let (total, wrong) = label_recovery(teacher, &alpha, noisy, &access)?;
            let record = MetricsRecord {
                step: t + 1,
                epoch: (t + 1).div_ceil(spe),
                meta_loss,
                teacher_ce,
                gate_bce,
                train_label_recovery: total,
                wrong_label_recovery: wrong,
                test_accuracy: evaluate_accuracy(student, w, &data.test)?,
            };
            selection.offer(evaluate_accuracy(student, w, clean)?, out.metrics.len(), w);
            out.metrics.push(record);
        }
    }
    if let Some(audit) = audit_out {
        audit.finish()?;
    }
    out.peak_snapshots = window.peak_retained();
    out.final_student = window.head().clone();
    out.student = selection
        .student
        .unwrap_or_else(|| out.final_student.clone());
    out.selected = selection.index;
    out.teacher = alpha;
    Ok(out)
}

/// Plain cross-entropy on the observed labels with the same student,
/// schedule, and sampling as [`train_emlc`]. Recovery columns report the
/// student's own predictions on the noisy set.
pub fn train_ce(config: &ExperimentConfig, data: &PreparedData) -> Result<TrainOutcome> {
    let student = &config.student;
    let noisy = &data.pair.noisy;
    let clean = &data.pair.clean;
    let access = EvalAccess::grant();
    let clean_full = clean.full_batch()?;
    let total_steps = config.bilevel.steps;
    let spe = steps_per_epoch(config);
    let mut lr = config.bilevel.lr_inner;
    let mut lr_dropped = !config.lr_step;

    let mut w = init_params(student, sub_seed(config.seed, Stream::Student));
    let mut sampler = BatchSampler::new(sub_seed(config.seed, Stream::NoisyBatches));
    let mut out = TrainOutcome {
        student: w.clone(),
        final_student: w.clone(),
        teacher: Tensor::zeros(&[config.teacher.param_count()]),
        metrics: Vec::new(),
        selected: 0,
        teacher_update_steps: Vec::new(),
        peak_snapshots: 1,
        max_passes_per_step: 0,
        gradient_sources: BTreeSet::new(),
    };
    let mut selection = Selection::new();

    for t in 0..total_steps {
        let guard = at_step(t);
        if !lr_dropped && t % config.bilevel.k == 0 && t >= total_steps / 2 {
            lr *= 0.1;
            lr_dropped = true;
        }
        let idx = sampler.sample(noisy.len(), config.bilevel.noisy_batch)?;
        out.gradient_sources
            .extend(idx.iter().map(|&i| data.pair.noisy_source[i]));
        let (_, g) = clean_meta_grad(student, &w, &noisy.batch(&idx)?).map_err(&guard)?;
        g.check_finite("baseline gradient").map_err(&guard)?;
        w.axpy(-lr, &g)?;

        if is_eval_step(config, t) {
            let (total, wrong) =
                recovery_from_probs(&student_scores_noisy(student, &w, noisy)?, noisy, &access)?;
            let record = MetricsRecord {
                step: t + 1,
                epoch: (t + 1).div_ceil(spe),
                meta_loss: clean_meta_loss(student, &w, &clean_full).map_err(&guard)?,
                teacher_ce: f64::NAN,
                gate_bce: f64::NAN,
                train_label_recovery: total,
                wrong_label_recovery: wrong,
                test_accuracy: evaluate_accuracy(student, &w, &data.test)?,
            };
            selection.offer(
                evaluate_accuracy(student, &w, clean)?,
                out.metrics.len(),
                &w,
            );
            out.metrics.push(record);
        }
    }
    out.final_student = w.clone();
    out.student = selection.student.unwrap_or(w);
    out.selected = selection.index;
    Ok(out)
}
