use crate::autodiff::Tensor;
use crate::data::{EvalAccess, LabeledSet, NoisySet};
use crate::error::{Error, Result};
use crate::models::{student_forward, teacher_forward, StudentSpec, TeacherSpec};

/// Examples per forward pass when scoring a whole dataset.
const CHUNK: usize = 512;

/// One evaluation point of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    /// Student cross-entropy on the full clean set.
    pub meta_loss: f64,
    /// Teacher classifier cross-entropy on the clean set; NaN without a teacher.
    pub teacher_ce: f64,
    /// Gate BCE on the clean set; NaN without a teacher, 0 without corruption.
    pub gate_bce: f64,
    pub train_label_recovery: f64,
    /// Absent when the noisy set has no corrupted example.
    pub wrong_label_recovery: Option<f64>,
    pub test_accuracy: f64,
}

/// Column order of `metrics.csv`.
pub const METRICS_COLUMNS: [&str; 8] = [
    "step",
    "epoch",
    "meta_loss",
    "teacher_ce",
    "gate_bce",
    "train_label_recovery",
    "wrong_label_recovery",
    "test_accuracy",
];

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`argmax`] of a `[n, C]` score matrix.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows()).map(|r| argmax(scores.row(r))).collect()
}

/// `(total, wrong)` recovery of per-example soft labels `q: [n, C]`
/// against the hidden true labels.
pub fn recovery_from_probs(
    q: &Tensor,
    noisy: &NoisySet,
    access: &EvalAccess,
) -> Result<(f64, Option<f64>)> {
    if q.shape() != [noisy.len(), noisy.classes] {
        return Err(Error::ShapeMismatch {
            op: "label_recovery",
            expected: vec![noisy.len(), noisy.classes],
            found: q.shape().to_vec(),
        });
    }
    if noisy.is_empty() {
        return Err(Error::InvalidArgument(
            "label recovery on an empty set".into(),
        ));
    }
    let (mut hit, mut wrong, mut wrong_hit) = (0usize, 0usize, 0usize);
    for (r, e) in noisy.examples.iter().enumerate() {
        let ok = argmax(q.row(r)) == e.true_label(access);
        hit += usize::from(ok);
        if e.is_corrupted(access) {
            wrong += 1;
            wrong_hit += usize::from(ok);
        }
    }
    let total = hit as f64 / noisy.len() as f64;
    let wrong_rate = (wrong > 0).then(|| wrong_hit as f64 / wrong as f64);
    Ok((total, wrong_rate))
}

fn chunked(
    n: usize,
    mut f: impl FnMut(std::ops::Range<usize>) -> Result<Tensor>,
) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut cols = 0;
    for start in (0..n).step_by(CHUNK) {
        let part = f(start..(start + CHUNK).min(n))?;
        cols = part.cols();
        rows.extend_from_slice(part.data());
    }
    Tensor::matrix(n, cols, rows)
}

/// Teacher soft labels on the whole noisy set.
pub fn teacher_soft_labels(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    noisy: &NoisySet,
) -> Result<Tensor> {
    chunked(noisy.len(), |range| {
        let idx: Vec<usize> = range.collect();
        let b = noisy.batch(&idx)?;
        Ok(teacher_forward(teacher, alpha, &b.x, &b.labels)?.q)
    })
}

/// Fraction of noisy examples whose teacher label argmax equals the true
/// label, overall and among the corrupted ones.
pub fn label_recovery(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    noisy: &NoisySet,
    access: &EvalAccess,
) -> Result<(f64, Option<f64>)> {
    recovery_from_probs(&teacher_soft_labels(teacher, alpha, noisy)?, noisy, access)
}

/// Student log-probabilities on the whole noisy set.
pub fn student_scores_noisy(student: &StudentSpec, w: &Tensor, noisy: &NoisySet) -> Result<Tensor> {
    chunked(noisy.len(), |range| {
        let idx: Vec<usize> = range.collect();
        student_forward(student, w, &noisy.batch(&idx)?.x)
    })
}

/// Top-1 accuracy of a score matrix against `labels`.
pub fn accuracy_from_scores(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    if scores.rows() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            expected: vec![labels.len()],
            found: vec![scores.rows()],
        });
    }
    let hits = argmax_rows(scores)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Top-1 accuracy of the student on a labeled set.
pub fn evaluate_accuracy(student: &StudentSpec, w: &Tensor, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("accuracy on an empty set".into()));
    }
    let scores = chunked(set.len(), |range| {
        let idx: Vec<usize> = range.collect();
        student_forward(student, w, &set.batch(&idx)?.x)
    })?;
    let labels: Vec<usize> = set.examples.iter().map(|e| e.y).collect();
    accuracy_from_scores(&scores, &labels)
}

/// Trailing moving average with window `width`.
pub fn smooth(values: &[f64], width: usize) -> Vec<f64> {
    let width = width.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(width);
            let s = &values[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NoisyExample;

    fn noisy(rows: &[(usize, usize)]) -> NoisySet {
        NoisySet::new(
            4,
            rows.iter()
                .map(|&(obs, y)| NoisyExample::new(vec![0.0, 0.0], obs, y))
                .collect(),
        )
        .unwrap()
    }

    fn onehots(labels: &[usize], classes: usize) -> Tensor {
        let mut d = vec![0.0; labels.len() * classes];
        for (r, &y) in labels.iter().enumerate() {
            d[r * classes + y] = 1.0;
        }
        Tensor::matrix(labels.len(), classes, d).unwrap()
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    #[test]
    fn recovery_stub_teachers() {
        let access = EvalAccess::grant();
        let rows = [(0, 0), (1, 2), (3, 3), (2, 1), (0, 1)];
        let set = noisy(&rows);
        let truth: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let observed: Vec<usize> = rows.iter().map(|r| r.0).collect();
        assert_eq!(
            recovery_from_probs(&onehots(&truth, 4), &set, &access).unwrap(),
            (1.0, Some(1.0))
        );
        assert_eq!(
            recovery_from_probs(&onehots(&observed, 4), &set, &access).unwrap(),
            (2.0 / 5.0, Some(0.0))
        );
        let uniform = Tensor::full(&[5, 4], 0.25);
        let (total, _) = recovery_from_probs(&uniform, &set, &access).unwrap();
        assert_eq!(total, 1.0 / 5.0);
    }

    #[test]
    fn wrong_rate_absent_without_corruption() {
        let set = noisy(&[(0, 0), (2, 2)]);
        let r = recovery_from_probs(&onehots(&[0, 2], 4), &set, &EvalAccess::grant()).unwrap();
        assert_eq!(r, (1.0, None));
    }

    #[test]
    fn accuracy_fixture() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3, 0, 1];
        let preds = [0, 1, 2, 0, 0, 3, 2, 3, 1, 1];
        assert_eq!(
            accuracy_from_scores(&onehots(&preds, 4), &labels).unwrap(),
            0.7
        );
        let constant = Tensor::zeros(&[8, 4]);
        let balanced = [0, 1, 2, 3, 0, 1, 2, 3];
        assert_eq!(accuracy_from_scores(&constant, &balanced).unwrap(), 0.25);
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
    }
}
