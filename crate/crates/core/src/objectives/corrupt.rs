use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::{teacher_classifier_probs, TeacherSpec};

/// A batch's labels after corrupting `⌊B/2⌋` of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corruption {
    pub labels: Vec<usize>,
    /// True for the examples selected for corruption.
    pub corrupted: Vec<bool>,
}

impl Corruption {
    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }

    /// BCE targets: 1 where the label still equals the original, 0 otherwise.
    /// A random draw that lands on the original label counts as clean.
    pub fn targets(&self, original: &[usize]) -> Vec<f64> {
        self.labels
            .iter()
            .zip(original)
            .map(|(a, b)| if a == b { 1.0 } else { 0.0 })
            .collect()
    }
}

fn select_half<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Vec<bool>> {
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "corruption needs a batch of at least 2, got {len}"
        )));
    }
    let mut mask = vec![false; len];
    for i in index::sample(rng, len, len / 2) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Give `⌊B/2⌋` randomly chosen examples a label drawn uniformly from all
/// classes.
pub fn corrupt_random<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    rng: &mut R,
) -> Result<Corruption> {
    let corrupted = select_half(labels.len(), rng)?;
    let labels = labels
        .iter()
        .zip(&corrupted)
        .map(|(&y, &c)| if c { rng.random_range(0..classes) } else { y })
        .collect();
    Ok(Corruption { labels, corrupted })
}

/// The most probable class other than `y`; ties go to the lowest index.
pub fn adversarial_label(probs: &[f64], y: usize) -> usize {
    let mut best = None;
    for (c, &p) in probs.iter().enumerate() {
        if c == y {
            continue;
        }
        match best {
            Some((_, bp)) if p <= bp => {}
            _ => best = Some((c, p)),
        }
    }
    best.map(|(c, _)| c).unwrap_or(y)
}

/// Relabel `⌊B/2⌋` randomly chosen examples with the teacher classifier's
/// strongest incorrect prediction.
pub fn corrupt_adversarial<R: Rng + ?Sized>(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    batch: &Batch,
    rng: &mut R,
) -> Result<Corruption> {
    let corrupted = select_half(batch.len(), rng)?;
    let probs = teacher_classifier_probs(teacher, alpha, &batch.x)?;
    let labels = batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if corrupted[i] {
                adversarial_label(probs.row(i), y)
            } else {
                y
            }
        })
        .collect();
    Ok(Corruption { labels, corrupted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_hit_on_original_counts_as_clean() {
        let c = Corruption {
            labels: vec![0, 2, 1],
            corrupted: vec![true, true, false],
        };
        assert_eq!(c.targets(&[0, 1, 1]), [1.0, 0.0, 1.0]);
        assert_eq!(c.corrupted_count(), 2);
    }

    #[test]
    fn single_class_keeps_label() {
        assert_eq!(adversarial_label(&[1.0], 0), 0);
    }
}
