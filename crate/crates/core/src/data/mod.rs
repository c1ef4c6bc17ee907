//! Synthetic datasets, clean/noisy splitting, artificial label noise, and
//! batch sampling.
//!
//! A [`NoisyExample`] keeps the label it was generated with, but only hands
//! it out against an [`EvalAccess`] token; the training path never holds
//! one.

mod blobs;
mod csvio;
mod noise;
mod sampler;

pub use blobs::{blob_centers, gen_blobs};
pub use csvio::{read_labeled_csv, write_noisy_csv};
pub use noise::{
    cifar10, inject, inject_asymmetric, inject_symmetric, NoiseKind, NoiseSpec, TransitionMap,
};
pub use sampler::BatchSampler;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Capability required to read ground-truth labels of noisy examples.
/// Only evaluation code constructs one.
#[derive(Debug)]
pub struct EvalAccess {
    _private: (),
}

impl EvalAccess {
    pub fn grant() -> Self {
        EvalAccess { _private: () }
    }
}

/// A label that is opaque without an [`EvalAccess`].
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct HiddenLabel(usize);

impl HiddenLabel {
    pub fn reveal(&self, _access: &EvalAccess) -> usize {
        self.0
    }
}

impl std::fmt::Debug for HiddenLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("HiddenLabel(..)")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyExample {
    pub x: Vec<f64>,
    /// Observed, possibly corrupted label.
    pub observed: usize,
    y_true: HiddenLabel,
}

impl NoisyExample {
    pub fn new(x: Vec<f64>, observed: usize, y_true: usize) -> Self {
        NoisyExample {
            x,
            observed,
            y_true: HiddenLabel(y_true),
        }
    }

    pub fn hidden_label(&self) -> HiddenLabel {
        self.y_true
    }

    pub fn true_label(&self, access: &EvalAccess) -> usize {
        self.y_true.reveal(access)
    }

    pub fn is_corrupted(&self, access: &EvalAccess) -> bool {
        self.observed != self.true_label(access)
    }
}

/// A feature matrix with one label per row.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn gather<'a>(dim: usize, rows: impl Iterator<Item = (&'a [f64], usize)>) -> Result<Batch> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (x, y) in rows {
        data.extend_from_slice(x);
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(Batch {
        x: Tensor::matrix(labels.len(), dim, data)?,
        labels,
    })
}

/// Clean examples with a known class count and feature dimension.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub classes: usize,
    pub dim: usize,
    pub examples: Vec<LabeledExample>,
}

impl LabeledSet {
    pub fn new(classes: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        let dim = examples.first().map(|e| e.x.len()).unwrap_or(0);
        for e in &examples {
            if e.y >= classes {
                return Err(Error::LabelOutOfRange {
                    label: e.y,
                    classes,
                });
            }
            if e.x.len() != dim {
                return Err(Error::InvalidArgument("ragged feature vectors".into()));
            }
        }
        Ok(LabeledSet {
            classes,
            dim,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        gather(
            self.dim,
            indices.iter().map(|&i| {
                let e = &self.examples[i];
                (e.x.as_slice(), e.y)
            }),
        )
    }

    pub fn full_batch(&self) -> Result<Batch> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Noisy examples; batches carry observed labels only.
#[derive(Clone, Debug)]
pub struct NoisySet {
    pub classes: usize,
    pub dim: usize,
    pub examples: Vec<NoisyExample>,
}

impl NoisySet {
    pub fn new(classes: usize, examples: Vec<NoisyExample>) -> Result<Self> {
        let dim = examples.first().map(|e| e.x.len()).unwrap_or(0);
        if let Some(e) = examples.iter().find(|e| e.observed >= classes) {
            return Err(Error::LabelOutOfRange {
                label: e.observed,
                classes,
            });
        }
        Ok(NoisySet {
            classes,
            dim,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        gather(
            self.dim,
            indices.iter().map(|&i| {
                let e = &self.examples[i];
                (e.x.as_slice(), e.observed)
            }),
        )
    }

    pub fn full_batch(&self) -> Result<Batch> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Fraction of examples whose observed label is wrong.
    pub fn corrupted_fraction(&self, access: &EvalAccess) -> f64 {
        let wrong = self
            .examples
            .iter()
            .filter(|e| e.is_corrupted(access))
            .count();
        wrong as f64 / self.len().max(1) as f64
    }
}

/// A large noisy set and a small, class-balanced clean set drawn from
/// disjoint parts of one pool.
#[derive(Clone, Debug)]
pub struct DatasetPair {
    pub noisy: NoisySet,
    pub clean: LabeledSet,
    /// Pool indices used for each part (disjoint).
    pub noisy_source: Vec<usize>,
    pub clean_source: Vec<usize>,
}

impl DatasetPair {
    /// Shuffle `pool`, take a balanced clean set of `clean_count` and up to
    /// `noisy_count` of the remainder, then corrupt the noisy part.
    pub fn split(
        pool: &[LabeledExample],
        classes: usize,
        clean_count: usize,
        noisy_count: usize,
        noise: &NoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        if clean_count == 0 || clean_count >= noisy_count {
            return Err(Error::InvalidArgument(format!(
                "clean set ({clean_count}) must be nonempty and smaller than the noisy set ({noisy_count})"
            )));
        }
        if pool.len() < clean_count + noisy_count {
            return Err(Error::InvalidArgument(format!(
                "pool of {} examples cannot supply {clean_count} clean + {noisy_count} noisy",
                pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);

        let mut quota: Vec<usize> = (0..classes)
            .map(|c| clean_count / classes + usize::from(c < clean_count % classes))
            .collect();
        let mut clean_source = Vec::with_capacity(clean_count);
        let mut rest = Vec::with_capacity(pool.len());
        for i in order {
            let y = pool[i].y;
            if y < classes && quota[y] > 0 {
                quota[y] -= 1;
                clean_source.push(i);
            } else {
                rest.push(i);
            }
        }
        if quota.iter().any(|&q| q > 0) {
            return Err(Error::InvalidArgument(
                "pool lacks enough examples per class for a balanced clean set".into(),
            ));
        }
        rest.truncate(noisy_count);
        let noisy_source = rest;

        let clean = LabeledSet::new(
            classes,
            clean_source.iter().map(|&i| pool[i].clone()).collect(),
        )?;
        let noisy_clean: Vec<LabeledExample> =
            noisy_source.iter().map(|&i| pool[i].clone()).collect();
        let noisy_examples = inject(&noisy_clean, noise, classes, seed.wrapping_add(1))?;
        Ok(DatasetPair {
            noisy: NoisySet::new(classes, noisy_examples)?,
            clean,
            noisy_source,
            clean_source,
        })
    }
}
