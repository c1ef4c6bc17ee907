use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledExample, NoisyExample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "asymmetric" => Ok(NoiseKind::Asymmetric),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise kind {other}"
            ))),
        }
    }
}

/// Class-to-class relabeling used by asymmetric noise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionMap(Vec<usize>);

/// CIFAR-10 class indices in the usual order.
pub mod cifar10 {
    pub const AIRPLANE: usize = 0;
    pub const AUTOMOBILE: usize = 1;
    pub const BIRD: usize = 2;
    pub const CAT: usize = 3;
    pub const DEER: usize = 4;
    pub const DOG: usize = 5;
    pub const FROG: usize = 6;
    pub const HORSE: usize = 7;
    pub const SHIP: usize = 8;
    pub const TRUCK: usize = 9;
}

impl TransitionMap {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let c = map.len();
        if let Some(&bad) = map.iter().find(|&&t| t >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: c,
            });
        }
        Ok(TransitionMap(map))
    }

    /// `c ↦ (c + 1) mod C`.
    pub fn circular(classes: usize) -> Self {
        TransitionMap((0..classes).map(|c| (c + 1) % classes).collect())
    }

    /// TRUCK → AUTOMOBILE, BIRD → AIRPLANE, DEER → HORSE, CAT ↔ DOG; all
    /// other classes map to themselves.
    pub fn cifar10() -> Self {
        use cifar10::*;
        let mut m: Vec<usize> = (0..10).collect();
        m[TRUCK] = AUTOMOBILE;
        m[BIRD] = AIRPLANE;
        m[DEER] = HORSE;
        m[CAT] = DOG;
        m[DOG] = CAT;
        TransitionMap(m)
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn apply(&self, c: usize) -> usize {
        self.0[c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Asymmetric only; defaults to [`TransitionMap::circular`].
    pub map: Option<TransitionMap>,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate,
            map: None,
        }
    }

    pub fn asymmetric(rate: f64, map: Option<TransitionMap>) -> Self {
        NoiseSpec {
            kind: NoiseKind::Asymmetric,
            rate,
            map,
        }
    }

    pub fn none() -> Self {
        Self::symmetric(0.0)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        check_rate(self.rate)?;
        if let Some(m) = &self.map {
            if m.classes() != classes {
                return Err(Error::InvalidArgument(format!(
                    "transition map covers {} classes, dataset has {classes}",
                    m.classes()
                )));
            }
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "noise rate {rate} not in [0, 1]"
        )))
    }
}

fn choose(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = ((rate * n as f64).floor() as usize).min(n);
    rand::seq::index::sample(rng, n, count).into_vec()
}

/// Pick `⌊ε·n⌋` examples and give each a label drawn uniformly from all
/// `classes` (so some keep their label by chance).
pub fn inject_symmetric(
    examples: &[LabeledExample],
    rate: f64,
    classes: usize,
    seed: u64,
) -> Result<Vec<NoisyExample>> {
    check_rate(rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<NoisyExample> = examples
        .iter()
        .map(|e| NoisyExample::new(e.x.clone(), e.y, e.y))
        .collect();
    for i in choose(examples.len(), rate, &mut rng) {
        out[i].observed = rng.random_range(0..classes);
    }
    Ok(out)
}

/// Pick `⌊ε·n⌋` examples and relabel each through `map`.
pub fn inject_asymmetric(
    examples: &[LabeledExample],
    rate: f64,
    map: &TransitionMap,
    seed: u64,
) -> Result<Vec<NoisyExample>> {
    check_rate(rate)?;
    if let Some(e) = examples.iter().find(|e| e.y >= map.classes()) {
        return Err(Error::LabelOutOfRange {
            label: e.y,
            classes: map.classes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<NoisyExample> = examples
        .iter()
        .map(|e| NoisyExample::new(e.x.clone(), e.y, e.y))
        .collect();
    for i in choose(examples.len(), rate, &mut rng) {
        out[i].observed = map.apply(examples[i].y);
    }
    Ok(out)
}

pub fn inject(
    examples: &[LabeledExample],
    spec: &NoiseSpec,
    classes: usize,
    seed: u64,
) -> Result<Vec<NoisyExample>> {
    spec.validate(classes)?;
    match spec.kind {
        NoiseKind::Symmetric => inject_symmetric(examples, spec.rate, classes, seed),
        NoiseKind::Asymmetric => {
            let map = spec
                .map
                .clone()
                .unwrap_or_else(|| TransitionMap::circular(classes));
            inject_asymmetric(examples, spec.rate, &map, seed)
        }
    }
}
