use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LabeledExample;
use crate::error::{Error, Result};

/// Radius of the circle the class centers sit on.
const CENTER_RADIUS: f64 = 2.0;

/// Class centers evenly spaced on a circle of radius 2 in the first two
/// coordinates; the remaining coordinates are zero.
pub fn blob_centers(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            let mut v = vec![0.0; dim];
            v[0] = CENTER_RADIUS * angle.cos();
            v[1] = CENTER_RADIUS * angle.sin();
            v
        })
        .collect()
}

/// Isotropic Gaussian clusters (std `spread`) around [`blob_centers`],
/// `per_class` examples each, interleaved by class.
pub fn gen_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if classes < 2 || dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "blobs need C >= 2 and d >= 2, got C={classes}, d={dim}"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid spread {spread}")));
    }
    let centers = blob_centers(classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (y, center) in centers.iter().enumerate() {
            let x = center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + spread * z
                })
                .collect();
            out.push(LabeledExample { x, y });
        }
    }
    Ok(out)
}
