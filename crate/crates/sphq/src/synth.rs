//! Synthetic labeled features for desk-scale experiments: class centers
//! drawn uniformly on the sphere, points sampled as center plus Gaussian
//! noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{norm, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub n: usize,
    pub classes: u32,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Unit-norm class center directions; rejection keeps the normalization
/// well defined.
fn class_centers(rng: &mut ChaCha8Rng, classes: u32, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
            let nrm = norm(&v);
            if nrm > 1e-6 {
                return v.into_iter().map(|x| x / nrm).collect();
            }
        })
        .collect()
}

pub fn generate(opts: &SynthOptions) -> Result<(FeatureMatrix, LabelVector)> {
    if opts.classes < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 classes, got {}",
            opts.classes
        )));
    }
    if opts.n == 0 || opts.dim == 0 {
        return Err(Error::Invalid("n and dim must be >= 1".into()));
    }
    if opts.noise.is_nan() || opts.noise < 0.0 {
        return Err(Error::Invalid(format!(
            "noise must be >= 0, got {}",
            opts.noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centers = class_centers(&mut rng, opts.classes, opts.dim);

    let mut values = Vec::with_capacity(opts.n * opts.dim);
    let mut labels = Vec::with_capacity(opts.n);
    for _ in 0..opts.n {
        let y = rng.random_range(0..opts.classes);
        labels.push(y);
        let center = &centers[y as usize];
        for &c in center {
            values.push(c + opts.noise * gaussian(&mut rng));
        }
    }
    Ok((
        FeatureMatrix::new(opts.n, opts.dim, values)?,
        LabelVector::new(opts.classes, labels)?,
    ))
}
