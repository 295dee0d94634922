use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Gaussian-blob classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Distance of every class mean from the origin.
    pub class_separation: f64,
    /// Standard deviation of the isotropic noise around each mean.
    pub noise: f64,
}

/// One mean per class at `class_separation` along a random unit direction,
/// samples drawn as `mean + noise · N(0, I)`. Samples are stored class by
/// class.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.dim == 0 || spec.n_per_class == 0 {
        return Err(Error::InvalidArgument(
            "synthetic sizes must be positive".into(),
        ));
    }
    if !(spec.class_separation > 0.0 && spec.noise > 0.0) {
        return Err(Error::InvalidArgument(
            "class_separation and noise must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter()
                .map(|x| x / norm * spec.class_separation)
                .collect()
        })
        .collect();
    let n = spec.num_classes * spec.n_per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            data.extend(mean.iter().map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + spec.noise * z
            }));
            labels.push(class);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, spec.dim], data)?,
        labels,
        spec.num_classes,
    )
}
