#![allow(dead_code)]

pub mod oracles;
pub mod properties;

use afkan::data::Dataset;
use afkan::Tensor;

/// A small separable dataset in the shape of MNIST: `classes` blobs in `dim` pixels.
pub fn blobs(rows: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let c = i % classes;
        for p in 0..dim {
            let on = p % classes == c;
            let base = if on { 0.8 } else { 0.1 };
            images.push((base + 0.1 * r.random::<f64>()).min(1.0));
        }
        labels.push(c);
    }
    Dataset::new("blobs", Tensor::new(vec![rows, dim], images).unwrap(), labels).expect("consistent blobs")
}
