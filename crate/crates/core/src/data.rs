//! Seeded synthetic image classification data.
//!
//! Every class owns a smooth template made of a few low-frequency plane
//! waves per channel. Samples are the template plus i.i.d. Gaussian noise.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tensor::{Scalar, Tensor};

const WAVES_PER_CHANNEL: usize = 3;
const MAX_FREQUENCY: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 32,
            image_size: 32,
            noise_std: 0.25,
            seed: 0,
        }
    }
}

/// Images `[N, S, S, 3]` and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Samples<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the samples at `indices` into a new batch.
    pub fn batch(&self, indices: &[usize]) -> Samples<T> {
        let per = self.images.len() / self.len().max(1);
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        Samples {
            images: Tensor::from_vec(&shape, data).expect("batch shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.num_classes * self.samples_per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.image_size == 0 {
            return Err(TensorError::Config("dataset needs classes and a positive image size".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(TensorError::Config(format!("noise std {} must be non-negative", self.noise_std)));
        }
        Ok(())
    }

    /// Class templates `[classes, S, S, 3]`, values roughly in `[-1, 1]`.
    pub fn templates(&self) -> Result<Tensor<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let s = self.image_size;
        let mut data = vec![0.0; self.num_classes * s * s * 3];
        for class in 0..self.num_classes {
            for ch in 0..3 {
                for _ in 0..WAVES_PER_CHANNEL {
                    let fy = rng.random_range(-MAX_FREQUENCY..=MAX_FREQUENCY) as f64;
                    let fx = rng.random_range(0..=MAX_FREQUENCY) as f64;
                    let phase = rng.random_range(0.0..TAU);
                    let amp = rng.random_range(0.2..0.6);
                    for y in 0..s {
                        for x in 0..s {
                            let arg = TAU * (fy * y as f64 + fx * x as f64) / s as f64 + phase;
                            data[((class * s + y) * s + x) * 3 + ch] += amp * arg.sin();
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[self.num_classes, s, s, 3], data)
    }

    /// Draws every sample. Labels cycle through the classes so any prefix
    /// is nearly balanced.
    pub fn generate<T: Scalar>(&self) -> Result<Samples<T>> {
        let templates = self.templates()?;
        let per = self.image_size * self.image_size * 3;
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| TensorError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(1));
        let n = self.len();
        let mut data = Vec::with_capacity(n * per);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.num_classes;
            let t = &templates.data()[class * per..(class + 1) * per];
            data.extend(t.iter().map(|&v| T::of(v + noise.sample(&mut rng))));
            labels.push(class);
        }
        let s = self.image_size;
        Ok(Samples {
            images: Tensor::from_vec(&[n, s, s, 3], data)?,
            labels,
        })
    }
}

/// Accuracy of assigning each image to the template at least squared
/// distance.
pub fn nearest_template_accuracy<T: Scalar>(samples: &Samples<T>, templates: &Tensor<f64>) -> f64 {
    let per = templates.len() / templates.shape()[0];
    let classes = templates.shape()[0];
    let correct = (0..samples.len())
        .filter(|&i| {
            let img = &samples.images.data()[i * per..(i + 1) * per];
            let best = (0..classes)
                .map(|c| {
                    let t = &templates.data()[c * per..(c + 1) * per];
                    let d: f64 = img.iter().zip(t).map(|(a, b)| (a.as_f64() - b).powi(2)).sum();
                    (c, d)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c);
            best == Some(samples.labels[i])
        })
        .count();
    correct as f64 / samples.len().max(1) as f64
}
