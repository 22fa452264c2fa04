//! Synthetic labelled 32x32 grayscale images.
//!
//! Class `k` has mean gray level `60 + 20k` (out of 255) with a shape
//! pattern on top: disc, square, horizontal stripes or checkerboard,
//! cycling with `k`. Position, size, contrast and pixel noise vary per
//! image.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;

pub const IMAGE_SIZE: usize = 32;
pub const MAX_CLASSES: usize = 8;
const NOISE_SIGMA: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<FeatureTensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Indices into `images`.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    pub fn train_images(&self) -> impl Iterator<Item = &FeatureTensor> {
        self.train.iter().map(|&i| &self.images[i])
    }

    pub fn val_images(&self) -> impl Iterator<Item = &FeatureTensor> {
        self.val.iter().map(|&i| &self.images[i])
    }
}

/// Class-mean gray level before noise.
pub fn class_mean(k: usize) -> f64 {
    60.0 + 20.0 * k as f64
}

fn pattern(kind: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = IMAGE_SIZE as f64;
    let cx = rng.gen_range(10.0..n - 10.0);
    let cy = rng.gen_range(10.0..n - 10.0);
    let size = rng.gen_range(5.0..10.0);
    let period = rng.gen_range(4..=8);
    let phase = rng.gen_range(0..period);
    let mut p = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let on = match kind % 4 {
                0 => (fx - cx).powi(2) + (fy - cy).powi(2) <= size * size,
                1 => (fx - cx).abs() <= size && (fy - cy).abs() <= size,
                2 => ((y + phase) / (period / 2).max(1)) % 2 == 0,
                _ => ((x + phase) / period + (y + phase) / period) % 2 == 0,
            };
            p[y * IMAGE_SIZE + x] = on as u8 as f64;
        }
    }
    p
}

/// One image of class `k`, pixels in `[0, 1]`.
fn gen_image(k: usize, rng: &mut ChaCha8Rng) -> FeatureTensor {
    let p = pattern(k, rng);
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let amp = rng.gen_range(30.0..50.0);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid normal");
    let data = p
        .iter()
        .map(|&v| {
            let g = class_mean(k) + amp * (v - mean) + noise.sample(rng);
            (g.clamp(0.0, 255.0) / 255.0) as f32
        })
        .collect();
    FeatureTensor::new(1, IMAGE_SIZE, IMAGE_SIZE, data).expect("finite pixels")
}

/// `count` images with round-robin labels, a seeded shuffle, and the first
/// `round(count * val_fraction)` shuffled indices held out for validation.
pub fn gen_synthetic_dataset(seed: u64, count: usize, classes: usize, val_fraction: f64) -> Result<Dataset> {
    if classes == 0 || classes > MAX_CLASSES {
        return Err(Error::config(format!("class count must be in 1..={MAX_CLASSES}")));
    }
    if count < classes {
        return Err(Error::config(format!("need at least one image per class ({count} < {classes})")));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config("validation fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    let images = labels.iter().map(|&k| gen_image(k, &mut rng)).collect();
    let mut perm: Vec<usize> = (0..count).collect();
    perm.shuffle(&mut rng);
    let n_val = (count as f64 * val_fraction).round() as usize;
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Dataset {
        images,
        labels,
        classes,
        train,
        val,
    })
}
