//! Seeded Gaussian-mixture feature stores for tests, examples and benchmarks.
//!
//! Each class draws conv summaries `(f, m, M)` for two layers and a
//! penultimate vector from its own Gaussian; the OOD store draws from the
//! same mixture and then shifts every raw coordinate by `shift_sigmas`
//! standard deviations in a fixed random direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::store::{FeatureStore, LogitsKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Channels of each of the two conv layers.
    pub channels: usize,
    pub penultimate_dim: usize,
    /// Per-coordinate standard deviation of the activation fractions.
    pub fraction_sigma: f64,
    /// Per-coordinate standard deviation of channel extrema and penultimate features.
    pub feature_sigma: f64,
    pub shift_sigmas: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            train_per_class: 300,
            test_per_class: 200,
            channels: 8,
            penultimate_dim: 8,
            fraction_sigma: 0.03,
            feature_sigma: 0.1,
            shift_sigmas: 6.0,
            seed: 0,
        }
    }
}

pub const CONV_LAYERS: [&str; 2] = ["conv1", "conv2"];
pub const PENULTIMATE_LAYER: &str = "penultimate";

/// Training, in-distribution test and shifted OOD stores.
#[derive(Debug, Clone)]
pub struct SyntheticStores {
    pub train: FeatureStore,
    pub test: FeatureStore,
    pub ood: FeatureStore,
}

struct ClassMeans {
    fraction: Vec<Vec<f64>>,
    min: Vec<Vec<f64>>,
    max: Vec<Vec<f64>>,
    z: Vec<f64>,
}

struct Mixture {
    classes: Vec<ClassMeans>,
    /// ±1 per raw coordinate: fractions, minima, maxima per layer, then z.
    direction: Vec<f64>,
}

impl Mixture {
    fn new(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.channels;
        let classes = (0..cfg.num_classes)
            .map(|_| ClassMeans {
                fraction: (0..2)
                    .map(|_| (0..c).map(|_| rng.gen_range(0.3..0.7)).collect())
                    .collect(),
                min: (0..2)
                    .map(|_| (0..c).map(|_| rng.gen_range(-3.0..-1.0)).collect())
                    .collect(),
                max: (0..2)
                    .map(|_| (0..c).map(|_| rng.gen_range(1.0..3.0)).collect())
                    .collect(),
                z: (0..cfg.penultimate_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            })
            .collect();
        let width = 2 * 3 * c + cfg.penultimate_dim;
        let direction = (0..width).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        Mixture { classes, direction }
    }
}

fn sample_store(
    cfg: &SyntheticConfig,
    mix: &Mixture,
    per_class: usize,
    shift: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureStore> {
    let k = cfg.num_classes;
    let c = cfg.channels;
    let n = k * per_class;
    let f_noise = Normal::new(0.0, cfg.fraction_sigma).expect("positive std");
    let v_noise = Normal::new(0.0, cfg.feature_sigma).expect("positive std");
    let labels: Vec<i32> = (0..n).map(|i| (i % k) as i32).collect();

    let mut fraction: [Vec<f32>; 2] = std::array::from_fn(|_| Vec::with_capacity(n * c));
    let mut min: [Vec<f32>; 2] = std::array::from_fn(|_| Vec::with_capacity(n * c));
    let mut max: [Vec<f32>; 2] = std::array::from_fn(|_| Vec::with_capacity(n * c));
    let mut z = Vec::with_capacity(n * cfg.penultimate_dim);
    let mut logits = Vec::with_capacity(n * k);
    for &label in &labels {
        let means = &mix.classes[label as usize];
        let mut d = mix.direction.iter();
        for l in 0..2 {
            for ch in 0..c {
                let v = means.fraction[l][ch] + f_noise.sample(rng) + shift * cfg.fraction_sigma * d.next().unwrap();
                fraction[l].push(v.clamp(0.0, 1.0) as f32);
            }
            for ch in 0..c {
                let v = means.min[l][ch] + v_noise.sample(rng) + shift * cfg.feature_sigma * d.next().unwrap();
                min[l].push(v as f32);
            }
            for ch in 0..c {
                let v = means.max[l][ch] + v_noise.sample(rng) + shift * cfg.feature_sigma * d.next().unwrap();
                max[l].push(v.max(f64::from(min[l][min[l].len() - c + ch])) as f32);
            }
        }
        for j in 0..cfg.penultimate_dim {
            let v = means.z[j] + v_noise.sample(rng) + shift * cfg.feature_sigma * d.next().unwrap();
            z.push(v as f32);
        }
        for j in 0..k {
            let base = if j == label as usize { 4.0 } else { 0.0 };
            logits.push((base + v_noise.sample(rng)) as f32);
        }
    }

    let mut store = FeatureStore::new(n, k);
    for (l, name) in CONV_LAYERS.iter().enumerate() {
        store.push_conv_summary(
            name,
            c,
            std::mem::take(&mut fraction[l]),
            std::mem::take(&mut min[l]),
            std::mem::take(&mut max[l]),
        )?;
    }
    store.push_vector(PENULTIMATE_LAYER, cfg.penultimate_dim, z)?;
    store.set_labels(labels)?;
    store.set_logits(logits, LogitsKind::Logits)?;
    Ok(store)
}

pub fn synthetic_stores(cfg: &SyntheticConfig) -> Result<SyntheticStores> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mix = Mixture::new(cfg, &mut rng);
    Ok(SyntheticStores {
        train: sample_store(cfg, &mix, cfg.train_per_class, 0.0, &mut rng)?,
        test: sample_store(cfg, &mix, cfg.test_per_class, 0.0, &mut rng)?,
        ood: sample_store(cfg, &mix, cfg.test_per_class, cfg.shift_sigmas, &mut rng)?,
    })
}
