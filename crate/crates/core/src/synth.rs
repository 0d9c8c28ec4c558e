//! Synthetic identity datasets with known ground truth.
//!
//! Each identity is a unit-variance spherical Gaussian cluster around its own
//! centroid. The planted-noise generator additionally moves samples drawn
//! from other clusters into a few identities, recording which ones.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{DatasetManifest, EmbeddingMatrix, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedNoiseConfig {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub contaminated: usize,
    pub imports_per_identity: usize,
    /// Per-coordinate standard deviation of the centroid distribution.
    pub centroid_spread: f64,
    /// Centroids are rescaled until every pair is at least this far apart.
    pub min_centroid_distance: f64,
    pub seed: u64,
}

impl Default for PlantedNoiseConfig {
    fn default() -> Self {
        Self {
            identities: 100,
            samples_per_identity: 20,
            dim: 32,
            contaminated: 3,
            imports_per_identity: 2,
            centroid_spread: 3.0,
            min_centroid_distance: 12.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CelebaShapeConfig {
    pub identities: usize,
    pub samples: usize,
    pub dim: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub centroid_spread: f64,
    pub seed: u64,
}

impl Default for CelebaShapeConfig {
    fn default() -> Self {
        Self {
            identities: crate::reference::CELEBA_IDENTITIES,
            samples: crate::reference::CELEBA_SAMPLES,
            dim: 512,
            min_size: 11,
            max_size: 29,
            centroid_spread: 3.0,
            seed: 0,
        }
    }
}

/// Identity → the sample ids that were imported from other clusters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub contaminated: BTreeMap<String, Vec<String>>,
    /// Imported sample id → identity whose cluster it was drawn from.
    pub sources: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub embeddings: EmbeddingMatrix,
    pub truth: PlantedTruth,
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:05}")
}

fn sample_name(identity: &str, k: usize) -> String {
    format!("{identity}_{k:04}")
}

struct Builder {
    dim: usize,
    samples: Vec<SampleRecord>,
    values: Vec<f32>,
}

impl Builder {
    fn with_capacity(dim: usize, rows: usize) -> Self {
        Self { dim, samples: Vec::with_capacity(rows), values: Vec::with_capacity(rows * dim) }
    }

    fn push(&mut self, identity: &str, k: usize, centroid: &[f64], rng: &mut ChaCha8Rng) -> String {
        let sample_id = sample_name(identity, k);
        self.samples.push(SampleRecord {
            sample_id: sample_id.clone(),
            identity_id: identity.to_string(),
            image_path: format!("{identity}/{k:04}.jpg"),
            row: self.samples.len(),
        });
        for &c in centroid {
            let z: f64 = rng.sample(StandardNormal);
            self.values.push((c + z) as f32);
        }
        sample_id
    }

    fn finish(self, truth: PlantedTruth) -> SyntheticDataset {
        let count = self.samples.len();
        SyntheticDataset {
            manifest: DatasetManifest::from_samples(self.samples).expect("generated ids are unique"),
            embeddings: EmbeddingMatrix::new(count, self.dim, self.values).expect("generated values are finite"),
            truth,
        }
    }
}

fn centroids(n: usize, dim: usize, spread: f64, min_distance: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    if let Some(required) = min_distance {
        let mut closest = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = cs[i].iter().zip(&cs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                closest = closest.min(d);
            }
        }
        if closest.is_finite() && closest < required {
            // Slight overshoot keeps the bound after f32 rounding of samples.
            let factor = required / closest * (1.0 + 1e-9);
            for c in &mut cs {
                for v in c.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }
    cs
}

/// Clean clusters plus `contaminated` identities that each receive
/// `imports_per_identity` samples drawn from other identities' clusters.
pub fn planted_noise(cfg: &PlantedNoiseConfig) -> SyntheticDataset {
    assert!(cfg.identities >= 2, "planted noise needs at least two identities");
    assert!(cfg.contaminated <= cfg.identities, "cannot contaminate more identities than exist");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cs = centroids(cfg.identities, cfg.dim, cfg.centroid_spread, Some(cfg.min_centroid_distance), &mut rng);

    let mut targets = index::sample(&mut rng, cfg.identities, cfg.contaminated).into_vec();
    targets.sort_unstable();

    let rows = cfg.identities * cfg.samples_per_identity + cfg.contaminated * cfg.imports_per_identity;
    let mut b = Builder::with_capacity(cfg.dim, rows);
    let mut truth = PlantedTruth::default();
    for (i, centroid) in cs.iter().enumerate() {
        let identity = identity_name(i);
        for k in 0..cfg.samples_per_identity {
            b.push(&identity, k, centroid, &mut rng);
        }
        if targets.binary_search(&i).is_ok() {
            let mut others: Vec<usize> = (0..cfg.identities).filter(|&o| o != i).collect();
            others.shuffle(&mut rng);
            let mut imported = Vec::new();
            for m in 0..cfg.imports_per_identity {
                let src = others[m % others.len()];
                let id = b.push(&identity, cfg.samples_per_identity + m, &cs[src], &mut rng);
                truth.sources.insert(id.clone(), identity_name(src));
                imported.push(id);
            }
            truth.contaminated.insert(identity, imported);
        }
    }
    b.finish(truth)
}

/// Identity sizes drawn uniformly from `[min_size, max_size]`, then nudged
/// one sample at a time until they sum to `samples`.
pub fn celeba_sizes(cfg: &CelebaShapeConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = cfg.identities;
    assert!(n > 0 && cfg.min_size <= cfg.max_size);
    assert!(
        cfg.samples >= n * cfg.min_size && cfg.samples <= n * cfg.max_size,
        "sample total unreachable with the given size bounds"
    );
    let mut sizes: Vec<usize> = (0..n).map(|_| rng.random_range(cfg.min_size..=cfg.max_size)).collect();
    let mut total: usize = sizes.iter().sum();
    while total != cfg.samples {
        let i = rng.random_range(0..n);
        if total > cfg.samples && sizes[i] > cfg.min_size {
            sizes[i] -= 1;
            total -= 1;
        } else if total < cfg.samples && sizes[i] < cfg.max_size {
            sizes[i] += 1;
            total += 1;
        }
    }
    sizes
}

/// Large clean dataset with the census shape of CelebA.
pub fn celeba_shaped(cfg: &CelebaShapeConfig) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = celeba_sizes(cfg, &mut rng);
    let mut b = Builder::with_capacity(cfg.dim, cfg.samples);
    let mut centroid = vec![0.0f64; cfg.dim];
    for (i, &size) in sizes.iter().enumerate() {
        for c in centroid.iter_mut() {
            *c = cfg.centroid_spread * rng.sample::<f64, _>(StandardNormal);
        }
        let identity = identity_name(i);
        for k in 0..size {
            b.push(&identity, k, &centroid, &mut rng);
        }
    }
    b.finish(PlantedTruth::default())
}

/// Same samples and rows, identity labels randomly permuted across samples
/// (identity sizes are preserved).
pub fn shuffle_labels(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<String> = manifest.samples().iter().map(|s| s.identity_id.clone()).collect();
    labels.shuffle(&mut rng);
    let samples = manifest
        .samples()
        .iter()
        .zip(labels)
        .map(|(s, identity_id)| SampleRecord { identity_id, ..s.clone() })
        .collect();
    DatasetManifest::from_samples(samples).expect("relabeling keeps sample ids unique")
}
