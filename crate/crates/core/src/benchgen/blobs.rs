use serde::{Deserialize, Serialize};

use super::{inject_noise, make_open_pool, make_synthetic_clean, DatasetManifest, NoiseSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Everything needed to build a noisy training set and a clean test set of
/// Gaussian blobs from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub rho: f64,
    pub omega: f64,
    pub pool_clusters: usize,
    pub pool_offset: f64,
    /// Clean test samples per class; zero skips the test set.
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            classes: 4,
            per_class: 500,
            dim: 8,
            spread: 1.0,
            rho: 0.6,
            omega: 0.5,
            pool_clusters: 4,
            pool_offset: 6.0,
            test_per_class: 250,
            seed: 0,
        }
    }
}

impl BlobsConfig {
    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec::new(self.rho, self.omega, "blobs-pool", self.seed)
    }

    /// Noisy training manifest and, when requested, a clean test manifest
    /// drawn from the same class centres with an independent stream.
    pub fn generate(&self) -> Result<(DatasetManifest, Option<DatasetManifest>)> {
        if self.pool_clusters == 0 {
            return Err(Error::invalid("pool_clusters must be >= 1"));
        }
        let clean = make_synthetic_clean(self.classes, self.per_class, self.dim, self.spread, self.seed)?;
        let spec = self.noise_spec();
        spec.validate()?;
        let (_, n_open) = spec.noisy_counts(clean.len());
        let per_cluster = n_open.div_ceil(self.pool_clusters).max(1);
        let pool =
            make_open_pool(self.pool_clusters, per_cluster, self.dim, self.spread, self.pool_offset, self.seed)?;
        let train = inject_noise(&clean, &pool, &spec)?;
        let test = if self.test_per_class == 0 {
            None
        } else {
            let test_seed = rng::derive_seed(self.seed, &[rng::STREAM_TEST]);
            Some(make_synthetic_clean(self.classes, self.test_per_class, self.dim, self.spread, test_seed)?)
        };
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::ProvenanceCounts;

    #[test]
    fn default_benchmark_shape() {
        let (train, test) = BlobsConfig::default().generate().unwrap();
        assert_eq!(train.len(), 2000);
        assert_eq!(train.counts, ProvenanceCounts { clean: 800, closed: 600, open: 600 });
        let test = test.unwrap();
        assert_eq!(test.len(), 1000);
        assert_ne!(test.samples[0].features, train.samples[0].features);
        train.validate().unwrap();
    }

    #[test]
    fn no_test_set_when_zero() {
        let cfg = BlobsConfig { test_per_class: 0, per_class: 10, ..Default::default() };
        assert!(cfg.generate().unwrap().1.is_none());
    }
}
