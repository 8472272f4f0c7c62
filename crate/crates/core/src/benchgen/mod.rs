//! Provenance-tagged benchmark construction.
//!
//! A clean in-distribution dataset of Gaussian blobs is corrupted in two
//! ways: a `rho * omega` fraction of samples keep their features but get a
//! label drawn uniformly from the other classes (closed-set noise), and a
//! `rho * (1 - omega)` fraction get their features replaced by vectors from an
//! out-of-distribution pool and a label drawn uniformly from all classes
//! (open-set noise). Every sample remembers what happened to it so the split
//! can be scored later; training code never reads the provenance tag.

mod blobs;
mod manifest;

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use blobs::BlobsConfig;
pub use manifest::{decode_manifest, encode_manifest, load_manifest, save_manifest, MANIFEST_MAGIC};

/// Ground-truth origin of a training sample. Used for evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Closed,
    Open,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::Clean, Provenance::Closed, Provenance::Open];

    pub fn index(self) -> usize {
        match self {
            Provenance::Clean => 0,
            Provenance::Closed => 1,
            Provenance::Open => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Clean => "clean",
            Provenance::Closed => "closed",
            Provenance::Open => "open",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: usize,
    pub features: Vec<f32>,
    /// Index of the single hot entry of the observed one-hot label.
    pub observed: usize,
    /// `None` exactly when the sample is open-set.
    pub true_class: Option<usize>,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn observed_one_hot(&self, num_classes: usize) -> Vec<f64> {
        let mut y = vec![0.0; num_classes];
        y[self.observed] = 1.0;
        y
    }

    /// Checks the provenance invariants against a class count.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.observed >= num_classes {
            return Err(Error::Corrupt(format!(
                "sample {}: observed class {} out of range for {} classes",
                self.id, self.observed, num_classes
            )));
        }
        let ok = match (self.provenance, self.true_class) {
            (Provenance::Clean, Some(t)) => t == self.observed,
            (Provenance::Closed, Some(t)) => t != self.observed && t < num_classes,
            (Provenance::Open, None) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Corrupt(format!(
                "sample {}: provenance {} inconsistent with true class {:?} / observed {}",
                self.id, self.provenance, self.true_class, self.observed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipDistribution {
    UniformExcludingTrue,
}

impl FlipDistribution {
    pub fn as_str(self) -> &'static str {
        match self {
            FlipDistribution::UniformExcludingTrue => "uniform_excluding_true",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rho: f64,
    pub omega: f64,
    /// Identifier of the out-of-distribution pool. No whitespace.
    pub open_source: String,
    pub flip_distribution: FlipDistribution,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(rho: f64, omega: f64, open_source: impl Into<String>, seed: u64) -> Self {
        NoiseSpec {
            rho,
            omega,
            open_source: open_source.into(),
            flip_distribution: FlipDistribution::UniformExcludingTrue,
            seed,
        }
    }

    /// Noise settings recorded on a manifest that has not been corrupted.
    pub fn clean(seed: u64) -> Self {
        NoiseSpec::new(0.0, 0.0, "none", seed)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("omega", self.omega)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.open_source.is_empty()
            || !self.open_source.bytes().all(|b| b.is_ascii_graphic())
        {
            return Err(Error::invalid(format!(
                "open_source {:?} must be non-empty printable ASCII without whitespace",
                self.open_source
            )));
        }
        Ok(())
    }

    /// `(n_closed, n_open)` for a dataset of `n` samples.
    ///
    /// Both counts round half up; if together they exceed the rounded total
    /// noise count the open count gives up the excess.
    pub fn noisy_counts(&self, n: usize) -> (usize, usize) {
        let n = n as f64;
        let round = |x: f64| (x + 0.5).floor() as usize;
        let n_closed = round(self.rho * self.omega * n);
        let mut n_open = round(self.rho * (1.0 - self.omega) * n);
        let total = round(self.rho * n);
        if n_closed + n_open > total {
            n_open -= (n_closed + n_open - total).min(n_open);
        }
        (n_closed, n_open)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub clean: usize,
    pub closed: usize,
    pub open: usize,
}

impl ProvenanceCounts {
    pub fn scan(samples: &[LabeledSample]) -> Self {
        let mut c = ProvenanceCounts::default();
        for s in samples {
            match s.provenance {
                Provenance::Clean => c.clean += 1,
                Provenance::Closed => c.closed += 1,
                Provenance::Open => c.open += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.clean + self.closed + self.open
    }

    pub fn get(&self, p: Provenance) -> usize {
        match p {
            Provenance::Clean => self.clean,
            Provenance::Closed => self.closed,
            Provenance::Open => self.open,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub noise_spec: NoiseSpec,
    pub counts: ProvenanceCounts,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Full consistency check: dense ids, per-sample invariants, counts.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::DimensionMismatch("feature dimension is 0".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::Corrupt(format!("sample at position {i} has id {}", s.id)));
            }
            if s.features.len() != self.feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has {} features, manifest declares {}",
                    s.features.len(),
                    self.feature_dim
                )));
            }
            s.validate(self.num_classes)?;
        }
        let scanned = ProvenanceCounts::scan(&self.samples);
        if scanned != self.counts {
            return Err(Error::Corrupt(format!(
                "declared counts {:?} differ from scanned {:?}",
                self.counts, scanned
            )));
        }
        Ok(())
    }

    /// Features as rows of `f64`.
    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| s.features.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }
}

/// Centre of class `class` for the given geometry.
///
/// Classes sit on scaled signed basis directions: `+r e_c` for the first `d`
/// classes and `-r e_{c-d}` for the next `d`. The radius keeps every pair of
/// centres at least `4 * spread` apart.
pub fn class_center(class: usize, feature_dim: usize, cluster_spread: f64) -> Vec<f64> {
    let radius = center_radius(cluster_spread);
    let mut c = vec![0.0; feature_dim];
    if class < feature_dim {
        c[class] = radius;
    } else {
        c[class - feature_dim] = -radius;
    }
    c
}

/// Minimum pairwise centre distance is `radius * sqrt(2)`.
pub fn center_radius(cluster_spread: f64) -> f64 {
    (2.0 * std::f64::consts::SQRT_2 * cluster_spread).max(3.0)
}

pub fn make_synthetic_clean(
    num_classes: usize,
    per_class: usize,
    feature_dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("num_classes must be >= 2, got {num_classes}")));
    }
    if per_class < 1 {
        return Err(Error::invalid("per_class must be >= 1"));
    }
    if feature_dim < 2 {
        return Err(Error::invalid(format!("feature_dim must be >= 2, got {feature_dim}")));
    }
    if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
        return Err(Error::invalid(format!("cluster_spread must be > 0, got {cluster_spread}")));
    }
    if num_classes > 2 * feature_dim {
        return Err(Error::invalid(format!(
            "feature_dim {feature_dim} cannot hold {num_classes} separated centres (max {})",
            2 * feature_dim
        )));
    }

    let mut rng = rng::stream(seed, &[rng::STREAM_CLEAN]);
    let noise = Normal::new(0.0, cluster_spread).expect("spread validated");
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        let center = class_center(class, feature_dim, cluster_spread);
        for _ in 0..per_class {
            let features = center.iter().map(|&c| (c + noise.sample(&mut rng)) as f32).collect();
            samples.push(LabeledSample {
                id: samples.len(),
                features,
                observed: class,
                true_class: Some(class),
                provenance: Provenance::Clean,
            });
        }
    }
    let counts = ProvenanceCounts::scan(&samples);
    Ok(DatasetManifest {
        samples,
        num_classes,
        feature_dim,
        noise_spec: NoiseSpec::clean(seed),
        counts,
    })
}

/// Unlabelled out-of-distribution vectors.
///
/// Cluster `j` is centred at `offset * v_j` where `v_j` is a seeded unit
/// vector with strictly negative entries. When every class centre lies on a
/// positive axis this keeps pool centres at least `offset` away from all of
/// them.
pub fn make_open_pool(
    num_clusters: usize,
    per_cluster: usize,
    feature_dim: usize,
    cluster_spread: f64,
    offset: f64,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    if feature_dim == 0 {
        return Err(Error::invalid("feature_dim must be >= 1"));
    }
    if !(offset > 0.0 && offset.is_finite()) {
        return Err(Error::invalid(format!("offset must be > 0, got {offset}")));
    }
    if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
        return Err(Error::invalid(format!("cluster_spread must be > 0, got {cluster_spread}")));
    }
    let mut rng = rng::stream(seed, &[rng::STREAM_POOL]);
    let unit = Normal::new(0.0f64, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, cluster_spread).expect("spread validated");
    let mut pool = Vec::with_capacity(num_clusters * per_cluster);
    for _ in 0..num_clusters {
        let raw: Vec<f64> = (0..feature_dim).map(|_| 1.0 + unit.sample(&mut rng).abs()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let center: Vec<f64> = raw.iter().map(|v| -offset * v / norm).collect();
        for _ in 0..per_cluster {
            pool.push(center.iter().map(|&c| (c + noise.sample(&mut rng)) as f32).collect());
        }
    }
    Ok(pool)
}

/// Corrupts a clean manifest according to `spec`.
pub fn inject_noise(
    clean: &DatasetManifest,
    pool: &[Vec<f32>],
    spec: &NoiseSpec,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if clean.samples.iter().any(|s| s.provenance != Provenance::Clean) {
        return Err(Error::invalid("inject_noise expects an all-clean manifest"));
    }
    let n = clean.len();
    let k = clean.num_classes;
    let (n_closed, n_open) = spec.noisy_counts(n);
    if pool.len() < n_open {
        return Err(Error::InsufficientPool { needed: n_open, available: pool.len() });
    }
    if n_open > 0 {
        if let Some(bad) = pool.iter().find(|v| v.len() != clean.feature_dim) {
            return Err(Error::DimensionMismatch(format!(
                "pool vector has dimension {}, dataset has {}",
                bad.len(),
                clean.feature_dim
            )));
        }
    }

    let mut rng = rng::stream(spec.seed, &[rng::STREAM_NOISE]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pool_order: Vec<usize> = (0..pool.len()).collect();
    pool_order.shuffle(&mut rng);

    let mut samples = clean.samples.clone();
    for &i in &order[..n_closed] {
        let s = &mut samples[i];
        let t = s.true_class.expect("clean samples carry a class");
        let r = rng.random_range(0..k - 1);
        s.observed = if r >= t { r + 1 } else { r };
        s.provenance = Provenance::Closed;
    }
    for (&i, &p) in order[n_closed..n_closed + n_open].iter().zip(&pool_order) {
        let s = &mut samples[i];
        s.features = pool[p].clone();
        s.observed = rng.random_range(0..k);
        s.true_class = None;
        s.provenance = Provenance::Open;
    }

    let counts = ProvenanceCounts::scan(&samples);
    Ok(DatasetManifest {
        samples,
        num_classes: k,
        feature_dim: clean.feature_dim,
        noise_spec: spec.clone(),
        counts,
    })
}
