//! Accuracy, split quality and plain-text exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchgen::{DatasetManifest, Provenance};
use crate::error::{Error, Result};
use crate::gmm::PosteriorSplit;
use crate::nn::{Matrix, Mlp};

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn manifest_features(manifest: &DatasetManifest) -> Matrix {
    let d = manifest.feature_dim;
    let data = manifest.samples.iter().flat_map(|s| s.features.iter().map(|&v| f64::from(v))).collect();
    Matrix::from_vec(manifest.len(), d, data)
}

/// Fraction of samples whose predicted class equals the true class. The
/// manifest must be entirely clean.
pub fn test_accuracy(model: &Mlp, test: &DatasetManifest) -> Result<f64> {
    let labels = clean_labels(test)?;
    accuracy_on(model, &manifest_features(test), &labels)
}

pub(crate) fn clean_labels(test: &DatasetManifest) -> Result<Vec<usize>> {
    if test.is_empty() {
        return Err(Error::Empty("test set has no samples".into()));
    }
    test.samples
        .iter()
        .map(|s| match (s.provenance, s.true_class) {
            (Provenance::Clean, Some(t)) => Ok(t),
            _ => Err(Error::invalid(format!("test sample {} is not clean", s.id))),
        })
        .collect()
}

pub(crate) fn accuracy_on(model: &Mlp, features: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = model.forward_logits(features)?;
    let hits = logits.iter_rows().zip(labels).filter(|(row, &t)| argmax(row) == t).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Counts of (true provenance) x (predicted group), both indexed in the
/// order clean, closed, open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitConfusion {
    pub counts: [[usize; 3]; 3],
}

impl SplitConfusion {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Number of samples whose true provenance is `p`.
    pub fn support(&self, p: Provenance) -> usize {
        self.counts[p.index()].iter().sum()
    }

    pub fn predicted(&self, p: Provenance) -> usize {
        self.counts.iter().map(|row| row[p.index()]).sum()
    }

    pub fn recall(&self, p: Provenance) -> Option<f64> {
        let s = self.support(p);
        (s > 0).then(|| self.counts[p.index()][p.index()] as f64 / s as f64)
    }

    pub fn precision(&self, p: Provenance) -> Option<f64> {
        let s = self.predicted(p);
        (s > 0).then(|| self.counts[p.index()][p.index()] as f64 / s as f64)
    }

    /// Mean recall over groups that occur in the data.
    pub fn balanced_accuracy(&self) -> f64 {
        let recalls: Vec<f64> = Provenance::ALL.iter().filter_map(|&p| self.recall(p)).collect();
        if recalls.is_empty() {
            return 0.0;
        }
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

/// Tallies each sample's max-posterior group against its provenance.
pub fn split_confusion(split: &PosteriorSplit, provenance: &[Provenance]) -> Result<SplitConfusion> {
    if split.len() != provenance.len() {
        return Err(Error::Shape(format!(
            "{} posterior rows vs {} provenance tags",
            split.len(),
            provenance.len()
        )));
    }
    let mut c = SplitConfusion::default();
    for (g, p) in split.rows.iter().zip(provenance) {
        c.counts[p.index()][g.argmax().index()] += 1;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_epoch: Vec<f64>,
    pub best: f64,
    pub last: f64,
}

impl AccuracyReport {
    pub fn from_series(per_epoch: Vec<f64>) -> Option<Self> {
        let last = *per_epoch.last()?;
        let best = per_epoch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(AccuracyReport { per_epoch, best, last })
    }

    pub fn gap(&self) -> f64 {
        self.best - self.last
    }
}

/// Per-provenance counts over `bins` uniform bins on `[0, 1]`; the last bin
/// is closed on the right. Values outside the range are clamped.
pub fn loss_histogram(losses: &[f64], provenance: &[Provenance], bins: usize) -> Result<[Vec<usize>; 3]> {
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    if losses.len() != provenance.len() {
        return Err(Error::Shape(format!("{} losses vs {} provenance tags", losses.len(), provenance.len())));
    }
    let mut hist = [vec![0; bins], vec![0; bins], vec![0; bins]];
    for (&x, p) in losses.iter().zip(provenance) {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("loss {x}")));
        }
        let b = ((x.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        hist[p.index()][b] += 1;
    }
    Ok(hist)
}

/// Writes `bin_lo,bin_hi,clean,closed,open`, one line per bin.
pub fn export_loss_histogram(
    losses: &[f64],
    provenance: &[Provenance],
    bins: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let hist = loss_histogram(losses, provenance, bins)?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "bin_lo,bin_hi,clean,closed,open")?;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        writeln!(out, "{lo},{hi},{},{},{}", hist[0][b], hist[1][b], hist[2][b])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `id,provenance,f0,..` with the model's penultimate activations.
pub fn export_features(model: &Mlp, manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let (features, _) = model.forward_with_features(&manifest_features(manifest))?;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "id,provenance")?;
    for j in 0..features.cols() {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for (s, row) in manifest.samples.iter().zip(features.iter_rows()) {
        write!(out, "{},{}", s.id, s.provenance)?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `loss,w,w_op,w_cl,provenance` per sample.
pub fn export_posteriors(
    losses: &[f64],
    split: &PosteriorSplit,
    provenance: &[Provenance],
    path: impl AsRef<Path>,
) -> Result<()> {
    if losses.len() != split.len() || losses.len() != provenance.len() {
        return Err(Error::Shape("losses, posteriors and provenance differ in length".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "loss,w,w_op,w_cl,provenance")?;
    for ((x, g), p) in losses.iter().zip(&split.rows).zip(provenance) {
        writeln!(out, "{x},{},{},{},{p}", g.clean, g.open, g.closed)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{make_synthetic_clean, LabeledSample, NoiseSpec, ProvenanceCounts};
    use crate::gmm::GroupPosterior;
    use crate::nn::{Architecture, Role};

    fn linear_model(k: usize, d: usize, weight: Vec<f64>) -> Mlp {
        let arch = Architecture::new(vec![d, k]).unwrap();
        let mut m = Mlp::init(&arch, Role::NetD, 0);
        m.layers[0].weight = Matrix::from_vec(d, k, weight);
        m
    }

    fn one_hot_manifest(k: usize, labels: &[usize]) -> DatasetManifest {
        let samples: Vec<LabeledSample> = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut f = vec![0.0f32; k];
                f[c] = 1.0;
                LabeledSample { id: i, features: f, observed: c, true_class: Some(c), provenance: Provenance::Clean }
            })
            .collect();
        let counts = ProvenanceCounts::scan(&samples);
        DatasetManifest { samples, num_classes: k, feature_dim: k, noise_spec: NoiseSpec::clean(0), counts }
    }

    fn identity(k: usize) -> Vec<f64> {
        (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn argmax_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn perfect_and_constant_models() {
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let test = one_hot_manifest(10, &labels);
        assert_eq!(test_accuracy(&linear_model(10, 10, identity(10)), &test).unwrap(), 1.0);
        let constant = linear_model(10, 10, vec![0.0; 100]);
        assert!((test_accuracy(&constant, &test).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let test = make_synthetic_clean(3, 20, 4, 1.0, 4).unwrap();
        let model = Mlp::init(&Architecture::mlp(4, &[8], 3).unwrap(), Role::NetD, 2);
        let a = test_accuracy(&model, &test).unwrap();
        let mut shuffled = test.clone();
        shuffled.samples.reverse();
        assert_eq!(a, test_accuracy(&model, &shuffled).unwrap());
    }

    #[test]
    fn noisy_or_empty_test_set_rejected() {
        let mut test = one_hot_manifest(2, &[0, 1]);
        let model = linear_model(2, 2, identity(2));
        test.samples[0].provenance = Provenance::Closed;
        assert!(test_accuracy(&model, &test).is_err());
        assert!(matches!(test_accuracy(&model, &one_hot_manifest(2, &[])), Err(Error::Empty(_))));
    }

    fn row(clean: f64, open: f64, closed: f64) -> GroupPosterior {
        GroupPosterior { clean, open, closed }
    }

    #[test]
    fn perfect_split_is_diagonal() {
        let split = PosteriorSplit { rows: vec![row(1., 0., 0.), row(0., 0., 1.), row(0., 1., 0.)] };
        let prov = [Provenance::Clean, Provenance::Closed, Provenance::Open];
        let c = split_confusion(&split, &prov).unwrap();
        assert_eq!(c.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        assert_eq!(c.balanced_accuracy(), 1.0);
        assert_eq!(c.precision(Provenance::Open), Some(1.0));
    }

    #[test]
    fn uniform_posteriors_go_to_clean_column() {
        let third = 1.0 / 3.0;
        let split = PosteriorSplit { rows: vec![row(third, third, third); 3] };
        let prov = [Provenance::Clean, Provenance::Closed, Provenance::Open];
        let c = split_confusion(&split, &prov).unwrap();
        assert_eq!(c.counts, [[1, 0, 0], [1, 0, 0], [1, 0, 0]]);
        for p in Provenance::ALL {
            assert_eq!(c.support(p), 1);
        }
        assert!((c.balanced_accuracy() - third).abs() < 1e-12);
        assert!(split_confusion(&split, &prov[..2]).is_err());
    }

    #[test]
    fn balanced_accuracy_skips_absent_groups() {
        let split = PosteriorSplit { rows: vec![row(1., 0., 0.), row(0., 1., 0.)] };
        let c = split_confusion(&split, &[Provenance::Clean, Provenance::Clean]).unwrap();
        assert_eq!(c.recall(Provenance::Open), None);
        assert_eq!(c.balanced_accuracy(), 0.5);
    }

    #[test]
    fn accuracy_report_best_and_last() {
        let r = AccuracyReport::from_series(vec![0.5, 0.8, 0.7]).unwrap();
        assert_eq!((r.best, r.last), (0.8, 0.7));
        assert!((r.gap() - 0.1).abs() < 1e-12);
        assert!(AccuracyReport::from_series(vec![]).is_none());
    }

    #[test]
    fn histogram_cases() {
        let h = loss_histogram(&[0.1, 0.9], &[Provenance::Clean; 2], 2).unwrap();
        assert_eq!(h[0], vec![1, 1]);
        let h = loss_histogram(&[0.5, 1.0, 0.0], &[Provenance::Open; 3], 2).unwrap();
        assert_eq!(h[2], vec![1, 2]);
        let h = loss_histogram(&[0.3; 4], &[Provenance::Closed; 4], 5).unwrap();
        assert_eq!(h[1].iter().filter(|&&c| c > 0).count(), 1);
        assert!(loss_histogram(&[0.3], &[Provenance::Clean], 1).is_err());
    }

    #[test]
    fn exports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let losses = [0.05, 0.55, 0.95, 0.4];
        let prov = [Provenance::Clean, Provenance::Open, Provenance::Closed, Provenance::Clean];
        let path = dir.path().join("hist.csv");
        export_loss_histogram(&losses, &prov, 4, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut sums = [0usize; 3];
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            for g in 0..3 {
                sums[g] += cols[2 + g].parse::<usize>().unwrap();
            }
        }
        assert_eq!(sums, [2, 1, 1]);

        let manifest = make_synthetic_clean(2, 5, 3, 1.0, 1).unwrap();
        let model = Mlp::init(&Architecture::mlp(3, &[6], 2).unwrap(), Role::NetD, 1);
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        export_features(&model, &manifest, &a).unwrap();
        export_features(&model, &manifest, &b).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text, std::fs::read_to_string(&b).unwrap());
        let (feats, _) = model.forward_with_features(&manifest_features(&manifest)).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), manifest.len());
        for (r, line) in rows.iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 2 + 6);
            let parsed: Vec<f64> = cols[2..].iter().map(|c| c.parse().unwrap()).collect();
            assert_eq!(parsed.as_slice(), feats.row(r));
        }

        let split = PosteriorSplit { rows: vec![row(0.7, 0.2, 0.1); 4] };
        let post = dir.path().join("post.csv");
        export_posteriors(&losses, &split, &prov, &post).unwrap();
        let text = std::fs::read_to_string(&post).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0.05,0.7,0.2,0.1,clean");
    }
}
