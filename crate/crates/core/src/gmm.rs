//! One-dimensional Gaussian mixture over per-sample losses.
//!
//! Losses are min-max normalised to `[0, 1]`, a `psi`-component mixture is
//! fitted by EM, and each component is assigned to a group by its mean:
//! `mean <= mu_min` is clean, `mean >= mu_max` is closed-set, anything in
//! between is open-set. A sample's group posterior is the summed
//! responsibility of that group's components.

use serde::{Deserialize, Serialize};

use crate::benchgen::Provenance;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub num_components: usize,
    pub mu_min: f64,
    pub mu_max: f64,
    pub max_iters: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            num_components: 20,
            mu_min: 0.3,
            mu_max: 0.7,
            max_iters: 200,
            tol: 1e-7,
            variance_floor: 1e-6,
        }
    }
}

impl GmmConfig {
    /// Requirements for a three-way split: at least three components and
    /// `0 < mu_min < mu_max < 1`.
    pub fn validate(&self) -> Result<()> {
        if self.num_components < 3 {
            return Err(Error::invalid(format!(
                "psi must be >= 3 for a three-way split, got {}",
                self.num_components
            )));
        }
        if !(0.0 < self.mu_min && self.mu_min < self.mu_max && self.mu_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < mu_min < mu_max < 1, got mu_min={} mu_max={}",
                self.mu_min, self.mu_max
            )));
        }
        if !(self.variance_floor > 0.0) || !(self.tol >= 0.0) {
            return Err(Error::invalid("variance_floor must be > 0 and tol >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Mean per-sample log-likelihood before the first update and after
    /// every EM iteration.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn num_components(&self) -> usize {
        self.means.len()
    }

    fn log_weighted_densities(&self, x: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let var = self.variances[k];
            let w = self.weights[k];
            *o = if w > 0.0 {
                w.ln() - 0.5 * (LN_2PI + var.ln() + (x - self.means[k]).powi(2) / var)
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    /// Component responsibilities for `x`, written into `out`; returns the
    /// log marginal density.
    pub fn responsibilities(&self, x: f64, out: &mut [f64]) -> f64 {
        self.log_weighted_densities(x, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = out.iter().map(|&l| (l - max).exp()).sum();
        let log_norm = max + total.ln();
        out.iter_mut().for_each(|l| *l = (*l - log_norm).exp());
        log_norm
    }

    pub fn mean_log_likelihood(&self, data: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.num_components()];
        data.iter().map(|&x| self.responsibilities(x, &mut buf)).sum::<f64>() / data.len() as f64
    }
}

/// Min-max rescale to `[0, 1]`; a constant vector maps to zeros.
pub fn normalize_losses(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&x| (x - min) / range).collect()
}

/// Fits a mixture with `cfg.num_components` components by EM.
///
/// Initialisation is deterministic: means at the evenly spaced quantiles
/// `(k + 1/2) / psi` of the sorted data, variances at the data variance
/// divided by `psi`, uniform weights.
pub fn fit_em(data: &[f64], cfg: &GmmConfig) -> Result<GmmModel> {
    let k = cfg.num_components;
    let n = data.len();
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} samples cannot support {k} components")));
    }
    if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("loss value {bad}")));
    }

    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mean = data.iter().sum::<f64>() / nf;
    let data_var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let init_var = (data_var / k as f64).max(cfg.variance_floor);
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: (0..k)
            .map(|j| sorted[(((j as f64 + 0.5) * nf / k as f64) as usize).min(n - 1)])
            .collect(),
        variances: vec![init_var; k],
        log_likelihood_trace: Vec::new(),
    };

    let mut resp = vec![0.0; n * k];
    let mut prev = f64::NEG_INFINITY;
    for iter in 0..=cfg.max_iters {
        // E-step at the current parameters.
        let mut ll = 0.0;
        for (x, r) in data.iter().zip(resp.chunks_exact_mut(k)) {
            ll += model.responsibilities(*x, r);
        }
        ll /= nf;
        model.log_likelihood_trace.push(ll);
        if iter == cfg.max_iters || (iter > 0 && ll - prev < cfg.tol) {
            break;
        }
        prev = ll;

        // M-step.
        for j in 0..k {
            let nk: f64 = resp.chunks_exact(k).map(|r| r[j]).sum();
            model.weights[j] = nk / nf;
            if nk <= 0.0 {
                continue;
            }
            let mu = resp.chunks_exact(k).zip(data).map(|(r, x)| r[j] * x).sum::<f64>() / nk;
            let var = resp.chunks_exact(k).zip(data).map(|(r, x)| r[j] * (x - mu).powi(2)).sum::<f64>() / nk;
            model.means[j] = mu;
            model.variances[j] = var.max(cfg.variance_floor);
        }
    }
    Ok(model)
}

/// Clean / open / closed posterior of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPosterior {
    pub clean: f64,
    pub open: f64,
    pub closed: f64,
}

impl GroupPosterior {
    /// Group with the largest posterior; ties go to clean, then open.
    pub fn argmax(&self) -> Provenance {
        if self.clean >= self.open && self.clean >= self.closed {
            Provenance::Clean
        } else if self.open >= self.closed {
            Provenance::Open
        } else {
            Provenance::Closed
        }
    }

    pub fn get(&self, group: Provenance) -> f64 {
        match group {
            Provenance::Clean => self.clean,
            Provenance::Open => self.open,
            Provenance::Closed => self.closed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PosteriorSplit {
    pub rows: Vec<GroupPosterior>,
}

impl PosteriorSplit {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Group each component belongs to by its mean.
pub fn component_groups(model: &GmmModel, cfg: &GmmConfig) -> Vec<Provenance> {
    model
        .means
        .iter()
        .map(|&m| {
            if m <= cfg.mu_min {
                Provenance::Clean
            } else if m >= cfg.mu_max {
                Provenance::Closed
            } else {
                Provenance::Open
            }
        })
        .collect()
}

pub fn group_posteriors(model: &GmmModel, losses: &[f64], cfg: &GmmConfig) -> PosteriorSplit {
    let groups = component_groups(model, cfg);
    let mut r = vec![0.0; model.num_components()];
    let rows = losses
        .iter()
        .map(|&x| {
            model.responsibilities(x, &mut r);
            let mut g = GroupPosterior { clean: 0.0, open: 0.0, closed: 0.0 };
            for (&rk, group) in r.iter().zip(&groups) {
                match group {
                    Provenance::Clean => g.clean += rk,
                    Provenance::Open => g.open += rk,
                    Provenance::Closed => g.closed += rk,
                }
            }
            // Rounding can push a sum a hair past one.
            g.clean = g.clean.min(1.0);
            g.open = g.open.min(1.0);
            g.closed = g.closed.min(1.0);
            g
        })
        .collect();
    PosteriorSplit { rows }
}

/// Index sets built from a split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Partition {
    /// Predicted clean samples with their clean posterior.
    pub labeled: Vec<(usize, f64)>,
    /// Predicted closed-set samples; their labels are discarded.
    pub unlabeled: Vec<usize>,
    /// Everything else, excluded from the classifier's update.
    pub discarded: Vec<usize>,
}

impl Partition {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.labeled.len(), self.unlabeled.len(), self.discarded.len())
    }
}

/// Strict-majority partition: clean if `w` beats both others, closed if
/// `w_cl` beats both others, otherwise discarded.
pub fn partition(split: &PosteriorSplit) -> Partition {
    let mut p = Partition::default();
    for (i, g) in split.rows.iter().enumerate() {
        if g.clean > g.open.max(g.closed) {
            p.labeled.push((i, g.clean));
        } else if g.closed > g.clean.max(g.open) {
            p.unlabeled.push(i);
        } else {
            p.discarded.push(i);
        }
    }
    p
}
