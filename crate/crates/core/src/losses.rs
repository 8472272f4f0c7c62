//! Training objectives.
//!
//! Each objective comes in two forms: a plain per-sample function on slices,
//! used for reporting and as a reference, and a batched form recorded on a
//! [`Tape`] for training. The batched forms reduce with a mean over rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Mlp, Tape, Var};

/// Floor applied inside every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Dirichlet parameters built from rectified logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletEvidence {
    pub alpha: Vec<f64>,
    pub strength: f64,
}

impl DirichletEvidence {
    /// Expected class probabilities `alpha / S`.
    pub fn mean(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.strength).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_u: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_u: 25.0, lambda_reg: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_u", self.lambda_u), ("lambda_reg", self.lambda_reg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn evidence(logits: &[f64]) -> DirichletEvidence {
    let alpha: Vec<f64> = logits.iter().map(|&z| z.max(0.0) + 1.0).collect();
    let strength = alpha.iter().sum();
    DirichletEvidence { alpha, strength }
}

fn one_hot_index(y: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

/// Subjective-logic loss of one sample:
/// `sum_c (y_c - alpha_c/S)^2 + alpha_c (S - alpha_c) / (S^2 (S + 1))`.
pub fn sl_loss(logits: &[f64], y: &[f64]) -> Result<f64> {
    if logits.len() != y.len() {
        return Err(Error::Shape(format!("{} logits vs {} label entries", logits.len(), y.len())));
    }
    if one_hot_index(y).is_none() {
        return Err(Error::invalid(format!("label {y:?} is not one-hot")));
    }
    let ev = evidence(logits);
    let s = ev.strength;
    Ok(ev
        .alpha
        .iter()
        .zip(y)
        .map(|(&a, &yc)| {
            let p = a / s;
            (yc - p).powi(2) + a * (s - a) / (s * s * (s + 1.0))
        })
        .sum())
}

/// Mean and per-sample subjective-logic loss of `model` over a labelled set.
/// The per-sample vector follows row order.
pub fn sl_dataset_loss(model: &Mlp, features: &Matrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if features.rows() == 0 {
        return Err(Error::Empty("subjective-logic loss over an empty dataset".into()));
    }
    if labels.len() != features.rows() {
        return Err(Error::Shape(format!("{} rows vs {} labels", features.rows(), labels.len())));
    }
    let logits = model.forward_logits(features)?;
    let k = logits.cols();
    let mut y = vec![0.0; k];
    let mut per_sample = Vec::with_capacity(labels.len());
    for (row, &label) in logits.iter_rows().zip(labels) {
        if label >= k {
            return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        y[label] = 1.0;
        per_sample.push(sl_loss(row, &y)?);
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((mean, per_sample))
}

/// `-sum_c label_c ln(max(p_c, eps))`.
pub fn ce_loss(probs: &[f64], label: &[f64]) -> f64 {
    probs.iter().zip(label).map(|(&p, &y)| if y == 0.0 { 0.0 } else { -y * p.max(PROB_FLOOR).ln() }).sum()
}

/// Squared Euclidean distance between two distributions.
pub fn unlabeled_mse(guess: &[f64], probs: &[f64]) -> Result<f64> {
    if guess.len() != probs.len() {
        return Err(Error::Shape(format!("{} vs {} entries", guess.len(), probs.len())));
    }
    Ok(guess.iter().zip(probs).map(|(g, p)| (g - p).powi(2)).sum())
}

/// KL divergence from the uniform prior to the batch-mean prediction,
/// `sum_c (1/K) ln((1/K) / max(pbar_c, eps))`. Zero exactly at uniform.
pub fn reg_loss(mean_probs: &[f64]) -> f64 {
    let prior = 1.0 / mean_probs.len() as f64;
    mean_probs.iter().map(|&p| prior * (prior / p.max(PROB_FLOOR)).ln()).sum()
}

/// `L_X + lambda_u L_U + lambda_reg L_reg`.
pub fn dm_loss(labeled: f64, unlabeled: f64, mean_probs: &[f64], weights: LossWeights) -> f64 {
    labeled + weights.lambda_u * unlabeled + weights.lambda_reg * reg_loss(mean_probs)
}

/// `p^(1/T)` renormalised.
pub fn temp_sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let inv = 1.0 / temperature;
    let powered: Vec<f64> = p.iter().map(|&x| x.max(0.0).powf(inv)).collect();
    let total: f64 = powered.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::invalid(format!("cannot sharpen {p:?}: no positive mass")));
    }
    Ok(powered.into_iter().map(|x| x / total).collect())
}

/// Batched subjective-logic loss (mean over rows) of `logits` against one-hot
/// rows `targets`.
pub fn sl_loss_taped(tape: &mut Tape, logits: Var, targets: &Matrix) -> Var {
    let n = tape.value(logits).rows().max(1) as f64;
    let y = tape.constant(targets.clone());
    let ev = tape.relu(logits);
    let alpha = tape.add_scalar(ev, 1.0);
    let s = tape.row_sum(alpha);
    let p = tape.div_col(alpha, s);
    let diff = tape.sub(y, p);
    let err = tape.square(diff);
    let p2 = tape.square(p);
    let pq = tape.sub(p, p2);
    let s1 = tape.add_scalar(s, 1.0);
    let var = tape.div_col(pq, s1);
    let per = tape.add(err, var);
    let total = tape.sum_all(per);
    tape.scale(total, 1.0 / n)
}

/// Batched cross-entropy (mean over rows) of softmax `probs` against soft
/// targets.
pub fn ce_loss_taped(tape: &mut Tape, probs: Var, targets: &Matrix) -> Var {
    let n = tape.value(probs).rows().max(1) as f64;
    let y = tape.constant(targets.clone());
    let logp = tape.log_floor(probs, PROB_FLOOR);
    let prod = tape.mul(y, logp);
    let total = tape.sum_all(prod);
    tape.scale(total, -1.0 / n)
}

/// Batched squared error (mean over rows) between `probs` and targets.
pub fn mse_loss_taped(tape: &mut Tape, probs: Var, targets: &Matrix) -> Var {
    let n = tape.value(probs).rows().max(1) as f64;
    let q = tape.constant(targets.clone());
    let diff = tape.sub(probs, q);
    let sq = tape.square(diff);
    let total = tape.sum_all(sq);
    tape.scale(total, 1.0 / n)
}

/// Uniform-prior regulariser over the row mean of `probs`.
pub fn reg_loss_taped(tape: &mut Tape, probs: Var) -> Var {
    let k = tape.value(probs).cols() as f64;
    let pbar = tape.mean_rows(probs);
    let logs = tape.log_floor(pbar, PROB_FLOOR);
    let total = tape.sum_all(logs);
    let scaled = tape.scale(total, -1.0 / k);
    tape.add_scalar(scaled, -k.ln())
}

/// Components of one recorded DM objective.
#[derive(Debug, Clone, Copy)]
pub struct DmTerms {
    pub total: Var,
    pub labeled: Var,
    pub unlabeled: Option<Var>,
    pub reg: Var,
}

/// DM objective on logits whose first `labeled_targets.rows()` rows are the
/// mixed labelled batch and the remaining rows the mixed unlabelled batch.
pub fn dm_loss_taped(
    tape: &mut Tape,
    logits: Var,
    labeled_targets: &Matrix,
    unlabeled_targets: &Matrix,
    weights: LossWeights,
) -> DmTerms {
    let nx = labeled_targets.rows();
    let nu = unlabeled_targets.rows();
    assert_eq!(tape.value(logits).rows(), nx + nu, "logit rows vs targets");
    let probs = tape.softmax_rows(logits);
    let px = tape.slice_rows(probs, 0, nx);
    let labeled = ce_loss_taped(tape, px, labeled_targets);
    let reg = reg_loss_taped(tape, probs);
    let reg_w = tape.scale(reg, weights.lambda_reg);
    let mut total = tape.add(labeled, reg_w);
    let unlabeled = (nu > 0).then(|| {
        let pu = tape.slice_rows(probs, nx, nu);
        mse_loss_taped(tape, pu, unlabeled_targets)
    });
    if let Some(lu) = unlabeled {
        let lu_w = tape.scale(lu, weights.lambda_u);
        total = tape.add(total, lu_w);
    }
    DmTerms { total, labeled, unlabeled, reg }
}
