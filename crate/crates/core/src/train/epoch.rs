use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use super::{gather_rows, one_hot_rows, Learner, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::eval::argmax;
use crate::gmm::{fit_em, group_posteriors, normalize_losses, partition, GmmConfig, GmmModel, Partition, PosteriorSplit};
use crate::losses::{ce_loss_taped, dm_loss_taped, sl_dataset_loss, sl_loss_taped};
use crate::nn::{Matrix, Mlp, Tape};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    CrossEntropy,
    SubjectiveLogic,
}

/// One shuffled pass of mini-batch SGD over `(features, labels)`. Returns
/// the sample-weighted mean of the batch losses.
pub fn supervised_epoch(
    learner: &mut Learner,
    features: &Matrix,
    labels: &[usize],
    batch_size: usize,
    objective: Objective,
    rng: &mut Rng,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("supervised epoch over no samples".into()));
    }
    let k = learner.model.arch.num_classes();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let x = gather_rows(features, chunk);
        let y = one_hot_rows(&chunk.iter().map(|&i| labels[i]).collect::<Vec<_>>(), k);
        let loss = learner.step(&x, |tape, logits| match objective {
            Objective::CrossEntropy => {
                let p = tape.softmax_rows(logits);
                ce_loss_taped(tape, p, &y)
            }
            Objective::SubjectiveLogic => sl_loss_taped(tape, logits, &y),
        })?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmupStats {
    /// Mean loss of every NetD warm-up epoch.
    pub netd_losses: Vec<f64>,
    pub nets_losses: Vec<f64>,
}

/// Independent warm-up passes on the noisy labels: cross-entropy for NetD,
/// subjective-logic loss for NetS, both at the initial learning rate.
pub fn warmup(netd: &mut Learner, nets: &mut Learner, data: &TrainData, cfg: &TrainConfig) -> Result<WarmupStats> {
    let mut stats = WarmupStats::default();
    netd.opt.set_learning_rate(cfg.sgd.learning_rate);
    nets.opt.set_learning_rate(cfg.sgd.learning_rate);
    let mut rd = rng::stream(cfg.seed, &[rng::STREAM_WARMUP_D]);
    for _ in 0..cfg.warmup_epochs_netd {
        let l = supervised_epoch(netd, &data.features, &data.labels, cfg.batch_size, Objective::CrossEntropy, &mut rd)?;
        stats.netd_losses.push(l);
    }
    let mut rs = rng::stream(cfg.seed, &[rng::STREAM_WARMUP_S]);
    for _ in 0..cfg.warmup_epochs_nets {
        let l =
            supervised_epoch(nets, &data.features, &data.labels, cfg.batch_size, Objective::SubjectiveLogic, &mut rs)?;
        stats.nets_losses.push(l);
    }
    Ok(stats)
}

/// Everything derived from one pass of NetS over the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub mean_loss: f64,
    pub raw_losses: Vec<f64>,
    pub normalized: Vec<f64>,
    pub gmm: GmmModel,
    pub split: PosteriorSplit,
    pub partition: Partition,
}

/// Per-sample NetS losses on the observed labels, normalised and split.
pub fn split_by_losses(nets: &Mlp, data: &TrainData, gmm: &GmmConfig) -> Result<SplitState> {
    let (mean_loss, raw_losses) = sl_dataset_loss(nets, &data.features, &data.labels)?;
    let normalized = normalize_losses(&raw_losses);
    let model = fit_em(&normalized, gmm)?;
    let split = group_posteriors(&model, &normalized, gmm);
    let partition = partition(&split);
    Ok(SplitState { mean_loss, raw_losses, normalized, gmm: model, split, partition })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetdEpochStats {
    pub iterations: usize,
    pub mean_total: f64,
    pub mean_labeled: f64,
    /// `None` when the unlabelled set was empty.
    pub mean_unlabeled: Option<f64>,
    pub mean_reg: f64,
    /// Sorted, de-duplicated indices of every sample that entered a step.
    pub touched: Vec<usize>,
}

fn draw_unlabeled(unlabeled: &[usize], b: usize, rng: &mut Rng) -> Vec<usize> {
    if unlabeled.is_empty() {
        Vec::new()
    } else if unlabeled.len() >= b {
        index::sample(rng, unlabeled.len(), b).into_iter().map(|i| unlabeled[i]).collect()
    } else {
        (0..b).map(|_| unlabeled[rng.random_range(0..unlabeled.len())]).collect()
    }
}

/// One epoch of semi-supervised NetD training.
///
/// Runs `ceil(|X| / B)` steps. Labelled batches walk a shuffled order of
/// `labeled` (wrapping around to fill the last batch); unlabelled batches
/// are drawn from `unlabeled`, with replacement when it holds fewer than `B`
/// samples. An empty `labeled` set performs no step.
pub fn train_netd_epoch(
    netd: &mut Learner,
    data: &TrainData,
    labeled: &[(usize, f64)],
    unlabeled: &[usize],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<NetdEpochStats> {
    let mut stats = NetdEpochStats::default();
    if labeled.is_empty() {
        return Ok(stats);
    }
    let b = cfg.batch_size;
    let k = data.num_classes;
    let params = cfg.refine_params();
    let iterations = labeled.len().div_ceil(b);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(rng);
    let mut touched = vec![false; data.len()];
    let (mut sum_total, mut sum_x, mut sum_u, mut sum_reg) = (0.0, 0.0, 0.0, 0.0);

    for it in 0..iterations {
        let picks: Vec<(usize, f64)> = (0..b).map(|j| labeled[order[(it * b + j) % order.len()]]).collect();
        let xi: Vec<usize> = picks.iter().map(|p| p.0).collect();
        let w: Vec<f64> = picks.iter().map(|p| p.1).collect();
        let ui = draw_unlabeled(unlabeled, b, rng);
        for &i in xi.iter().chain(&ui) {
            touched[i] = true;
        }

        let xs = gather_rows(&data.features, &xi);
        let ys = one_hot_rows(&xi.iter().map(|&i| data.labels[i]).collect::<Vec<_>>(), k);
        let us = gather_rows(&data.features, &ui);
        let batch = super::refine_batch(&netd.model, &xs, &ys, &w, &us, &params, rng)?;

        let mut tape = Tape::new();
        let fwd = netd.model.forward_taped(&mut tape, &batch.inputs)?;
        let terms = dm_loss_taped(
            &mut tape,
            fwd.logits,
            &batch.labeled_targets(),
            &batch.unlabeled_targets(),
            cfg.loss_weights,
        );
        let total = tape.value(terms.total)[(0, 0)];
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "netd loss {total} at iteration {it} (|X| = {}, |U| = {})",
                labeled.len(),
                unlabeled.len()
            )));
        }
        let grads = netd.model.backward(&tape, &fwd, terms.total)?;
        netd.apply(total, &grads)?;

        sum_total += total;
        sum_x += tape.value(terms.labeled)[(0, 0)];
        sum_reg += tape.value(terms.reg)[(0, 0)];
        if let Some(u) = terms.unlabeled {
            sum_u += tape.value(u)[(0, 0)];
        }
    }
    let n = iterations as f64;
    stats.iterations = iterations;
    stats.mean_total = sum_total / n;
    stats.mean_labeled = sum_x / n;
    stats.mean_reg = sum_reg / n;
    stats.mean_unlabeled = (!unlabeled.is_empty()).then_some(sum_u / n);
    stats.touched = touched.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect();
    Ok(stats)
}

/// New hard label for every sample:
/// `argmax_c (w_cl p_c + (1 - w_cl) y_c)` with NetD's probabilities `p`.
pub fn relabel_for_nets(netd: &Mlp, data: &TrainData, split: &PosteriorSplit) -> Result<Vec<usize>> {
    if split.len() != data.len() {
        return Err(Error::Shape(format!("{} posterior rows vs {} samples", split.len(), data.len())));
    }
    let probs = netd.predict_probs(&data.features)?;
    let mut score = vec![0.0; data.num_classes];
    Ok(probs
        .iter_rows()
        .zip(&split.rows)
        .zip(&data.labels)
        .map(|((p, g), &y)| {
            let w = g.closed;
            for (c, s) in score.iter_mut().enumerate() {
                *s = w * p[c] + (1.0 - w) * if c == y { 1.0 } else { 0.0 };
            }
            argmax(&score)
        })
        .collect())
}

/// One full pass of NetS over the relabelled training set.
pub fn train_nets_epoch(
    nets: &mut Learner,
    data: &TrainData,
    relabels: &[usize],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    supervised_epoch(nets, &data.features, relabels, cfg.batch_size, Objective::SubjectiveLogic, rng)
}
