//! The training loop.
//!
//! Two classifiers share one architecture. NetS is trained with the
//! subjective-logic loss and its per-sample losses drive a three-way split
//! of the training set every epoch. NetD is trained semi-supervised on the
//! predicted-clean samples (labelled) and predicted closed-set samples
//! (unlabelled); predicted open-set samples are left out. NetD then relabels
//! the whole set for NetS's next pass, and NetD alone is used for inference.

mod epoch;
mod refine;
mod run;

use serde::{Deserialize, Serialize};

use crate::benchgen::{DatasetManifest, Provenance};
use crate::error::{Error, Result};
use crate::eval::{manifest_features, SplitConfusion};
use crate::gmm::GmmConfig;
use crate::losses::LossWeights;
use crate::nn::{AugmentSpec, Matrix, Mlp, ModelGrads, OptimState, SgdConfig, Tape, Var};

pub use epoch::{
    relabel_for_nets, split_by_losses, supervised_epoch, train_nets_epoch, train_netd_epoch, warmup, NetdEpochStats,
    Objective, SplitState, WarmupStats,
};
pub use refine::{
    augment_and_average, co_refine, guess_unlabeled, mixmatch_pair, refine_batch, MixedPair, RefineParams,
    RefinedBatch,
};
pub use run::{run, run_baseline_ce, RunOutput};

/// Version of the [`EpochReport`] layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Augmentations per sample (`M`).
    pub augmentations: usize,
    /// Sharpening temperature (`T`).
    pub temperature: f64,
    pub loss_weights: LossWeights,
    /// Beta parameter of the mixing coefficient.
    pub mix_alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub lr_drop_factor: f64,
    /// Main-loop epoch after which the learning rate is multiplied by
    /// `lr_drop_factor`. `None` means half of `epochs`.
    pub lr_drop_epoch: Option<usize>,
    pub warmup_epochs_netd: usize,
    pub warmup_epochs_nets: usize,
    pub gmm: GmmConfig,
    pub hidden: Vec<usize>,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            augmentations: 2,
            temperature: 0.5,
            loss_weights: LossWeights::default(),
            mix_alpha: 4.0,
            epochs: 200,
            batch_size: 64,
            sgd: SgdConfig::default(),
            lr_drop_factor: 0.1,
            lr_drop_epoch: None,
            warmup_epochs_netd: 10,
            warmup_epochs_nets: 30,
            gmm: GmmConfig::default(),
            hidden: vec![64, 64],
            augment: AugmentSpec { mode: crate::nn::AugmentMode::GaussianJitter, jitter_sigma: 0.1 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.augmentations < 1 {
            return Err(Error::invalid("augmentations (M) must be >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature (T) must be > 0, got {}", self.temperature)));
        }
        if !(self.mix_alpha > 0.0 && self.mix_alpha.is_finite()) {
            return Err(Error::invalid(format!("mix_alpha must be > 0, got {}", self.mix_alpha)));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return Err(Error::invalid(format!("lr_drop_factor must be > 0, got {}", self.lr_drop_factor)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid(format!("zero-width hidden layer in {:?}", self.hidden)));
        }
        for (name, v) in [
            ("learning_rate", self.sgd.learning_rate),
            ("momentum", self.sgd.momentum),
            ("weight_decay", self.sgd.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        self.loss_weights.validate()?;
        self.gmm.validate()?;
        self.augment.validate()
    }

    pub fn drop_epoch(&self) -> usize {
        self.lr_drop_epoch.unwrap_or(self.epochs / 2)
    }

    /// Learning rate used during main-loop epoch `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch > self.drop_epoch() {
            self.sgd.learning_rate * self.lr_drop_factor
        } else {
            self.sgd.learning_rate
        }
    }

    pub(crate) fn refine_params(&self) -> RefineParams {
        RefineParams {
            augmentations: self.augmentations,
            temperature: self.temperature,
            mix_alpha: self.mix_alpha,
            augment: self.augment,
        }
    }
}

/// Training set in matrix form. Provenance is kept for reporting only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
    pub num_classes: usize,
}

impl TrainData {
    pub fn from_manifest(m: &DatasetManifest) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::Empty("training manifest has no samples".into()));
        }
        Ok(TrainData {
            features: manifest_features(m),
            labels: m.samples.iter().map(|s| s.observed).collect(),
            provenance: m.samples.iter().map(|s| s.provenance).collect(),
            num_classes: m.num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

pub(crate) fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let c = m.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), c, data)
}

pub(crate) fn one_hot_rows(labels: &[usize], k: usize) -> Matrix {
    let mut y = Matrix::zeros(labels.len(), k);
    for (r, &c) in labels.iter().enumerate() {
        y[(r, c)] = 1.0;
    }
    y
}

/// A model with its optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub model: Mlp,
    pub opt: OptimState,
}

impl Learner {
    pub fn new(model: Mlp, sgd: SgdConfig) -> Result<Self> {
        let opt = OptimState::new(&model, sgd)?;
        Ok(Learner { model, opt })
    }

    /// One SGD step on `loss_fn(logits)`; returns the loss before the step.
    pub fn step(&mut self, batch: &Matrix, loss_fn: impl FnOnce(&mut Tape, Var) -> Var) -> Result<f64> {
        let (value, grads) = self.model.value_and_grad(batch, loss_fn)?;
        self.apply(value, &grads)?;
        Ok(value)
    }

    pub(crate) fn apply(&mut self, value: f64, grads: &ModelGrads) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} loss is {value}", self.model.role.as_str())));
        }
        self.opt.step(&mut self.model, grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Edm,
    Ce,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Edm => "edm",
            Algo::Ce => "ce",
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edm" => Ok(Algo::Edm),
            "ce" => Ok(Algo::Ce),
            other => Err(Error::invalid(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Structural checks recorded every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAudit {
    /// Predicted open-set samples that entered a NetD step. Always zero.
    pub discarded_in_netd: usize,
    /// Largest `|w + w_op + w_cl - 1|` over the epoch's posteriors.
    pub max_posterior_deviation: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub schema_version: u32,
    pub algo: Algo,
    /// 1-based main-loop epoch.
    pub epoch: usize,
    pub learning_rate: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_discarded: usize,
    pub netd_iterations: usize,
    /// Set when the predicted-clean set was empty and NetD was not updated.
    pub netd_skipped: bool,
    /// Mean NetS loss over the training set before the split.
    pub mean_sl_loss: Option<f64>,
    pub mean_labeled_loss: Option<f64>,
    pub mean_unlabeled_loss: Option<f64>,
    pub mean_reg_loss: Option<f64>,
    /// Mean loss of the NetS pass (EDM) or the cross-entropy pass (baseline).
    pub mean_train_loss: f64,
    pub test_accuracy: f64,
    pub split_confusion: Option<SplitConfusion>,
    pub split_balanced_accuracy: Option<f64>,
    pub audit: Option<EpochAudit>,
}
