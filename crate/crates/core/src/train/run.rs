use super::{
    relabel_for_nets, split_by_losses, supervised_epoch, train_netd_epoch, train_nets_epoch, warmup, Algo, EpochAudit,
    EpochReport, Learner, Objective, TrainConfig, TrainData, REPORT_SCHEMA_VERSION,
};
use crate::benchgen::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::{accuracy_on, clean_labels, manifest_features, split_confusion, AccuracyReport};
use crate::nn::{Architecture, Matrix, Mlp, Role};
use crate::rng;

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// NetD after the last epoch (or after warm-up when `epochs == 0`).
    pub model: Mlp,
    /// NetD at its best test accuracy; equals `model` when no epoch ran.
    pub best_model: Mlp,
    /// Final NetS; `None` for the baseline.
    pub nets: Option<Mlp>,
    pub reports: Vec<EpochReport>,
    pub accuracy: Option<AccuracyReport>,
}

struct Prepared {
    data: TrainData,
    test_x: Matrix,
    test_y: Vec<usize>,
    arch: Architecture,
}

fn prepare(train: &DatasetManifest, test: &DatasetManifest, cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    if train.feature_dim != test.feature_dim || train.num_classes != test.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "train is {}-dim / {} classes, test is {}-dim / {} classes",
            train.feature_dim, train.num_classes, test.feature_dim, test.num_classes
        )));
    }
    let data = TrainData::from_manifest(train)?;
    let test_y = clean_labels(test)?;
    let arch = Architecture::mlp(train.feature_dim, &cfg.hidden, train.num_classes)?;
    Ok(Prepared { data, test_x: manifest_features(test), test_y, arch })
}

fn finish(model: Mlp, best: Option<Mlp>, nets: Option<Mlp>, reports: Vec<EpochReport>) -> RunOutput {
    let accuracy = AccuracyReport::from_series(reports.iter().map(|r| r.test_accuracy).collect());
    RunOutput { best_model: best.unwrap_or_else(|| model.clone()), model, nets, reports, accuracy }
}

/// Full two-network training. `on_epoch` sees every report together with
/// the current NetD as soon as the epoch ends; an error from it stops the
/// run.
pub fn run(
    train: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &Mlp) -> Result<()>,
) -> Result<RunOutput> {
    let Prepared { data, test_x, test_y, arch } = prepare(train, test, cfg)?;
    let mut netd = Learner::new(Mlp::init(&arch, Role::NetD, cfg.seed), cfg.sgd)?;
    let mut nets = Learner::new(Mlp::init(&arch, Role::NetS, cfg.seed), cfg.sgd)?;
    warmup(&mut netd, &mut nets, &data, cfg)?;

    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Mlp)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        netd.opt.set_learning_rate(lr);
        nets.opt.set_learning_rate(lr);

        let state = split_by_losses(&nets.model, &data, &cfg.gmm)?;
        let part = &state.partition;
        let mut rd = rng::stream(cfg.seed, &[rng::STREAM_NETD, epoch as u64]);
        let stats = train_netd_epoch(&mut netd, &data, &part.labeled, &part.unlabeled, cfg, &mut rd)?;
        let relabels = relabel_for_nets(&netd.model, &data, &state.split)?;
        let mut rs = rng::stream(cfg.seed, &[rng::STREAM_NETS, epoch as u64]);
        let nets_loss = train_nets_epoch(&mut nets, &data, &relabels, cfg, &mut rs)?;

        let accuracy = accuracy_on(&netd.model, &test_x, &test_y)?;
        let confusion = split_confusion(&state.split, &data.provenance)?;
        let discarded_in_netd = stats.touched.iter().filter(|i| part.discarded.binary_search(i).is_ok()).count();
        let max_posterior_deviation = state
            .split
            .rows
            .iter()
            .map(|g| (g.clean + g.open + g.closed - 1.0).abs())
            .fold(0.0, f64::max);
        let (nx, nu, no) = part.sizes();
        let skipped = stats.iterations == 0;
        let report = EpochReport {
            schema_version: REPORT_SCHEMA_VERSION,
            algo: Algo::Edm,
            epoch,
            learning_rate: lr,
            n_labeled: nx,
            n_unlabeled: nu,
            n_discarded: no,
            netd_iterations: stats.iterations,
            netd_skipped: skipped,
            mean_sl_loss: Some(state.mean_loss),
            mean_labeled_loss: (!skipped).then_some(stats.mean_labeled),
            mean_unlabeled_loss: stats.mean_unlabeled,
            mean_reg_loss: (!skipped).then_some(stats.mean_reg),
            mean_train_loss: nets_loss,
            test_accuracy: accuracy,
            split_balanced_accuracy: Some(confusion.balanced_accuracy()),
            split_confusion: Some(confusion),
            audit: Some(EpochAudit { discarded_in_netd, max_posterior_deviation }),
        };
        if best.as_ref().is_none_or(|(a, _)| accuracy > *a) {
            best = Some((accuracy, netd.model.clone()));
        }
        on_epoch(&report, &netd.model)?;
        reports.push(report);
    }
    Ok(finish(netd.model, best.map(|b| b.1), Some(nets.model), reports))
}

/// Control condition: the NetD warm-up followed by plain cross-entropy on
/// the noisy labels with the same schedule, no split and no relabelling.
pub fn run_baseline_ce(
    train: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &Mlp) -> Result<()>,
) -> Result<RunOutput> {
    let Prepared { data, test_x, test_y, arch } = prepare(train, test, cfg)?;
    let mut model = Learner::new(Mlp::init(&arch, Role::NetD, cfg.seed), cfg.sgd)?;
    let mut unused = Learner::new(Mlp::init(&arch, Role::NetS, cfg.seed), cfg.sgd)?;
    warmup(&mut model, &mut unused, &data, &TrainConfig { warmup_epochs_nets: 0, ..cfg.clone() })?;

    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Mlp)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        model.opt.set_learning_rate(lr);
        let mut r = rng::stream(cfg.seed, &[rng::STREAM_BASELINE, epoch as u64]);
        let loss =
            supervised_epoch(&mut model, &data.features, &data.labels, cfg.batch_size, Objective::CrossEntropy, &mut r)?;
        let accuracy = accuracy_on(&model.model, &test_x, &test_y)?;
        let report = EpochReport {
            schema_version: REPORT_SCHEMA_VERSION,
            algo: Algo::Ce,
            epoch,
            learning_rate: lr,
            n_labeled: data.len(),
            n_unlabeled: 0,
            n_discarded: 0,
            netd_iterations: data.len().div_ceil(cfg.batch_size),
            netd_skipped: false,
            mean_sl_loss: None,
            mean_labeled_loss: None,
            mean_unlabeled_loss: None,
            mean_reg_loss: None,
            mean_train_loss: loss,
            test_accuracy: accuracy,
            split_confusion: None,
            split_balanced_accuracy: None,
            audit: None,
        };
        if best.as_ref().is_none_or(|(a, _)| accuracy > *a) {
            best = Some((accuracy, model.model.clone()));
        }
        on_epoch(&report, &model.model)?;
        reports.push(report);
    }
    Ok(finish(model.model, best.map(|b| b.1), None, reports))
}
