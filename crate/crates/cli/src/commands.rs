//! Subcommand bodies. Each returns a JSON summary printed on success.

use std::fs::File;
use std::io::{LineWriter, Write};
use std::path::Path;

use edm_core::benchgen::{load_manifest, save_manifest, DatasetManifest, Provenance};
use edm_core::eval::{
    export_features, export_loss_histogram, export_posteriors, manifest_features, split_confusion, test_accuracy,
};
use edm_core::gmm::{fit_em, group_posteriors, normalize_losses};
use edm_core::losses::sl_dataset_loss;
use edm_core::nn::{load_checkpoint, save_checkpoint, Mlp};
use edm_core::train::{run, run_baseline_ce, split_by_losses, Algo, EpochReport, TrainData};
use serde_json::{json, Value};

use crate::config::ResolvedConfig;
use crate::error::CliError;
use crate::report::Ledger;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const BEST_CHECKPOINT: &str = "netd_best.ckpt";
pub const LAST_CHECKPOINT: &str = "netd_last.ckpt";
pub const NETS_CHECKPOINT: &str = "nets_last.ckpt";
pub const POSTERIORS: &str = "posteriors.csv";
pub const EVAL_REPORT: &str = "eval.json";
pub const FEATURES: &str = "features.csv";
pub const LOSS_HISTOGRAM: &str = "loss_histogram.csv";
pub const GENERATED_TRAIN: &str = "train.edm";
pub const GENERATED_TEST: &str = "test.edm";

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::config(format!("--{flag} is required")))
}

fn read_manifest(ledger: Option<&mut Ledger>, path: &Path) -> Result<DatasetManifest, CliError> {
    if let Some(ledger) = ledger {
        ledger.record_input(path)?;
    }
    load_manifest(path).map_err(CliError::data(format!("loading manifest {}", path.display())))
}

fn data_error(context: &str, msg: String) -> CliError {
    CliError::Data { context: context.into(), source: edm_core::Error::DimensionMismatch(msg) }
}

fn check_pair(train: &DatasetManifest, test: &DatasetManifest) -> Result<(), CliError> {
    if train.feature_dim != test.feature_dim || train.num_classes != test.num_classes {
        return Err(data_error(
            "test manifest",
            format!(
                "train is {}-dim with {} classes, test is {}-dim with {} classes",
                train.feature_dim, train.num_classes, test.feature_dim, test.num_classes
            ),
        ));
    }
    if let Some(s) = test.samples.iter().find(|s| s.provenance != Provenance::Clean) {
        return Err(CliError::Data {
            context: "test manifest".into(),
            source: edm_core::Error::Corrupt(format!("sample {} is {}, test sets must be clean", s.id, s.provenance)),
        });
    }
    Ok(())
}

fn save_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialise");
    std::fs::write(path, text + "\n").map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn gen(cfg: &ResolvedConfig) -> Result<Value, CliError> {
    let out = required(&cfg.paths.out, "out")?;
    let (train, test) = cfg.blobs.generate().map_err(CliError::runtime("generating benchmark"))?;
    save_manifest(&train, out).map_err(CliError::runtime(format!("writing {}", out.display())))?;
    let mut summary = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "gen",
        "out": out,
        "n": train.len(),
        "counts": train.counts,
    });
    if let Some(test_out) = &cfg.paths.test_out {
        let test = test.ok_or_else(|| CliError::config("--test-out needs --test-per-class > 0"))?;
        save_manifest(&test, test_out).map_err(CliError::runtime(format!("writing {}", test_out.display())))?;
        summary["test_out"] = json!(test_out);
        summary["test_n"] = json!(test.len());
    }
    Ok(summary)
}

/// Trains into the ledger's directory and writes the epoch log,
/// checkpoints and (for EDM) the final posterior dump.
fn train_into(
    ledger: &mut Ledger,
    cfg: &ResolvedConfig,
    train: &DatasetManifest,
    test: &DatasetManifest,
) -> Result<Value, CliError> {
    let log_path = ledger.artifact(EPOCH_LOG);
    let best_path = ledger.artifact(BEST_CHECKPOINT);
    let last_path = ledger.artifact(LAST_CHECKPOINT);
    let mut log = LineWriter::new(File::create(&log_path).map_err(CliError::io(format!("creating {}", log_path.display())))?);
    let mut best: Option<f64> = None;
    let on_epoch = |r: &EpochReport, model: &Mlp| -> edm_core::Result<()> {
        serde_json::to_writer(&mut log, r)?;
        log.write_all(b"\n")?;
        if best.is_none_or(|b| r.test_accuracy > b) {
            save_checkpoint(model, &best_path)?;
            best = Some(r.test_accuracy);
        }
        Ok(())
    };
    let out = match cfg.algo {
        Algo::Edm => run(train, test, &cfg.train, on_epoch),
        Algo::Ce => run_baseline_ce(train, test, &cfg.train, on_epoch),
    }
    .map_err(CliError::runtime("training"))?;
    log.flush().map_err(CliError::io("flushing epoch log"))?;

    if out.reports.is_empty() {
        save_checkpoint(&out.best_model, &best_path).map_err(CliError::runtime("writing best checkpoint"))?;
    }
    save_checkpoint(&out.model, &last_path).map_err(CliError::runtime("writing last checkpoint"))?;
    if let Some(nets) = &out.nets {
        let nets_path = ledger.artifact(NETS_CHECKPOINT);
        save_checkpoint(nets, &nets_path).map_err(CliError::runtime("writing nets checkpoint"))?;
        let data = TrainData::from_manifest(train).map_err(CliError::data("training manifest"))?;
        let state = split_by_losses(nets, &data, &cfg.train.gmm).map_err(CliError::runtime("final split"))?;
        let post_path = ledger.artifact(POSTERIORS);
        export_posteriors(&state.normalized, &state.split, &data.provenance, &post_path)
            .map_err(CliError::runtime("writing posteriors"))?;
    }
    Ok(json!({
        "algo": cfg.algo,
        "epochs": out.reports.len(),
        "best_accuracy": out.accuracy.as_ref().map(|a| a.best),
        "last_accuracy": out.accuracy.as_ref().map(|a| a.last),
    }))
}

/// Accuracy, split quality and exports for one checkpoint.
fn eval_into(
    ledger: &mut Ledger,
    cfg: &ResolvedConfig,
    checkpoint: &Path,
    manifest: &DatasetManifest,
    test: Option<&DatasetManifest>,
) -> Result<Value, CliError> {
    let model = load_checkpoint(checkpoint).map_err(CliError::data(format!("loading {}", checkpoint.display())))?;
    if model.arch.input_dim() != manifest.feature_dim || model.arch.num_classes() != manifest.num_classes {
        return Err(data_error(
            "checkpoint",
            format!(
                "model {} does not fit a {}-dim, {}-class manifest",
                model.arch, manifest.feature_dim, manifest.num_classes
            ),
        ));
    }
    if let Some(test) = test {
        check_pair(manifest, test)?;
    }
    let accuracy =
        test.map(|t| test_accuracy(&model, t)).transpose().map_err(CliError::runtime("test accuracy"))?;

    let labels: Vec<usize> = manifest.samples.iter().map(|s| s.observed).collect();
    let provenance: Vec<Provenance> = manifest.samples.iter().map(|s| s.provenance).collect();
    let (mean_loss, raw) =
        sl_dataset_loss(&model, &manifest_features(manifest), &labels).map_err(CliError::runtime("loss"))?;
    let normalized = normalize_losses(&raw);
    let gmm = fit_em(&normalized, &cfg.train.gmm).map_err(CliError::runtime("mixture fit"))?;
    let split = group_posteriors(&gmm, &normalized, &cfg.train.gmm);
    let confusion = split_confusion(&split, &provenance).map_err(CliError::runtime("split confusion"))?;

    export_features(&model, manifest, ledger.artifact(FEATURES)).map_err(CliError::runtime("writing features"))?;
    export_loss_histogram(&normalized, &provenance, cfg.bins, ledger.artifact(LOSS_HISTOGRAM))
        .map_err(CliError::runtime("writing loss histogram"))?;
    let report = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "checkpoint": checkpoint,
        "role": model.role,
        "architecture": model.arch.to_string(),
        "n": manifest.len(),
        "test_accuracy": accuracy,
        "mean_sl_loss": mean_loss,
        "split_confusion": confusion,
        "split_balanced_accuracy": confusion.balanced_accuracy(),
    });
    save_json(&ledger.artifact(EVAL_REPORT), &report)?;
    Ok(report)
}

/// Runs `body` with a ledger over `--out-dir`, then writes the command's
/// manifest whether or not the body succeeded.
fn with_ledger(
    cfg: &ResolvedConfig,
    command: &'static str,
    body: impl FnOnce(&mut Ledger) -> Result<Value, CliError>,
) -> Result<Value, CliError> {
    let out_dir = required(&cfg.paths.out_dir, "out-dir")?;
    let mut ledger = Ledger::create(out_dir, command)?;
    let manifest_path = out_dir.join(ledger.manifest_name());
    let result = body(&mut ledger);
    let finished = ledger.finish(cfg, result.as_ref().err());
    let mut summary = result?;
    finished?;
    summary["schema_version"] = json!(SUMMARY_SCHEMA_VERSION);
    summary["command"] = json!(command);
    summary["manifest"] = json!(manifest_path);
    Ok(summary)
}

pub fn train(cfg: &ResolvedConfig) -> Result<Value, CliError> {
    let manifest = required(&cfg.paths.manifest, "manifest")?;
    let test_manifest = required(&cfg.paths.test_manifest, "test-manifest")?;
    with_ledger(cfg, "train", |ledger| {
        let train = read_manifest(Some(ledger), manifest)?;
        let test = read_manifest(Some(ledger), test_manifest)?;
        check_pair(&train, &test)?;
        train_into(ledger, cfg, &train, &test)
    })
}

pub fn eval(cfg: &ResolvedConfig) -> Result<Value, CliError> {
    let checkpoint = required(&cfg.paths.checkpoint, "checkpoint")?;
    let manifest = required(&cfg.paths.manifest, "manifest")?;
    with_ledger(cfg, "eval", |ledger| {
        ledger.record_input(checkpoint)?;
        let data = read_manifest(Some(&mut *ledger), manifest)?;
        let test = match &cfg.paths.test_manifest {
            Some(p) => Some(read_manifest(Some(&mut *ledger), p)?),
            None => None,
        };
        eval_into(ledger, cfg, checkpoint, &data, test.as_ref())
    })
}

/// Generate (unless `--manifest` is given), train, then evaluate the last
/// NetD checkpoint on the training manifest and test set.
pub fn run_experiment(cfg: &ResolvedConfig) -> Result<Value, CliError> {
    if cfg.paths.manifest.is_some() != cfg.paths.test_manifest.is_some() {
        return Err(CliError::config("--manifest and --test-manifest must be given together"));
    }
    if cfg.paths.manifest.is_none() && cfg.blobs.test_per_class == 0 {
        return Err(CliError::config("--test-per-class must be > 0 when generating"));
    }
    with_ledger(cfg, "run", |ledger| {
        let (train, test) = match (&cfg.paths.manifest, &cfg.paths.test_manifest) {
            (Some(m), Some(t)) => (read_manifest(Some(&mut *ledger), m)?, read_manifest(Some(&mut *ledger), t)?),
            _ => {
                let (train, test) = cfg.blobs.generate().map_err(CliError::runtime("generating benchmark"))?;
                let test = test.expect("test_per_class checked above");
                save_manifest(&train, ledger.artifact(GENERATED_TRAIN))
                    .map_err(CliError::runtime("writing training manifest"))?;
                save_manifest(&test, ledger.artifact(GENERATED_TEST))
                    .map_err(CliError::runtime("writing test manifest"))?;
                (train, test)
            }
        };
        check_pair(&train, &test)?;
        let trained = train_into(ledger, cfg, &train, &test)?;
        let last = ledger.artifact(LAST_CHECKPOINT);
        let evaluated = eval_into(ledger, cfg, &last, &train, Some(&test))?;
        Ok(json!({ "train": trained, "eval": evaluated }))
    })
}
