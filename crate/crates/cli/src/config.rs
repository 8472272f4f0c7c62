//! Option resolution: command-line flag, then config file, then default.
//!
//! The config file is flat `key = value` text, one entry per line, with `#`
//! comments. Keys are the long flag names without the leading dashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use edm_core::benchgen::{BlobsConfig, NoiseSpec};
use edm_core::nn::{AugmentMode, AugmentSpec};
use edm_core::train::{Algo, TrainConfig};
use serde::Serialize;

use crate::error::CliError;

pub const SEED_ENV: &str = "EDM_SEED";

/// Parsed config file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub entries: BTreeMap<String, String>,
}

/// Parses `key = value` lines. Underscores in keys are read as dashes.
pub fn parse_config_text(text: &str) -> Result<ConfigFile, CliError> {
    let mut entries = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(CliError::config(format!("config line {}: bad key {key:?}", n + 1)));
        }
        if entries.insert(key.clone(), value.to_string()).is_some() {
            return Err(CliError::config(format!("config line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(ConfigFile { entries })
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_text(&text)
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonOpts {
    /// Flat key=value file supplying defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experiment seed. EDM_SEED overrides it when set.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenOpts {
    /// Number of classes [default: 4].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Training samples per class [default: 500].
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Feature dimension [default: 8].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Standard deviation of each class cluster [default: 1].
    #[arg(long)]
    pub spread: Option<f64>,
    /// Total noise rate in [0, 1] [default: 0.6].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Closed-set share of the noise in [0, 1] [default: 0.5].
    #[arg(long)]
    pub omega: Option<f64>,
    /// Clusters in the open-set pool [default: 4].
    #[arg(long)]
    pub pool_clusters: Option<usize>,
    /// Distance of the open-set pool from the class centres [default: 6].
    #[arg(long)]
    pub pool_offset: Option<f64>,
    /// Clean test samples per class (0 for none).
    #[arg(long)]
    pub test_per_class: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenOutOpts {
    /// Training manifest to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Test manifest to write.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PathOpts {
    /// Training manifest to read.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Clean test manifest to read.
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    /// Directory for logs, checkpoints and exports.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOpts {
    /// Main-loop epochs after warm-up [default: 200].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 64].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate, dropped x0.1 after half the epochs [default: 0.02].
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum [default: 0.8].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// L2 weight decay [default: 5e-4].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Weight of the unlabelled squared error [default: 25].
    #[arg(long)]
    pub lambda_u: Option<f64>,
    /// Weight of the prior regulariser [default: 1].
    #[arg(long)]
    pub lambda_reg: Option<f64>,
    /// Beta parameter of the mixing coefficient [default: 4].
    #[arg(long)]
    pub mix_alpha: Option<f64>,
    /// Augmentations per sample [default: 2].
    #[arg(long)]
    pub m: Option<usize>,
    /// Sharpening temperature [default: 0.5].
    #[arg(long)]
    pub t: Option<f64>,
    /// Cross-entropy warm-up epochs for the classifier network [default: 10].
    #[arg(long)]
    pub warmup_d: Option<usize>,
    /// Subjective-logic warm-up epochs for the split network [default: 30].
    #[arg(long)]
    pub warmup_s: Option<usize>,
    /// Hidden widths, comma separated [default: 64,64].
    #[arg(long)]
    pub hidden: Option<String>,
    /// Standard deviation of the input jitter [default: 0.1 x spread].
    #[arg(long)]
    pub jitter: Option<f64>,
    /// `edm` or `ce` [default: edm].
    #[arg(long)]
    pub algo: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GmmOpts {
    /// Mixture components [default: 20].
    #[arg(long)]
    pub psi: Option<usize>,
    /// Component means at or below this count as clean [default: 0.3].
    #[arg(long)]
    pub mu_min: Option<f64>,
    /// Component means at or above this count as closed-set [default: 0.7].
    #[arg(long)]
    pub mu_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalOpts {
    /// Histogram bins for the loss export [default: 20].
    #[arg(long)]
    pub bins: Option<usize>,
}

const COMMON_KEYS: &[&str] = &["seed"];
const GEN_KEYS: &[&str] =
    &["classes", "per-class", "dim", "spread", "rho", "omega", "pool-clusters", "pool-offset", "test-per-class"];
const GEN_OUT_KEYS: &[&str] = &["out", "test-out"];
const PATH_KEYS: &[&str] = &["manifest", "test-manifest", "out-dir"];
const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch",
    "lr",
    "momentum",
    "weight-decay",
    "lambda-u",
    "lambda-reg",
    "mix-alpha",
    "m",
    "t",
    "warmup-d",
    "warmup-s",
    "hidden",
    "jitter",
    "algo",
];
const GMM_KEYS: &[&str] = &["psi", "mu-min", "mu-max"];
const EVAL_KEYS: &[&str] = &["bins", "checkpoint"];

/// Option groups accepted by one subcommand.
#[derive(Debug, Clone, Default)]
pub struct Sources<'a> {
    pub common: Option<&'a CommonOpts>,
    pub gen: Option<&'a GenOpts>,
    pub gen_out: Option<&'a GenOutOpts>,
    pub paths: Option<&'a PathOpts>,
    pub train: Option<&'a TrainOpts>,
    pub gmm: Option<&'a GmmOpts>,
    pub eval: Option<&'a EvalOpts>,
    pub checkpoint: Option<Option<&'a PathBuf>>,
}

impl Sources<'_> {
    fn known_keys(&self) -> Vec<&'static str> {
        let groups: [(bool, &[&str]); 8] = [
            (self.common.is_some(), COMMON_KEYS),
            (self.gen.is_some(), GEN_KEYS),
            (self.gen_out.is_some(), GEN_OUT_KEYS),
            (self.paths.is_some(), PATH_KEYS),
            (self.train.is_some(), TRAIN_KEYS),
            (self.gmm.is_some(), GMM_KEYS),
            (self.eval.is_some(), &EVAL_KEYS[..1]),
            (self.checkpoint.is_some(), &EVAL_KEYS[1..]),
        ];
        groups.iter().filter(|(on, _)| *on).flat_map(|(_, keys)| keys.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub test_out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub blobs: BlobsConfig,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub algo: Algo,
    pub bins: usize,
    pub paths: Paths,
    /// Set when the seed came from the environment.
    pub seed_from_env: bool,
}

struct Layer<'a> {
    file: &'a ConfigFile,
}

impl Layer<'_> {
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::config(format!("--{key}: cannot parse {raw:?} from config file"))),
        }
    }
}

fn flag<T: Clone, O>(group: Option<&O>, get: impl Fn(&O) -> &Option<T>) -> Option<T> {
    group.and_then(|g| get(g).clone())
}

fn check(ok: bool, key: &str, msg: impl std::fmt::Display) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(format!("--{key}: {msg}")))
    }
}

/// Resolves every option of the given groups. `env_seed` is the raw value
/// of `EDM_SEED`, if set.
pub fn parse_config(src: &Sources<'_>, env_seed: Option<&str>) -> Result<ResolvedConfig, CliError> {
    let file = match src.common.and_then(|c| c.config.as_ref()) {
        Some(path) => load_config_file(path)?,
        None => ConfigFile::default(),
    };
    let known = src.known_keys();
    if let Some(key) = file.entries.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(CliError::config(format!("unknown key {key:?} in config file")));
    }
    let l = Layer { file: &file };

    let mut blobs = BlobsConfig::default();
    let mut train = TrainConfig::default();
    let mut bins = 20;

    let (seed, seed_from_env) = match env_seed {
        Some(raw) => (
            raw.trim()
                .parse::<u64>()
                .map_err(|_| CliError::config(format!("{SEED_ENV}: cannot parse {raw:?} as a seed")))?,
            true,
        ),
        None => (l.pick(flag(src.common, |c| &c.seed), "seed")?.unwrap_or(0), false),
    };
    blobs.seed = seed;
    train.seed = seed;

    let g = src.gen;
    if let Some(v) = l.pick(flag(g, |o| &o.classes), "classes")? {
        blobs.classes = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.per_class), "per-class")? {
        blobs.per_class = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.dim), "dim")? {
        blobs.dim = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.spread), "spread")? {
        blobs.spread = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.rho), "rho")? {
        blobs.rho = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.omega), "omega")? {
        blobs.omega = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.pool_clusters), "pool-clusters")? {
        blobs.pool_clusters = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.pool_offset), "pool-offset")? {
        blobs.pool_offset = v;
    }
    if let Some(v) = l.pick(flag(g, |o| &o.test_per_class), "test-per-class")? {
        blobs.test_per_class = v;
    }
    check(blobs.classes >= 2, "classes", format!("must be >= 2, got {}", blobs.classes))?;
    check(blobs.per_class >= 1, "per-class", "must be >= 1")?;
    check(blobs.dim >= 2, "dim", format!("must be >= 2, got {}", blobs.dim))?;
    check(
        blobs.classes <= 2 * blobs.dim,
        "classes",
        format!("at most 2 * dim = {} classes fit, got {}", 2 * blobs.dim, blobs.classes),
    )?;
    check(blobs.spread > 0.0 && blobs.spread.is_finite(), "spread", format!("must be > 0, got {}", blobs.spread))?;
    check((0.0..=1.0).contains(&blobs.rho), "rho", format!("must be in [0, 1], got {}", blobs.rho))?;
    check((0.0..=1.0).contains(&blobs.omega), "omega", format!("must be in [0, 1], got {}", blobs.omega))?;
    check(blobs.pool_clusters >= 1, "pool-clusters", "must be >= 1")?;
    check(
        blobs.pool_offset > 0.0 && blobs.pool_offset.is_finite(),
        "pool-offset",
        format!("must be > 0, got {}", blobs.pool_offset),
    )?;

    // The default jitter follows the cluster spread.
    train.augment = AugmentSpec { mode: AugmentMode::GaussianJitter, jitter_sigma: 0.1 * blobs.spread };
    let t = src.train;
    if let Some(v) = l.pick(flag(t, |o| &o.epochs), "epochs")? {
        train.epochs = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.batch), "batch")? {
        train.batch_size = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.lr), "lr")? {
        train.sgd.learning_rate = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.momentum), "momentum")? {
        train.sgd.momentum = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.weight_decay), "weight-decay")? {
        train.sgd.weight_decay = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.lambda_u), "lambda-u")? {
        train.loss_weights.lambda_u = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.lambda_reg), "lambda-reg")? {
        train.loss_weights.lambda_reg = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.mix_alpha), "mix-alpha")? {
        train.mix_alpha = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.m), "m")? {
        train.augmentations = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.t), "t")? {
        train.temperature = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.warmup_d), "warmup-d")? {
        train.warmup_epochs_netd = v;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.warmup_s), "warmup-s")? {
        train.warmup_epochs_nets = v;
    }
    if let Some(v) = l.pick::<String>(flag(t, |o| &o.hidden), "hidden")? {
        train.hidden = parse_widths(&v)?;
    }
    if let Some(v) = l.pick(flag(t, |o| &o.jitter), "jitter")? {
        train.augment.jitter_sigma = v;
    }
    let algo = match l.pick::<String>(flag(t, |o| &o.algo), "algo")? {
        Some(a) => a.parse().map_err(|_| CliError::config(format!("--algo: expected edm or ce, got {a:?}")))?,
        None => Algo::Edm,
    };

    let gm = src.gmm;
    if let Some(v) = l.pick(flag(gm, |o| &o.psi), "psi")? {
        train.gmm.num_components = v;
    }
    if let Some(v) = l.pick(flag(gm, |o| &o.mu_min), "mu-min")? {
        train.gmm.mu_min = v;
    }
    if let Some(v) = l.pick(flag(gm, |o| &o.mu_max), "mu-max")? {
        train.gmm.mu_max = v;
    }
    if let Some(v) = l.pick(flag(src.eval, |o| &o.bins), "bins")? {
        bins = v;
    }

    check(train.batch_size >= 1, "batch", "must be >= 1")?;
    for (key, v) in [
        ("lr", train.sgd.learning_rate),
        ("momentum", train.sgd.momentum),
        ("weight-decay", train.sgd.weight_decay),
        ("lambda-u", train.loss_weights.lambda_u),
        ("lambda-reg", train.loss_weights.lambda_reg),
        ("jitter", train.augment.jitter_sigma),
    ] {
        check(v >= 0.0 && v.is_finite(), key, format!("must be finite and >= 0, got {v}"))?;
    }
    check(train.mix_alpha > 0.0 && train.mix_alpha.is_finite(), "mix-alpha", format!("must be > 0, got {}", train.mix_alpha))?;
    check(train.augmentations >= 1, "m", "must be >= 1")?;
    check(train.temperature > 0.0 && train.temperature.is_finite(), "t", format!("must be > 0, got {}", train.temperature))?;
    check(train.gmm.num_components >= 3, "psi", format!("must be >= 3, got {}", train.gmm.num_components))?;
    check(
        train.gmm.mu_min > 0.0 && train.gmm.mu_min < 1.0,
        "mu-min",
        format!("must be in (0, 1), got {}", train.gmm.mu_min),
    )?;
    check(
        train.gmm.mu_max > train.gmm.mu_min && train.gmm.mu_max < 1.0,
        "mu-max",
        format!("must be in (mu-min, 1), got {}", train.gmm.mu_max),
    )?;
    check(bins >= 2, "bins", format!("must be >= 2, got {bins}"))?;
    train.validate().map_err(|e| CliError::config(e.to_string()))?;

    let p = src.paths;
    let go = src.gen_out;
    let paths = Paths {
        out: l.pick(flag(go, |o| &o.out), "out")?,
        test_out: l.pick(flag(go, |o| &o.test_out), "test-out")?,
        manifest: l.pick(flag(p, |o| &o.manifest), "manifest")?,
        test_manifest: l.pick(flag(p, |o| &o.test_manifest), "test-manifest")?,
        out_dir: l.pick(flag(p, |o| &o.out_dir), "out-dir")?,
        checkpoint: l.pick(src.checkpoint.flatten().cloned(), "checkpoint")?,
    };

    Ok(ResolvedConfig { noise: blobs.noise_spec(), blobs, train, algo, bins, paths, seed_from_env })
}

fn parse_widths(raw: &str) -> Result<Vec<usize>, CliError> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    let widths = raw
        .split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::config(format!("--hidden: expected comma-separated widths, got {raw:?}")))?;
    check(!widths.contains(&0), "hidden", "widths must be >= 1")?;
    Ok(widths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all<'a>(c: &'a CommonOpts, g: &'a GenOpts, t: &'a TrainOpts, gm: &'a GmmOpts) -> Sources<'a> {
        Sources { common: Some(c), gen: Some(g), train: Some(t), gmm: Some(gm), ..Default::default() }
    }

    #[test]
    fn no_flags_gives_defaults() {
        let (c, g, t, gm) = Default::default();
        let r = parse_config(&all(&c, &g, &t, &gm), None).unwrap();
        let tr = &r.train;
        assert_eq!((tr.augmentations, tr.temperature, tr.mix_alpha), (2, 0.5, 4.0));
        assert_eq!((tr.loss_weights.lambda_u, tr.loss_weights.lambda_reg), (25.0, 1.0));
        assert_eq!((tr.gmm.num_components, tr.gmm.mu_min, tr.gmm.mu_max), (20, 0.3, 0.7));
        assert_eq!((tr.sgd.momentum, tr.sgd.weight_decay, tr.batch_size), (0.8, 5e-4, 64));
        assert_eq!(r.algo, Algo::Edm);
    }

    #[test]
    fn rho_out_of_range_names_the_flag() {
        let g = GenOpts { rho: Some(1.5), ..Default::default() };
        let (c, t, gm) = Default::default();
        let err = parse_config(&all(&c, &g, &t, &gm), None).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.starts_with("--rho")), "{err}");
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "# run settings\nt = 1\nlambda_u = 10\n").unwrap();
        let c = CommonOpts { config: Some(path), seed: None };
        let t = TrainOpts { t: Some(0.5), ..Default::default() };
        let (g, gm) = Default::default();
        let r = parse_config(&all(&c, &g, &t, &gm), None).unwrap();
        assert_eq!(r.train.temperature, 0.5);
        assert_eq!(r.train.loss_weights.lambda_u, 10.0);
    }

    #[test]
    fn env_seed_overrides_flag() {
        let c = CommonOpts { config: None, seed: Some(3) };
        let (g, t, gm) = Default::default();
        let r = parse_config(&all(&c, &g, &t, &gm), Some("11")).unwrap();
        assert_eq!((r.train.seed, r.blobs.seed, r.seed_from_env), (11, 11, true));
        assert!(parse_config(&all(&c, &g, &t, &gm), Some("x")).is_err());
    }

    #[test]
    fn file_errors() {
        assert!(parse_config_text("rho").is_err());
        assert!(parse_config_text("rho = 1\nrho = 2").is_err());
        assert!(parse_config_text("bad key = 1").is_err());
        let f = parse_config_text("  \n# only comments\nrho=0.2 # trailing\n").unwrap();
        assert_eq!(f.entries.get("rho").map(String::as_str), Some("0.2"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "psi = 5\n").unwrap();
        let c = CommonOpts { config: Some(path), seed: None };
        let src = Sources { common: Some(&c), ..Default::default() };
        let err = parse_config(&src, None).unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn other_range_errors() {
        let (c, g, gm) = Default::default();
        for (t, key) in [
            (TrainOpts { m: Some(0), ..Default::default() }, "--m"),
            (TrainOpts { t: Some(0.0), ..Default::default() }, "--t"),
            (TrainOpts { batch: Some(0), ..Default::default() }, "--batch"),
            (TrainOpts { algo: Some("sgd".into()), ..Default::default() }, "--algo"),
            (TrainOpts { hidden: Some("8,0".into()), ..Default::default() }, "--hidden"),
        ] {
            let err = parse_config(&all(&c, &g, &t, &gm), None).unwrap_err();
            assert!(err.to_string().contains(key), "{err}");
        }
        let gm = GmmOpts { mu_min: Some(0.8), ..Default::default() };
        let t = TrainOpts::default();
        assert!(parse_config(&all(&c, &g, &t, &gm), None).unwrap_err().to_string().contains("--mu-max"));
    }
}
