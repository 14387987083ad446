//! Run configuration: a flat key-value text format with dotted sections.
//!
//! Grammar, one assignment per line:
//!
//! ```text
//! file       := { line LF }
//! line       := [ ws ] [ key ws* "=" ws* value ] [ comment ]
//! comment    := "#" any*
//! key        := segment { "." segment }
//! segment    := ident [ "[" index "]" ]
//! value      := bare token (no spaces); booleans are "true" / "false"
//! ```
//!
//! Example:
//!
//! ```text
//! # toy run
//! model.preset = toy
//! model.se_enabled = true
//! model.stages[0].dense_increment = 4
//! train.epochs = 100
//! train.seed = 7
//! ```
//!
//! Every key must be recognized; unknown keys are a config error. The
//! run seed is mandatory (`train.seed` or the `--seed` flag).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dpnse_core::augment::AugmentConfig;
use dpnse_core::lime::LimeConfig;
use dpnse_core::net::DpnSeConfig;

use crate::error::{CliError, Result};

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Fraction of the dataset held out of training.
    pub holdout_fraction: f64,
    /// Apply the augmentation pipeline to training images each epoch.
    pub augment: bool,
    /// Stop early once train accuracy reaches this threshold.
    pub early_stop_acc: Option<f64>,
}

/// Full run configuration for the harness.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: DpnSeConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub lime: LimeConfig,
}

fn parse_kv(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "{}:{}: expected `key = value`, got `{raw}`",
                origin.display(),
                lineno + 1
            )));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() || value.is_empty() {
            return Err(CliError::Config(format!(
                "{}:{}: empty key or value",
                origin.display(),
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Config(format!(
                "{}:{}: duplicate key `{key}`",
                origin.display(),
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// Typed accessor over the raw map that tracks which keys were consumed.
struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: `{v}` is not a non-negative integer"))),
        }
    }

    fn u64_opt(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("{key}: `{v}` is not a 64-bit unsigned integer"))),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: `{v}` is not a number"))),
        }
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("{key}: `{v}` is not a number"))),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(CliError::Config(format!("{key}: `{v}` is not `true` or `false`"))),
        }
    }
}

fn build_model(keys: &mut Keys) -> Result<DpnSeConfig> {
    let mut cfg = match keys.take("model.preset").as_deref() {
        None | Some("toy") => DpnSeConfig::toy(),
        Some("dpn92") => DpnSeConfig::dpn92(3, 4),
        Some(other) => {
            return Err(CliError::Config(format!(
                "model.preset: unknown preset `{other}` (expected toy or dpn92)"
            )))
        }
    };
    cfg.input_channels = keys.usize_or("model.input_channels", cfg.input_channels)?;
    cfg.input_size = keys.usize_or("model.input_size", cfg.input_size)?;
    cfg.stem_channels = keys.usize_or("model.stem_channels", cfg.stem_channels)?;
    cfg.num_classes = keys.usize_or("model.num_classes", cfg.num_classes)?;
    cfg.se_enabled = keys.bool_or("model.se_enabled", cfg.se_enabled)?;
    cfg.se_reduction = keys.usize_or("model.se_reduction", cfg.se_reduction)?;
    cfg.batch_norm = keys.bool_or("model.batch_norm", cfg.batch_norm)?;
    cfg.bn_eps = keys.f64_or("model.bn_eps", cfg.bn_eps)?;
    cfg.bn_momentum = keys.f64_or("model.bn_momentum", cfg.bn_momentum)?;
    for i in 0..cfg.stages.len() {
        let st = &mut cfg.stages[i];
        st.substages = keys.usize_or(&format!("model.stages[{i}].substages"), st.substages)?;
        st.residual_width =
            keys.usize_or(&format!("model.stages[{i}].residual_width"), st.residual_width)?;
        st.dense_increment =
            keys.usize_or(&format!("model.stages[{i}].dense_increment"), st.dense_increment)?;
        st.bottleneck_width =
            keys.usize_or(&format!("model.stages[{i}].bottleneck_width"), st.bottleneck_width)?;
        st.stride = keys.usize_or(&format!("model.stages[{i}].stride"), st.stride)?;
    }
    Ok(cfg)
}

/// Loads and validates a run config. `seed_override` (the `--seed` flag)
/// wins over `train.seed`; one of the two must be present.
pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut keys = Keys { map: parse_kv(&text, path)? };

    let model = build_model(&mut keys)?;

    let seed = match seed_override.or(keys.u64_opt("train.seed")?) {
        Some(s) => s,
        None => {
            return Err(CliError::Config(
                "a seed is mandatory: set train.seed or pass --seed".into(),
            ))
        }
    };

    let mut augment = AugmentConfig::with_seed(seed);
    augment.target = keys.usize_or("augment.target", augment.target)?;
    augment.flip_prob = keys.f64_or("augment.flip_prob", augment.flip_prob)?;
    augment.rotate_max_deg = keys.f64_or("augment.rotate_max_deg", augment.rotate_max_deg)?;
    augment.scale_range.0 = keys.f64_or("augment.scale_lo", augment.scale_range.0)?;
    augment.scale_range.1 = keys.f64_or("augment.scale_hi", augment.scale_range.1)?;

    let train = TrainConfig {
        epochs: keys.usize_or("train.epochs", 100)?,
        batch_size: keys.usize_or("train.batch_size", 16)?,
        learning_rate: keys.f64_or("train.learning_rate", 0.05)?,
        momentum: keys.f64_or("train.momentum", 0.9)?,
        seed,
        holdout_fraction: keys.f64_or("train.holdout_fraction", 0.2)?,
        augment: keys.bool_or("train.augment", false)?,
        early_stop_acc: keys.f64_opt("train.early_stop_acc")?,
    };

    let mut lime = LimeConfig::with_seed(seed);
    lime.grid = keys.usize_or("lime.grid", lime.grid)?;
    lime.n_samples = keys.usize_or("lime.n_samples", lime.n_samples)?;
    lime.sigma = keys.f64_or("lime.sigma", lime.sigma)?;
    lime.ridge_lambda = keys.f64_or("lime.ridge_lambda", lime.ridge_lambda)?;
    lime.top_k = keys.usize_or("lime.top_k", lime.top_k)?;

    if let Some(unknown) = keys.map.keys().next() {
        return Err(CliError::Config(format!("unknown key `{unknown}`")));
    }

    let cfg = RunConfig { model, augment, train, lime };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.model.validate()?;
    cfg.augment.validate()?;
    cfg.lime.validate()?;
    let t = &cfg.train;
    if t.batch_size == 0 {
        return Err(CliError::Config("train.batch_size must be >= 1".into()));
    }
    if !(t.learning_rate > 0.0) {
        return Err(CliError::Config("train.learning_rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&t.momentum) {
        return Err(CliError::Config("train.momentum must be in [0, 1)".into()));
    }
    if !(0.0..1.0).contains(&t.holdout_fraction) {
        return Err(CliError::Config("train.holdout_fraction must be in [0, 1)".into()));
    }
    if let Some(a) = t.early_stop_acc {
        if !(0.0..=1.0).contains(&a) {
            return Err(CliError::Config("train.early_stop_acc must be in [0, 1]".into()));
        }
    }
    if t.augment && cfg.augment.target != cfg.model.input_size {
        return Err(CliError::Config(format!(
            "train.augment requires augment.target ({}) to equal model.input_size ({})",
            cfg.augment.target, cfg.model.input_size
        )));
    }
    if cfg.lime.top_k == 0 {
        return Err(CliError::Config("lime.top_k must be >= 1".into()));
    }
    Ok(())
}
