//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use emb2emb::fgim::Variant;
use emb2emb::mapping::MappingKind;
use emb2emb::objectives::{Mode, LAMBDA_ADV_GRID, LAMBDA_STY_GRID};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const MAX_LAMBDA_ADV: f64 = 10.0;

/// Everything a run needs besides the subcommand's own file arguments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Sentence embedding size (LSTM hidden size).
    pub dim: usize,
    pub emb_dim: usize,
    pub vocab_cap: usize,
    pub p_drop: f64,
    pub tf_prob: f64,

    pub ae_epochs: usize,
    pub ae_batch_size: usize,
    pub ae_lr: f64,
    pub ae_patience: usize,
    pub ae_target_accuracy: f64,

    pub clf_hidden: usize,
    pub clf_epochs: usize,
    pub clf_batch_size: usize,
    pub clf_lr: f64,
    pub clf_noise_std: f64,
    pub clf_dropout: f64,
    pub clf_heldout: f64,

    pub mapping: MappingKind,
    pub layers: usize,
    /// Step size of the mean-offset baseline.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_adv: f64,
    pub lambda_sty: f64,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub disc_lr: f64,

    pub fgim: bool,
    pub fgim_variant: Variant,
    pub fgim_threshold: f64,

    pub sweep_param: String,
    pub lambda_adv_grid: Vec<f64>,
    pub lambda_sty_grid: Vec<f64>,
    /// Attribute the unsupervised model transfers towards.
    pub target_label: u8,

    pub train_text: Option<PathBuf>,
    pub valid_text: Option<PathBuf>,
    pub pool_text: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub train_source: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    pub valid_source: Option<PathBuf>,
    pub valid_target: Option<PathBuf>,
    pub test_source: Option<PathBuf>,
    pub test_target: Option<PathBuf>,
    pub autoencoder: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub judge: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Supervised,
            seed: 0,
            dim: 64,
            emb_dim: 64,
            vocab_cap: emb2emb::text::DEFAULT_VOCAB_CAP,
            p_drop: 0.1,
            tf_prob: 0.5,
            ae_epochs: 100,
            ae_batch_size: 32,
            ae_lr: 3e-3,
            ae_patience: 0,
            ae_target_accuracy: 1.0,
            clf_hidden: 64,
            clf_epochs: 30,
            clf_batch_size: 32,
            clf_lr: 1e-3,
            clf_noise_std: 0.1,
            clf_dropout: 0.1,
            clf_heldout: 0.1,
            mapping: MappingKind::OffsetNet,
            layers: 1,
            alpha: 1.0,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            lambda_adv: 0.0,
            lambda_sty: 0.5,
            disc_hidden: 64,
            disc_layers: 2,
            disc_lr: 1e-4,
            fgim: false,
            fgim_variant: Variant::ClassifierOnly,
            fgim_threshold: 0.9,
            sweep_param: "lambda_sty".into(),
            lambda_adv_grid: LAMBDA_ADV_GRID.to_vec(),
            lambda_sty_grid: LAMBDA_STY_GRID.to_vec(),
            target_label: 1,
            train_text: None,
            valid_text: None,
            pool_text: None,
            labeled: None,
            train_source: None,
            train_target: None,
            valid_source: None,
            valid_target: None,
            test_source: None,
            test_target: None,
            autoencoder: None,
            classifier: None,
            judge: None,
        }
    }
}

fn parse_value(key: &str, current: &Value, raw: &str) -> Result<Value, CliError> {
    let bad = |what: &str| CliError::Usage(format!("{key}: expected {what}, got {raw:?}"));
    let raw = raw.trim();
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw)
            .map(Value::Number)
            .map_err(|_| bad("a number"))?,
        Value::Array(_) => Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| serde_json::from_str::<serde_json::Number>(s).map(Value::Number))
                .collect::<Result<_, _>>()
                .map_err(|_| bad("a comma-separated list of numbers"))?,
        ),
        _ if raw.is_empty() => Value::Null,
        _ => Value::String(raw.to_string()),
    })
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(xs) => xs.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

impl RunConfig {
    fn as_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        }
    }

    /// Overrides one key, parsing `raw` according to the key's type.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        let mut map = self.as_map();
        let slot = map
            .get_mut(key)
            .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
        *slot = parse_value(key, slot, raw)?;
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. Relative paths in
    /// the file are resolved against `base`.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match base {
                Some(dir) if self.is_path_key(k) && !v.is_empty() && Path::new(v).is_relative() => {
                    self.set(k, &dir.join(v).to_string_lossy())?
                }
                _ => self.set(k, v)?,
            }
        }
        Ok(())
    }

    fn is_path_key(&self, key: &str) -> bool {
        let defaults = Self::default().as_map();
        matches!(defaults.get(key), Some(Value::Null))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path.parent())?;
        Ok(cfg)
    }

    /// One `key = value` line per field, sorted by key; parses back to the
    /// same config.
    pub fn to_text(&self) -> String {
        self.as_map()
            .iter()
            .map(|(k, v)| format!("{k} = {}\n", render(v)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |m: String| Err(CliError::Usage(m));
        let adv_ok = |x: f64| (0.0..=MAX_LAMBDA_ADV).contains(&x);
        if !adv_ok(self.lambda_adv) {
            return err(format!(
                "lambda_adv must be in [0, {MAX_LAMBDA_ADV}], got {}",
                self.lambda_adv
            ));
        }
        if let Some(x) = self.lambda_adv_grid.iter().find(|&&x| !adv_ok(x)) {
            return err(format!("lambda_adv_grid value {x} outside [0, {MAX_LAMBDA_ADV}]"));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.lambda_sty) {
            return err(format!("lambda_sty must be in [0, 1], got {}", self.lambda_sty));
        }
        if let Some(x) = self.lambda_sty_grid.iter().find(|&&x| !unit(x)) {
            return err(format!("lambda_sty_grid value {x} outside [0, 1]"));
        }
        for (name, x) in [
            ("p_drop", self.p_drop),
            ("tf_prob", self.tf_prob),
            ("ae_target_accuracy", self.ae_target_accuracy),
            ("clf_dropout", self.clf_dropout),
            ("fgim_threshold", self.fgim_threshold),
        ] {
            if !unit(x) {
                return err(format!("{name} must be in [0, 1], got {x}"));
            }
        }
        if !(0.0..1.0).contains(&self.clf_heldout) {
            return err(format!("clf_heldout must be in [0, 1), got {}", self.clf_heldout));
        }
        for (name, x) in [
            ("dim", self.dim),
            ("emb_dim", self.emb_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("ae_batch_size", self.ae_batch_size),
            ("clf_batch_size", self.clf_batch_size),
            ("clf_hidden", self.clf_hidden),
            ("disc_hidden", self.disc_hidden),
            ("layers", self.layers),
        ] {
            if x == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        for (name, x) in [
            ("lr", self.lr),
            ("ae_lr", self.ae_lr),
            ("clf_lr", self.clf_lr),
            ("disc_lr", self.disc_lr),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return err(format!("{name} must be positive, got {x}"));
            }
        }
        if self.target_label > 1 {
            return err(format!("target_label must be 0 or 1, got {}", self.target_label));
        }
        if !matches!(self.sweep_param.as_str(), "lambda_adv" | "lambda_sty") {
            return err(format!(
                "sweep_param must be lambda_adv or lambda_sty, got {}",
                self.sweep_param
            ));
        }
        Ok(())
    }

    /// The path under `key`, or a usage error naming the key.
    pub fn path(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        value
            .clone()
            .ok_or_else(|| CliError::Usage(format!("missing required path: set {key}=PATH")))
    }
}
