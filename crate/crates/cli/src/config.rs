//! Flat `key = value` run settings. Files are applied first, flags after.

use std::path::PathBuf;

use arcnet::capsules::RoutingConfig;
use arcnet::datasets::{DatasetKind, SyntheticSpec};
use arcnet::encoder::EncoderConfig;
use arcnet::experiments::Aggregation;
use arcnet::loss_metrics::MarginConfig;
use arcnet::training::TrainConfig;
use arcnet::{Error, Result};

/// Every recognised key with its default, as printed by `--help` and the README.
pub const KEYS: [(&str, &str); 28] = [
    ("dataset", "inferred from the container's class names"),
    ("raw_dir", "none"),
    ("data", "none"),
    ("out", "none"),
    ("checkpoint", "the retained epochs in out (repeat the key to add more)"),
    ("seed", "0"),
    ("threads", "0 (all cores)"),
    ("deterministic", "false"),
    ("epochs", "200"),
    ("batch_size", "64"),
    ("initial_lr", "0.001"),
    ("lr_decay", "0.98"),
    ("routing_iters", "3, or 7 for realworld"),
    ("eta", "0.1, or 0.01 for realworld"),
    ("out_dim", "16"),
    ("l1_channels", "64"),
    ("l2_channels", "96"),
    ("capsule_dim", "96"),
    ("m_plus", "0.95"),
    ("m_minus", "0.05"),
    ("lambda_down", "0.5"),
    ("ensemble_k", "5"),
    ("tol", "0.001"),
    ("probability", "1.0"),
    ("aggregation", "mean"),
    ("synth_imus", "2"),
    ("synth_classes", "4"),
    ("synth_windows_per_class", "50"),
];

pub fn keys_help() -> String {
    let mut out = String::from("Config file keys (default):\n");
    for (key, default) in KEYS {
        out.push_str(&format!("  {key:<24} {default}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<DatasetKind>,
    pub raw_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub routing_iters: Option<usize>,
    pub eta: Option<f32>,
    pub out_dim: usize,
    pub encoder: EncoderConfig,
    pub margin: MarginConfig,
    pub ensemble_k: usize,
    pub tol: f64,
    pub probability: f64,
    pub aggregation: Aggregation,
    pub synth_imus: usize,
    pub synth_classes: usize,
    pub synth_windows_per_class: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::for_dataset(DatasetKind::Synthetic);
        RunConfig {
            dataset: None,
            raw_dir: None,
            data: None,
            out: None,
            checkpoints: Vec::new(),
            seed: t.seed,
            threads: 0,
            deterministic: false,
            epochs: t.epochs,
            batch_size: t.batch_size,
            initial_lr: t.initial_lr,
            lr_decay: t.lr_decay,
            routing_iters: None,
            eta: None,
            out_dim: t.out_dim,
            encoder: t.encoder,
            margin: t.margin,
            ensemble_k: t.ensemble_k,
            tol: 1e-3,
            probability: 1.0,
            aggregation: Aggregation::Mean,
            synth_imus: 2,
            synth_classes: 4,
            synth_windows_per_class: 50,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("invalid value {value:?} for {key}: {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(value.parse()?),
            "raw_dir" => self.raw_dir = Some(PathBuf::from(value)),
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoints.push(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "deterministic" => self.deterministic = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "initial_lr" => self.initial_lr = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "routing_iters" => self.routing_iters = Some(parse(key, value)?),
            "eta" => self.eta = Some(parse(key, value)?),
            "out_dim" => self.out_dim = parse(key, value)?,
            "l1_channels" => self.encoder.l1_channels = parse(key, value)?,
            "l2_channels" => self.encoder.l2_channels = parse(key, value)?,
            "capsule_dim" => self.encoder.capsule_dim = parse(key, value)?,
            "m_plus" => self.margin.m_plus = parse(key, value)?,
            "m_minus" => self.margin.m_minus = parse(key, value)?,
            "lambda_down" => self.margin.lambda_down = parse(key, value)?,
            "ensemble_k" => self.ensemble_k = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "probability" => self.probability = parse(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "synth_imus" => self.synth_imus = parse(key, value)?,
            "synth_classes" => self.synth_classes = parse(key, value)?,
            "synth_windows_per_class" => self.synth_windows_per_class = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("config line {}: expected key = value, got {line:?}", n + 1)));
            };
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("config line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn train_config(&self, dataset: DatasetKind) -> TrainConfig {
        let base = TrainConfig::for_dataset(dataset);
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            initial_lr: self.initial_lr,
            lr_decay: self.lr_decay,
            routing: RoutingConfig {
                iters: self.routing_iters.unwrap_or(base.routing.iters),
                eta: self.eta.unwrap_or(base.routing.eta),
            },
            margin: self.margin,
            encoder: self.encoder,
            out_dim: self.out_dim,
            seed: self.seed,
            ensemble_k: self.ensemble_k,
            deterministic: self.deterministic,
            ..base
        }
    }

    pub fn synth_spec(&self) -> SyntheticSpec {
        SyntheticSpec::new(self.synth_imus, self.synth_classes, self.synth_windows_per_class, self.seed)
    }
}
