//! Seeded minibatch training with an exponentially decaying learning rate,
//! top-k checkpoint retention and the summed-norm checkpoint ensemble.

mod adam;
mod checkpoint;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};

use crate::capsules::{argmax, RoutingConfig};
use crate::datasets::{stack_windows, DatasetKind, DatasetSplit, ImuWindow};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::loss_metrics::{margin_loss, margin_loss_var, MarginConfig};
use crate::model::{forward, infer, ModelConfig, ModelParams, DEFAULT_OUT_DIM};
use crate::numerics::{Tape, Tensor};

/// Shuffling draws from stream 1 so it never overlaps the initialization stream of the same seed.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    /// Multiplicative learning-rate factor per epoch.
    pub lr_decay: f64,
    pub routing: RoutingConfig,
    pub margin: MarginConfig,
    pub encoder: EncoderConfig,
    pub out_dim: usize,
    pub seed: u64,
    pub ensemble_k: usize,
    /// Run kernels on a single thread.
    pub deterministic: bool,
}

impl TrainConfig {
    /// Defaults with the routing hyperparameters used for `dataset`.
    pub fn for_dataset(dataset: DatasetKind) -> Self {
        let routing = match dataset {
            DatasetKind::RealWorld => RoutingConfig { iters: 7, eta: 0.01 },
            DatasetKind::Pamap2 | DatasetKind::Synthetic => RoutingConfig { iters: 3, eta: 0.1 },
        };
        TrainConfig {
            dataset,
            batch_size: 64,
            epochs: 200,
            initial_lr: 1e-3,
            lr_decay: 0.98,
            routing,
            margin: MarginConfig::default(),
            encoder: EncoderConfig::default(),
            out_dim: DEFAULT_OUT_DIM,
            seed: 0,
            ensemble_k: 5,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.routing.validate()?;
        self.margin.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.ensemble_k == 0 {
            return Err(Error::Config("batch_size, epochs and ensemble_k must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (counted from 0).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn model_config(&self, n_imu: usize, n_classes: usize) -> ModelConfig {
        ModelConfig { n_imu, n_classes, encoder: self.encoder, out_dim: self.out_dim, routing: self.routing }
    }

    /// Canonical `key=value` listing; the config hash is taken over this text.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let e = &self.encoder;
        let _ = writeln!(s, "dataset={}", self.dataset);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "initial_lr={:e}", self.initial_lr);
        let _ = writeln!(s, "lr_decay={:e}", self.lr_decay);
        let _ = writeln!(s, "routing_iters={}", self.routing.iters);
        let _ = writeln!(s, "eta={:e}", self.routing.eta);
        let _ = writeln!(s, "margin={:e},{:e},{:e}", self.margin.m_plus, self.margin.m_minus, self.margin.lambda_down);
        let _ = writeln!(s, "encoder={},{},{}", e.l1_channels, e.l2_channels, e.capsule_dim);
        let _ = writeln!(s, "out_dim={}", self.out_dim);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "ensemble_k={}", self.ensemble_k);
        s
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the minibatch predictions made while training this epoch.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_acc,lr";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.train_loss, self.val_loss, self.val_acc, self.lr)
    }
}

/// Returned by a training observer after every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    /// Checkpoint after the last completed epoch.
    pub last: Checkpoint,
    /// Retained checkpoint files, best validation loss first.
    pub retained: Vec<PathBuf>,
}

/// Capsule norms `[N, C]` for a list of windows, in chunks of `batch_size`.
pub fn infer_windows(params: &ModelParams, routing: &RoutingConfig, windows: &[ImuWindow], batch_size: usize) -> Result<Tensor> {
    let c = params.capsules.n_out();
    if windows.is_empty() {
        return Err(Error::Contract("no windows to evaluate".into()));
    }
    let mut norms = Vec::with_capacity(windows.len() * c);
    for chunk in windows.chunks(batch_size.max(1)) {
        let (x, _) = stack_windows(chunk)?;
        norms.extend_from_slice(infer(params, routing, &x)?.norms.data());
    }
    Tensor::from_vec(&[windows.len(), c], norms)
}

fn loss_and_accuracy(norms: &Tensor, labels: &[usize], margin: &MarginConfig) -> Result<(f64, f64)> {
    let c = norms.shape()[1];
    let correct = norms.data().chunks(c).zip(labels).filter(|(row, &l)| argmax(row) == l).count();
    Ok((margin_loss(norms, labels, margin)? as f64, correct as f64 / labels.len() as f64))
}

fn attach_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op, detail } => Error::NonFinite { op, detail: format!("{detail} (epoch {epoch}, batch {batch})") },
        other => other,
    }
}

struct Retention {
    k: usize,
    /// `(val_loss, epoch, path)`, best first.
    kept: Vec<(f32, u32, PathBuf)>,
}

impl Retention {
    fn offer(&mut self, ckpt: &Checkpoint, dir: &Path) -> Result<()> {
        let pos = self.kept.iter().position(|(l, _, _)| ckpt.val_loss < *l).unwrap_or(self.kept.len());
        if pos >= self.k {
            return Ok(());
        }
        let path = dir.join(format!("epoch_{:04}.arcc", ckpt.epoch));
        ckpt.save(&path)?;
        self.kept.insert(pos, (ckpt.val_loss, ckpt.epoch, path));
        if self.kept.len() > self.k {
            let (_, _, old) = self.kept.pop().expect("over capacity");
            std::fs::remove_file(old)?;
        }
        Ok(())
    }
}

/// Trains without an observer.
pub fn train(config: &TrainConfig, data: &DatasetSplit, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_with(config, data, out_dir, |_, _| Control::Continue)
}

/// Trains, calling `observer` after every epoch with its metrics and the
/// current parameters. With an output directory, writes `metrics.csv`,
/// `last.arcc` and the best `ensemble_k` epochs by validation loss.
pub fn train_with<F>(config: &TrainConfig, data: &DatasetSplit, out_dir: Option<&Path>, observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics, &ModelParams) -> Control + Send,
{
    config.validate()?;
    if config.deterministic {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| run(config, data, out_dir, observer))
    } else {
        run(config, data, out_dir, observer)
    }
}

fn run<F>(config: &TrainConfig, data: &DatasetSplit, out_dir: Option<&Path>, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics, &ModelParams) -> Control,
{
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::Split("training needs non-empty train and validation splits".into()));
    }
    let mcfg = config.model_config(data.n_imu(), data.n_classes());
    mcfg.validate()?;
    let mut params = ModelParams::init(&mcfg, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut adam = Adam::default();
    let hash = config.hash();
    let val_labels: Vec<usize> = data.validation.iter().map(|w| w.label).collect();

    let mut log = String::from(METRICS_HEADER);
    log.push('\n');
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut retention = Retention { k: config.ensemble_k, kept: Vec::new() };
    let mut history = Vec::new();
    let mut last = None;

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = stack_windows(idx.iter().map(|&i| &data.train[i]))?;
            let step = || -> Result<(f32, Vec<usize>, Vec<Tensor>)> {
                let mut tape = Tape::<f32>::new();
                let vars = params.register(&mut tape);
                let xv = tape.leaf(x);
                let fwd = forward(&mut tape, xv, &vars, &config.routing)?;
                let loss = margin_loss_var(&mut tape, fwd.norms, &labels, &config.margin)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFinite { op: "margin_loss".into(), detail: format!("loss {value}") });
                }
                let c = tape.shape(fwd.norms)[1];
                let preds = tape.value(fwd.norms).data().chunks(c).map(argmax).collect();
                let mut grads = tape.backward(loss)?;
                let g = vars.all().iter().map(|&v| grads.take(v).expect("parameter gradient")).collect();
                Ok((value, preds, g))
            };
            let (value, preds, grads) = step().map_err(|e| attach_batch(e, epoch, b))?;
            loss_sum += value as f64 * labels.len() as f64;
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            adam.step(&mut params.tensors_mut(), &grad_refs, lr)?;
        }
        let val_norms = infer_windows(&params, &config.routing, &data.validation, config.batch_size)?;
        let (val_loss, val_acc) = loss_and_accuracy(&val_norms, &val_labels, &config.margin)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            train_acc: correct as f64 / data.train.len() as f64,
            val_loss,
            val_acc,
            lr,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.5} train_acc {:.4} val_loss {:.5} val_acc {:.4} lr {:.3e}",
            m.train_loss,
            m.train_acc,
            m.val_loss,
            m.val_acc,
            lr
        );
        log.push_str(&m.csv_row());
        log.push('\n');
        let ckpt = Checkpoint {
            params: params.clone(),
            routing: config.routing,
            margin: config.margin,
            rng: RngState { seed: config.seed, word_pos: rng.get_word_pos() },
            epoch: epoch as u32,
            val_loss: val_loss as f32,
            config_hash: hash,
        };
        if let Some(dir) = out_dir {
            std::fs::write(dir.join("metrics.csv"), &log)?;
            ckpt.save(&dir.join("last.arcc"))?;
            retention.offer(&ckpt, dir)?;
        }
        let control = observer(&m, &params);
        history.push(m);
        last = Some(ckpt);
        if control == Control::Stop {
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        last: last.expect("at least one epoch"),
        retained: retention.kept.into_iter().map(|(_, _, p)| p).collect(),
    })
}

/// Per-sample argmax of the summed score rows (lowest index on ties).
pub fn vote_by_summed_norms(score_sets: &[Tensor]) -> Result<Vec<usize>> {
    let Some(first) = score_sets.first() else {
        return Err(Error::Contract("ensemble needs at least one member".into()));
    };
    let shape = first.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!("score sets must be [N, C], got {shape:?}")));
    }
    let mut total = vec![0.0f64; first.numel()];
    for s in score_sets {
        if s.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!("ensemble members disagree: {:?} vs {shape:?}", s.shape())));
        }
        for (t, &v) in total.iter_mut().zip(s.data()) {
            *t += v as f64;
        }
    }
    let c = shape[1];
    Ok(total
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Horizontal voting: sums every checkpoint's capsule norms, then takes the argmax.
pub fn ensemble_vote(checkpoints: &[Checkpoint], batch: &Tensor) -> Result<Vec<usize>> {
    let Some(first) = checkpoints.first() else {
        return Err(Error::Contract("ensemble needs at least one checkpoint".into()));
    };
    let dims = |c: &Checkpoint| (c.params.capsules.n_in(), c.params.capsules.n_out());
    if let Some(bad) = checkpoints.iter().find(|c| dims(c) != dims(first)) {
        return Err(Error::Dimension(format!(
            "incompatible checkpoints: {:?} vs {:?} (primary, classes)",
            dims(bad),
            dims(first)
        )));
    }
    let scores = checkpoints.iter().map(|c| Ok(infer(&c.params, &c.routing, batch)?.norms)).collect::<Result<Vec<_>>>()?;
    vote_by_summed_norms(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::for_dataset(DatasetKind::Pamap2);
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert!((cfg.lr_at(10) - 1e-3 * 0.98f64.powi(10)).abs() < 1e-18);
    }

    #[test]
    fn dataset_routing_defaults() {
        assert_eq!(TrainConfig::for_dataset(DatasetKind::Pamap2).routing, RoutingConfig { iters: 3, eta: 0.1 });
        assert_eq!(TrainConfig::for_dataset(DatasetKind::RealWorld).routing, RoutingConfig { iters: 7, eta: 0.01 });
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = TrainConfig::for_dataset(DatasetKind::Synthetic);
        assert!(TrainConfig { batch_size: 0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { lr_decay: 1.5, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { lr_decay: 0.0, ..base.clone() }.validate().is_err());
        assert!(base.validate().is_ok());
    }

    #[test]
    fn hash_tracks_the_config() {
        let a = TrainConfig::for_dataset(DatasetKind::Synthetic);
        let b = TrainConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
