//! Evaluation reports, the modality-corruption test and prior-matrix heatmaps.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{stack_windows, ImuWindow};
use crate::encoder::CAPSULES_PER_IMU;
use crate::error::{Error, Result};
use crate::loss_metrics::{classification_report, EvalReport};
use crate::numerics::Tensor;
use crate::training::{ensemble_vote, infer_windows, Checkpoint};

/// Zeroes one uniformly chosen IMU slab of each sample of `[B, n_imu, 6, 128]`,
/// each sample being hit with `probability`. Returns the chosen slab per sample.
pub fn corrupt_modality<R: Rng + ?Sized>(batch: &Tensor, probability: f64, rng: &mut R) -> Result<(Tensor, Vec<Option<usize>>)> {
    let &[b, n_imu, ch, len] = batch.shape() else {
        return Err(Error::Dimension(format!("corruption expects [B, n_imu, 6, 128], got {:?}", batch.shape())));
    };
    if n_imu < 2 {
        return Err(Error::Config("modality corruption needs at least two IMUs".into()));
    }
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::Config(format!("corruption probability must lie in [0, 1], got {probability}")));
    }
    let slab = ch * len;
    let mut out = batch.clone();
    let mut chosen = Vec::with_capacity(b);
    for s in 0..b {
        let pick = (probability > 0.0 && rng.random_bool(probability)).then(|| rng.random_range(0..n_imu));
        if let Some(m) = pick {
            let start = (s * n_imu + m) * slab;
            out.data_mut()[start..start + slab].fill(0.0);
        }
        chosen.push(pick);
    }
    Ok((out, chosen))
}

fn check_classes(checkpoints: &[Checkpoint], n_classes: usize) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::Contract("evaluation needs at least one checkpoint".into()));
    }
    for c in checkpoints {
        if c.params.capsules.n_out() != n_classes {
            return Err(Error::Dimension(format!(
                "checkpoint predicts {} classes but the split has {n_classes}",
                c.params.capsules.n_out()
            )));
        }
    }
    Ok(())
}

fn predict_batch(checkpoints: &[Checkpoint], x: &Tensor) -> Result<Vec<usize>> {
    ensemble_vote(checkpoints, x)
}

/// Predictions of one checkpoint, or of the summed-norm ensemble of several.
pub fn predict_windows(checkpoints: &[Checkpoint], windows: &[ImuWindow], batch_size: usize) -> Result<Vec<usize>> {
    if let [single] = checkpoints {
        let norms = infer_windows(&single.params, &single.routing, windows, batch_size)?;
        let c = norms.shape()[1];
        return Ok(norms.data().chunks(c).map(crate::capsules::argmax).collect());
    }
    let mut preds = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let (x, _) = stack_windows(chunk)?;
        preds.extend(predict_batch(checkpoints, &x)?);
    }
    Ok(preds)
}

pub fn evaluate(checkpoints: &[Checkpoint], windows: &[ImuWindow], n_classes: usize, batch_size: usize) -> Result<EvalReport> {
    check_classes(checkpoints, n_classes)?;
    let preds = predict_windows(checkpoints, windows, batch_size)?;
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    classification_report(&preds, &labels, n_classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionResult {
    pub clean: EvalReport,
    pub corrupted: EvalReport,
    /// Clean minus corrupted, in percentage points.
    pub delta_wf1: f64,
    pub delta_accuracy: f64,
    /// Zeroed IMU per test window, `None` when the window was left intact.
    pub chosen: Vec<Option<usize>>,
}

impl CorruptionResult {
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("# clean\n");
        out.push_str(&self.clean.to_csv(class_names));
        out.push_str("# corrupted\n");
        out.push_str(&self.corrupted.to_csv(class_names));
        out.push_str("# delta (percentage points)\n");
        let _ = writeln!(out, "delta_wf1,{}", self.delta_wf1);
        let _ = writeln!(out, "delta_accuracy,{}", self.delta_accuracy);
        out
    }
}

/// Evaluates `windows` as given and with one IMU zeroed per window (with `probability`).
pub fn run_corruption_test(
    checkpoints: &[Checkpoint],
    windows: &[ImuWindow],
    n_classes: usize,
    seed: u64,
    probability: f64,
    batch_size: usize,
) -> Result<CorruptionResult> {
    check_classes(checkpoints, n_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let mut clean = Vec::with_capacity(windows.len());
    let mut corrupt = Vec::with_capacity(windows.len());
    let mut chosen = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let (x, _) = stack_windows(chunk)?;
        let (xc, picks) = corrupt_modality(&x, probability, &mut rng)?;
        clean.extend(predict_batch(checkpoints, &x)?);
        corrupt.extend(predict_batch(checkpoints, &xc)?);
        chosen.extend(picks);
    }
    let clean = classification_report(&clean, &labels, n_classes)?;
    let corrupted = classification_report(&corrupt, &labels, n_classes)?;
    Ok(CorruptionResult {
        delta_wf1: 100.0 * (clean.wf1 - corrupted.wf1),
        delta_accuracy: 100.0 * (clean.accuracy - corrupted.accuracy),
        clean,
        corrupted,
        chosen,
    })
}

/// How each IMU's capsule rows of the prior matrix are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation {other:?} (expected mean or max)"))),
        }
    }
}

/// Prior logits pooled per IMU and min-max normalized within each class column.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorHeatmap {
    /// `[n_imu][n_classes]`, every entry in `[0, 1]`.
    pub matrix: Vec<Vec<f64>>,
    pub imu_names: Vec<String>,
    pub class_names: Vec<String>,
}

/// Builds the heatmap from a prior matrix `b: [12·n_imu, C]`. A constant column maps to zeros.
pub fn prior_heatmap(b: &Tensor, imu_names: &[String], class_names: &[String], agg: Aggregation) -> Result<PriorHeatmap> {
    let &[rows, c] = b.shape() else {
        return Err(Error::Dimension(format!("prior matrix must be rank 2, got {:?}", b.shape())));
    };
    if rows != CAPSULES_PER_IMU * imu_names.len() {
        return Err(Error::Dimension(format!("prior matrix has {rows} rows; {} IMU names need {}", imu_names.len(), CAPSULES_PER_IMU * imu_names.len())));
    }
    if c != class_names.len() {
        return Err(Error::Dimension(format!("prior matrix has {c} columns for {} class names", class_names.len())));
    }
    let d = b.data();
    let mut matrix: Vec<Vec<f64>> = (0..imu_names.len())
        .map(|m| {
            (0..c)
                .map(|j| {
                    let col = (0..CAPSULES_PER_IMU).map(|t| d[(m * CAPSULES_PER_IMU + t) * c + j] as f64);
                    match agg {
                        Aggregation::Mean => col.sum::<f64>() / CAPSULES_PER_IMU as f64,
                        Aggregation::Max => col.fold(f64::NEG_INFINITY, f64::max),
                    }
                })
                .collect()
        })
        .collect();
    for j in 0..c {
        let lo = matrix.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = matrix.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        for row in &mut matrix {
            row[j] = if hi > lo { (row[j] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    Ok(PriorHeatmap { matrix, imu_names: imu_names.to_vec(), class_names: class_names.to_vec() })
}

/// Heatmap of the learned prior stored in a checkpoint.
pub fn export_prior_heatmap(checkpoint: &Checkpoint, imu_names: &[String], class_names: &[String], agg: Aggregation) -> Result<PriorHeatmap> {
    prior_heatmap(&checkpoint.params.capsules.b, imu_names, class_names, agg)
}

impl PriorHeatmap {
    /// Header `position,<classes>`, then one row per IMU.
    pub fn to_csv(&self) -> String {
        let mut out = format!("position,{}\n", self.class_names.join(","));
        for (name, row) in self.imu_names.iter().zip(&self.matrix) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }

    /// Binary 8-bit graymap, one `cell × cell` block per entry, white = 1.
    pub fn to_pgm(&self, cell: usize) -> Vec<u8> {
        let cell = cell.max(1);
        let (h, w) = (self.matrix.len() * cell, self.class_names.len() * cell);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for row in &self.matrix {
            let line: Vec<u8> = row.iter().flat_map(|&v| std::iter::repeat_n((v * 255.0).round().clamp(0.0, 255.0) as u8, cell)).collect();
            for _ in 0..cell {
                out.extend_from_slice(&line);
            }
        }
        out
    }
}
