//! Margin loss on capsule lengths and support-weighted classification metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConfig {
    pub m_plus: f32,
    pub m_minus: f32,
    /// Down-weight of the absent-class terms.
    pub lambda_down: f32,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig { m_plus: 0.95, m_minus: 0.05, lambda_down: 0.5 }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) {
            return Err(Error::Config(format!("margins must satisfy 0 < m- < m+ < 1, got {} / {}", self.m_minus, self.m_plus)));
        }
        if self.lambda_down.is_nan() || self.lambda_down < 0.0 {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda_down)));
        }
        Ok(())
    }
}

fn check_labels(shape: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    let &[b, c] = shape else {
        return Err(Error::Dimension(format!("margin loss expects norms [B, C], got {shape:?}")));
    };
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index(format!("label {l} out of range for {c} classes")));
    }
    Ok((b, c))
}

/// Per-sample loss `Σ_k T_k·max(0, m⁺−‖v_k‖)² + λ·(1−T_k)·max(0, ‖v_k‖−m⁻)²`, averaged over the batch.
fn loss_and_grad<T: Real>(norms: &[T], labels: &[usize], c: usize, cfg: &MarginConfig) -> (T, Vec<T>) {
    let b = labels.len();
    let (mp, mm, lam) = (T::from_f64(cfg.m_plus as f64), T::from_f64(cfg.m_minus as f64), T::from_f64(cfg.lambda_down as f64));
    let inv_b = T::one() / T::from_f64(b as f64);
    let two = T::from_f64(2.0);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); norms.len()];
    for (s, &label) in labels.iter().enumerate() {
        for k in 0..c {
            let n = norms[s * c + k];
            let (term, d) = if k == label {
                let gap = (mp - n).max(T::zero());
                (gap * gap, -two * gap)
            } else {
                let gap = (n - mm).max(T::zero());
                (lam * gap * gap, two * lam * gap)
            };
            total = total + term;
            grad[s * c + k] = d * inv_b;
        }
    }
    (total * inv_b, grad)
}

pub fn margin_loss(norms: &Tensor, labels: &[usize], cfg: &MarginConfig) -> Result<f32> {
    let (_, c) = check_labels(norms.shape(), labels)?;
    let wide: Vec<f64> = norms.data().iter().map(|&v| v as f64).collect();
    Ok(loss_and_grad(&wide, labels, c, cfg).0 as f32)
}

/// Records the margin loss of `norms: [B, C]` on the tape as a scalar node.
pub fn margin_loss_var<T: Real>(tape: &mut Tape<T>, norms: Var, labels: &[usize], cfg: &MarginConfig) -> Result<Var> {
    let (_, c) = check_labels(tape.shape(norms), labels)?;
    let (loss, grad) = loss_and_grad(tape.value(norms).data(), labels, c, cfg);
    let shape = tape.shape(norms).to_vec();
    let grad = Tensor::from_vec(&shape, grad)?;
    tape.custom(
        &[norms],
        Tensor::scalar(loss),
        Box::new(move |_ins, _out, g| {
            let scale = g.data()[0];
            let d = grad.data().iter().map(|&e| e * scale).collect();
            vec![Tensor::from_vec(grad.shape(), d).expect("same shape")]
        }),
    )
}

/// Confusion matrix (rows = true class, columns = predicted) and summary metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub wf1: f64,
}

#[derive(Debug, Clone, Copy)]
struct ClassStats {
    support: u64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn class_stats(confusion: &[Vec<u64>]) -> Vec<ClassStats> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let support: u64 = confusion[k].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassStats { support, precision, recall, f1 }
        })
        .collect()
}

fn check_square(confusion: &[Vec<u64>]) -> Result<u64> {
    let c = confusion.len();
    if confusion.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension("confusion matrix must be square".into()));
    }
    let n: u64 = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(Error::Contract("metrics need at least one sample".into()));
    }
    Ok(n)
}

/// Support-weighted mean of per-class F1; zero-denominator terms contribute 0.
pub fn weighted_f1(confusion: &[Vec<u64>]) -> Result<f64> {
    let n = check_square(confusion)? as f64;
    Ok(class_stats(confusion).iter().map(|s| s.support as f64 / n * s.f1).sum())
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let n = check_square(&confusion)? as f64;
        let stats = class_stats(&confusion);
        let weighted = |f: fn(&ClassStats) -> f64| stats.iter().map(|s| s.support as f64 / n * f(s)).sum::<f64>();
        let trace: u64 = (0..confusion.len()).map(|k| confusion[k][k]).sum();
        Ok(EvalReport {
            accuracy: trace as f64 / n,
            precision: weighted(|s| s.precision),
            recall: weighted(|s| s.recall),
            wf1: weighted(|s| s.f1),
            confusion,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// First line class names; one line of counts per true class; then `metric,value` lines.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        out.push_str(&class_names.join(","));
        out.push('\n');
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        for (name, v) in self.metrics() {
            let _ = writeln!(out, "{name},{v}");
        }
        out
    }

    pub fn metrics(&self) -> [(&'static str, f64); 4] {
        [("accuracy", self.accuracy), ("precision", self.precision), ("recall", self.recall), ("wf1", self.wf1)]
    }

    /// Parses [`EvalReport::to_csv`] output; metrics are recomputed from the counts.
    pub fn from_csv(text: &str) -> Result<(Vec<String>, Self)> {
        let mut lines = text.lines();
        let names: Vec<String> = lines.next().ok_or_else(|| Error::Format("empty report".into()))?.split(',').map(str::to_string).collect();
        let mut confusion = Vec::with_capacity(names.len());
        for _ in 0..names.len() {
            let line = lines.next().ok_or_else(|| Error::Format("truncated confusion matrix".into()))?;
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<u64>().map_err(|e| Error::Format(format!("bad count {c:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            confusion.push(row);
        }
        Ok((names, EvalReport::from_confusion(confusion)?))
    }
}

pub fn classification_report(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!("{} predictions vs {} labels", predictions.len(), labels.len())));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::Index(format!("class index {} out of range for {n_classes} classes", p.max(l))));
        }
        confusion[l][p] += 1;
    }
    EvalReport::from_confusion(confusion)
}
