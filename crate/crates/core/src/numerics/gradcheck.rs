//! Finite-difference verification of tape gradients.
//!
//! The analytic side runs the computation on an `f32` tape (the training
//! precision) or optionally an `f64` tape; the numeric side always
//! re-evaluates from scratch on an `f64` tape with central differences.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// A computation that can be recorded on a tape of either precision.
pub trait Differentiable {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound of the relative-error denominator, so entries whose true
    /// gradient is zero are compared absolutely.
    pub floor: f64,
    /// Additional denominator floor as a fraction of the largest numeric
    /// gradient magnitude of the same input. Zero disables it.
    pub scale_floor: f64,
    /// Check at most this many randomly chosen entries per input.
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Run the analytic backward pass in `f64` instead of `f32`. Isolates the
    /// backward rules from single-precision accumulation noise.
    pub analytic_f64: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-3, floor: 1e-6, scale_floor: 0.0, max_entries: None, seed: 0, analytic_f64: false }
    }
}

#[derive(Debug, Clone)]
pub struct InputReport {
    pub input: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

fn scalar_output<T: Real, F: Differentiable>(f: &F, tape: &mut Tape<T>, vars: &[Var]) -> Result<Var> {
    let out = f.eval(tape, vars)?;
    if tape.value(out).numel() == 1 {
        Ok(out)
    } else {
        tape.sum(out)
    }
}

fn eval_f64<F: Differentiable>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = scalar_output(f, &mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn analytic_grads<T: Real, F: Differentiable>(f: &F, inputs: &[Tensor<f32>]) -> Result<Vec<Option<Tensor<f64>>>> {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.cast())).collect();
    let out = scalar_output(f, &mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.get(v).map(|g| g.cast())).collect())
}

/// Compares tape gradients of `f` at `inputs` against central differences.
pub fn grad_check<F: Differentiable>(
    f: &F,
    inputs: &[Tensor<f32>],
    tol: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic: Vec<Option<Tensor<f64>>> = if opts.analytic_f64 {
        analytic_grads::<f64, F>(f, inputs)?
    } else {
        analytic_grads::<f32, F>(f, inputs)?
    };

    let mut wide: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let n = inputs[i].numel();
        let entries: Vec<usize> = match opts.max_entries {
            Some(m) if m < n => {
                let mut e = index::sample(&mut rng, n, m).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        let mut pairs = Vec::with_capacity(entries.len());
        for &e in &entries {
            let orig = wide[i].data()[e];
            wide[i].data_mut()[e] = orig + opts.step;
            let plus = eval_f64(f, &wide)?;
            wide[i].data_mut()[e] = orig - opts.step;
            let minus = eval_f64(f, &wide)?;
            wide[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            pairs.push((e, grad.as_ref().map_or(0.0, |g| g.data()[e]), numeric));
        }
        let scale = pairs.iter().map(|p| p.2.abs()).fold(0.0, f64::max);
        let floor = opts.floor.max(opts.scale_floor * scale);
        let mut rep = InputReport { input: i, checked: entries.len(), max_rel_error: 0.0, worst_entry: 0, analytic: 0.0, numeric: 0.0 };
        for (e, a, numeric) in pairs {
            let err = relative_error(a, numeric, floor);
            if err > rep.max_rel_error {
                rep.max_rel_error = err;
                rep.worst_entry = e;
                rep.analytic = a;
                rep.numeric = numeric;
            }
        }
        reports.push(rep);
    }
    Ok(GradCheckReport { tol, inputs: reports })
}
