//! Capsule layer: squash non-linearity and soft-updated dynamic routing
//! with a learnable prior-logit matrix.
//!
//! Per sample, routing works on a private copy of the prior logits `b`:
//!
//! ```text
//! û[i,j] = U[i] · W[i,j]
//! c      = softmax_j(b)
//! repeat r times:
//!     ĉ  = softmax_j(b_work)
//!     c  = η·ĉ + c
//!     s_j = Σ_i c[i,j] · û[i,j]
//!     V_j = squash(s_j)
//!     b_work[i,j] += V_j · û[i,j]
//! ```
//!
//! The persistent `b` only changes through gradient descent. Since `c`
//! starts as one softmax and gains `η` times a softmax per iteration, each
//! coupling row ends up summing to `1 + r·η`.

use rand::Rng;

use crate::encoder::fan_in_uniform;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{squash_factor, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingConfig {
    pub iters: usize,
    pub eta: f32,
}

impl RoutingConfig {
    pub fn new(iters: usize, eta: f32) -> Result<Self> {
        let cfg = RoutingConfig { iters, eta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("routing needs at least one iteration".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("soft-update coefficient must be positive, got {}", self.eta)));
        }
        Ok(())
    }

    /// Expected sum of every final coupling row.
    pub fn coupling_row_sum(&self) -> f32 {
        1.0 + self.iters as f32 * self.eta
    }
}

/// Learnable tensors of the routed capsule layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleLayerParams {
    /// `[N_in, N_out, in_dim, out_dim]`
    pub w: Tensor,
    /// Prior logits `[N_in, N_out]`.
    pub b: Tensor,
}

impl CapsuleLayerParams {
    /// `W` uniform in ±sqrt(1/in_dim), `b` zero.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        CapsuleLayerParams {
            w: fan_in_uniform(rng, &[n_in, n_out, in_dim, out_dim], in_dim),
            b: Tensor::zeros(&[n_in, n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.rank() != 4 {
            return dim_err(format!("capsule transform must be rank 4, got {:?}", self.w.shape()));
        }
        if self.b.shape() != [self.n_in(), self.n_out()] {
            return dim_err(format!("prior logits {:?} do not match transform {:?}", self.b.shape(), self.w.shape()));
        }
        Ok(())
    }
}

/// Everything recorded while routing, as tape nodes.
#[derive(Debug, Clone)]
pub struct RoutingVars {
    /// Output capsules `[B, N_out, D]`.
    pub v: Var,
    /// Final accumulated coupling `[B, N_in, N_out]`.
    pub coupling: Var,
    /// Agreement increment added to the working logits at each iteration.
    pub increments: Vec<Var>,
}

/// Materialized routing state of a forward pass.
#[derive(Debug, Clone)]
pub struct RoutingTrace {
    /// `[B, N_in, N_out]`
    pub coupling: Tensor,
    /// One `[B, N_in, N_out]` tensor per iteration.
    pub increments: Vec<Tensor>,
    /// `[B, N_out, D]`
    pub v: Tensor,
}

impl RoutingTrace {
    pub fn from_vars<T: Real>(tape: &Tape<T>, vars: &RoutingVars) -> Self {
        RoutingTrace {
            coupling: tape.value(vars.coupling).cast(),
            increments: vars.increments.iter().map(|&v| tape.value(v).cast()).collect(),
            v: tape.value(vars.v).cast(),
        }
    }
}

/// Routes squashed primary capsules `u: [B, N_in, K]` to `N_out` output capsules.
pub fn route_vars<T: Real>(tape: &mut Tape<T>, u: Var, w: Var, b: Var, cfg: &RoutingConfig) -> Result<RoutingVars> {
    cfg.validate()?;
    let bsz = match tape.shape(u) {
        &[bsz, _, _] => bsz,
        s => return dim_err(format!("route expects primary capsules [B, N_in, K], got {s:?}")),
    };
    if tape.shape(b).len() != 2 {
        return dim_err(format!("prior logits must be [N_in, N_out], got {:?}", tape.shape(b)));
    }
    let uhat = tape.capsule_transform(u, w)?;
    let eta = T::from_f64(cfg.eta as f64);
    let c0 = tape.softmax_rows(b)?;
    let mut c = tape.broadcast_batch(c0, bsz)?;
    let mut logits = tape.broadcast_batch(b, bsz)?;
    let mut increments = Vec::with_capacity(cfg.iters);
    let mut v = None;
    for _ in 0..cfg.iters {
        let c_hat = tape.softmax_rows(logits)?;
        let soft = tape.scale(c_hat, eta)?;
        c = tape.add(soft, c)?;
        let s = tape.weighted_sum(c, uhat)?;
        let out = tape.squash(s)?;
        let inc = tape.agreement(out, uhat)?;
        logits = tape.add(logits, inc)?;
        increments.push(inc);
        v = Some(out);
    }
    Ok(RoutingVars { v: v.expect("iters >= 1"), coupling: c, increments })
}

/// Routes a single sample (`[N_in, K]`) or a batch (`[B, N_in, K]`) without keeping gradients.
/// `u` must already be squashed.
pub fn route(u: &Tensor, params: &CapsuleLayerParams, cfg: &RoutingConfig) -> Result<(Tensor, RoutingTrace)> {
    params.validate()?;
    let single = u.rank() == 2;
    let u3 = if single {
        let s = u.shape().to_vec();
        u.clone().reshape(&[1, s[0], s[1]])?
    } else {
        u.clone()
    };
    let mut tape = Tape::<f32>::new();
    let uv = tape.leaf(u3);
    let w = tape.leaf(params.w.clone());
    let b = tape.leaf(params.b.clone());
    let vars = route_vars(&mut tape, uv, w, b, cfg)?;
    let trace = RoutingTrace::from_vars(&tape, &vars);
    let mut v = trace.v.clone();
    if single {
        let s = v.shape()[1..].to_vec();
        v = v.reshape(&s)?;
    }
    Ok((v, trace))
}

/// Squash of one vector; the zero vector maps to zero.
pub fn squash(v: &[f32]) -> Vec<f32> {
    let n2: f32 = v.iter().map(|e| e * e).sum();
    let f = squash_factor(n2);
    v.iter().map(|e| e * f).collect()
}

/// Capsule lengths and the winning class (lowest index on ties).
pub fn predict(v: &Tensor) -> Result<(usize, Vec<f32>)> {
    let &[n_out, d] = v.shape() else {
        return dim_err(format!("predict expects [N_out, D], got {:?}", v.shape()));
    };
    let scores: Vec<f32> = (0..n_out).map(|j| v.data()[j * d..(j + 1) * d].iter().map(|e| e * e).sum::<f32>().sqrt()).collect();
    Ok((argmax(&scores), scores))
}

/// First index of the maximum.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
