//! Finite-difference suite over every tape op and the whole network plus
//! margin loss on a small configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capsules::RoutingConfig;
use crate::encoder::{EncoderVars, CHANNELS_PER_IMU, WINDOW_LEN};
use crate::error::Result;
use crate::loss_metrics::{margin_loss_var, MarginConfig};
use crate::model::{forward, ModelConfig, ModelParams, ModelVars};
use crate::numerics::{grad_check, Differentiable, GradCheckOptions, GradCheckReport, Real, Tape, Tensor, Var};

/// Network shape used by the suite: 2 IMUs, 4 classes, 8-dimensional class capsules.
pub fn micro_config(iters: usize) -> ModelConfig {
    ModelConfig { out_dim: 8, ..ModelConfig::new(2, 4, RoutingConfig { iters, eta: 0.1 }) }
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Conv(usize, usize),
    Matmul,
    Relu,
    Add,
    Scale,
    Softmax,
    Squash,
    Norm,
    SwapLast2,
    Broadcast,
    CapsuleTransform,
    WeightedSum,
    Agreement,
    Margin,
}

const OPS: [(&str, Op); 15] = [
    ("conv2d", Op::Conv(1, 1)),
    ("conv2d_strided", Op::Conv(2, 3)),
    ("matmul", Op::Matmul),
    ("relu", Op::Relu),
    ("add", Op::Add),
    ("scale", Op::Scale),
    ("softmax_rows", Op::Softmax),
    ("squash", Op::Squash),
    ("norm", Op::Norm),
    ("swap_last2", Op::SwapLast2),
    ("broadcast_batch", Op::Broadcast),
    ("capsule_transform", Op::CapsuleTransform),
    ("weighted_sum", Op::WeightedSum),
    ("agreement", Op::Agreement),
    ("margin_loss", Op::Margin),
];

/// One op, contracted with a random probe (the last input) to a scalar.
struct OpProbe(Op);

impl Differentiable for OpProbe {
    fn eval<T: Real>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let out = match self.0 {
            Op::Conv(sh, sw) => t.conv2d(v[0], v[1], v[2], (sh, sw))?,
            Op::Matmul => t.matmul(v[0], v[1])?,
            Op::Relu => t.relu(v[0])?,
            Op::Add => t.add(v[0], v[1])?,
            Op::Scale => t.scale(v[0], T::from_f64(-1.75))?,
            Op::Softmax => t.softmax_rows(v[0])?,
            Op::Squash => t.squash(v[0])?,
            Op::Norm => t.norm(v[0])?,
            Op::SwapLast2 => t.swap_last2(v[0])?,
            Op::Broadcast => t.broadcast_batch(v[0], 3)?,
            Op::CapsuleTransform => t.capsule_transform(v[0], v[1])?,
            Op::WeightedSum => t.weighted_sum(v[0], v[1])?,
            Op::Agreement => t.agreement(v[0], v[1])?,
            Op::Margin => return margin_loss_var(t, v[0], &[2, 0, 3], &MarginConfig::default()),
        };
        let n = t.value(out).numel();
        let flat = t.reshape(out, &[1, n])?;
        t.matmul(flat, v[v.len() - 1])
    }
}

fn draw(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

fn op_inputs(op: Op, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut r = |s: &[usize]| draw(rng, s, -1.0, 1.0);
    let (mut ins, out_len) = match op {
        Op::Conv(sh, sw) => {
            let out = 3 * ((5 - 2) / sh + 1) * ((9 - 3) / sw + 1);
            (vec![r(&[2, 5, 9]), r(&[3, 2, 2, 3]), r(&[3])], out)
        }
        Op::Matmul => (vec![r(&[3, 4]), r(&[4, 2])], 6),
        Op::Relu => {
            // keep clear of the kink by more than the difference step
            let x = r(&[10]);
            let d = x.data().iter().map(|&e| if e.abs() < 0.05 { e + 0.05f32.copysign(e) } else { e }).collect();
            (vec![Tensor::from_vec(&[10], d).expect("10 values")], 10)
        }
        Op::Add => (vec![r(&[2, 3]), r(&[2, 3])], 6),
        Op::Scale => (vec![r(&[5])], 5),
        Op::Softmax => (vec![r(&[3, 4])], 12),
        Op::Squash => (vec![r(&[3, 5])], 15),
        Op::Norm => (vec![r(&[3, 5])], 3),
        Op::SwapLast2 => (vec![r(&[2, 3, 4])], 24),
        Op::Broadcast => (vec![r(&[2, 3])], 18),
        Op::CapsuleTransform => (vec![r(&[2, 3, 4]), r(&[3, 2, 4, 5])], 60),
        Op::WeightedSum => (vec![r(&[2, 3, 2]), r(&[2, 3, 2, 4])], 16),
        Op::Agreement => (vec![r(&[2, 2, 4]), r(&[2, 3, 2, 4])], 12),
        Op::Margin => return vec![draw(rng, &[3, 4], 0.0, 1.0)],
    };
    ins.push(draw(rng, &[out_len, 1], -1.0, 1.0));
    ins
}

/// Input batch and all eight parameters → mean margin loss.
struct NetworkLoss {
    labels: Vec<usize>,
    routing: RoutingConfig,
}

impl Differentiable for NetworkLoss {
    fn eval<T: Real>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let vars = ModelVars {
            encoder: EncoderVars { l1_kernel: v[1], l1_bias: v[2], l2_kernel: v[3], l2_bias: v[4], l3_kernel: v[5], l3_bias: v[6] },
            w: v[7],
            b: v[8],
        };
        let fwd = forward(t, v[0], &vars, &self.routing)?;
        margin_loss_var(t, fwd.norms, &self.labels, &MarginConfig::default())
    }
}

/// Runs every check at `tol`. Entries come back in a fixed order: the ops,
/// then the network for one and three routing iterations.
pub fn gradcheck_suite(tol: f64, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op_opts = GradCheckOptions { scale_floor: 1e-3, seed, ..Default::default() };
    let mut out = Vec::with_capacity(OPS.len() + 2);
    for (name, op) in OPS {
        let ins = op_inputs(op, &mut rng);
        let report = grad_check(&OpProbe(op), &ins, tol, &op_opts)?;
        out.push(SuiteEntry { name: name.to_string(), report });
    }
    // thousands of ReLU units feed each capsule, so a coarse step crosses kinks
    let net_opts = GradCheckOptions { step: 1e-6, scale_floor: 1e-3, max_entries: Some(40), seed, ..Default::default() };
    for iters in [1, 3] {
        let cfg = micro_config(iters);
        let mut params = ModelParams::init(&cfg, seed);
        // a nonzero prior exercises its gradient path through every iteration
        params.capsules.b = draw(&mut rng, params.capsules.b.shape(), -0.5, 0.5);
        let x = draw(&mut rng, &[2, cfg.n_imu, CHANNELS_PER_IMU, WINDOW_LEN], -1.0, 1.0);
        let mut ins = vec![x];
        ins.extend(params.tensors().map(Tensor::clone));
        let f = NetworkLoss { labels: vec![1, 3], routing: cfg.routing };
        let report = grad_check(&f, &ins, tol, &net_opts)?;
        out.push(SuiteEntry { name: format!("network_r{iters}"), report });
    }
    Ok(out)
}
