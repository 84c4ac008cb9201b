//! The full network: shared encoder → squashed primary capsules → routed
//! class capsules → capsule lengths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capsules::{route_vars, CapsuleLayerParams, RoutingConfig, RoutingTrace, RoutingVars};
use crate::encoder::{encode_all, EncoderConfig, EncoderParams, EncoderVars, CAPSULES_PER_IMU, CHANNELS_PER_IMU, WINDOW_LEN};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Output capsule dimension used unless configured otherwise.
pub const DEFAULT_OUT_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_imu: usize,
    pub n_classes: usize,
    pub encoder: EncoderConfig,
    pub out_dim: usize,
    pub routing: RoutingConfig,
}

impl ModelConfig {
    pub fn new(n_imu: usize, n_classes: usize, routing: RoutingConfig) -> Self {
        ModelConfig { n_imu, n_classes, encoder: EncoderConfig::default(), out_dim: DEFAULT_OUT_DIM, routing }
    }

    pub fn n_primary(&self) -> usize {
        CAPSULES_PER_IMU * self.n_imu
    }

    pub fn validate(&self) -> Result<()> {
        self.routing.validate()?;
        if self.n_imu == 0 || self.n_classes < 2 || self.out_dim == 0 {
            return Err(Error::Config(format!(
                "need n_imu >= 1, n_classes >= 2, out_dim >= 1 (got {}, {}, {})",
                self.n_imu, self.n_classes, self.out_dim
            )));
        }
        let e = &self.encoder;
        if e.l1_channels == 0 || e.l2_channels == 0 || e.capsule_dim == 0 {
            return Err(Error::Config("encoder channel widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub capsules: CapsuleLayerParams,
}

/// Names used in checkpoints, in serialization order.
pub const PARAM_NAMES: [&str; 8] = [
    "encoder.l1.kernel",
    "encoder.l1.bias",
    "encoder.l2.kernel",
    "encoder.l2.bias",
    "encoder.l3.kernel",
    "encoder.l3.bias",
    "capsules.w",
    "capsules.b",
];

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&cfg.encoder, &mut rng);
        let capsules = CapsuleLayerParams::init(cfg.n_primary(), cfg.n_classes, cfg.encoder.capsule_dim, cfg.out_dim, &mut rng);
        ModelParams { encoder, capsules }
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        let e = &self.encoder;
        [&e.l1_kernel, &e.l1_bias, &e.l2_kernel, &e.l2_bias, &e.l3_kernel, &e.l3_bias, &self.capsules.w, &self.capsules.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        let e = &mut self.encoder;
        [
            &mut e.l1_kernel,
            &mut e.l1_bias,
            &mut e.l2_kernel,
            &mut e.l2_bias,
            &mut e.l3_kernel,
            &mut e.l3_bias,
            &mut self.capsules.w,
            &mut self.capsules.b,
        ]
    }

    /// Rebuilds parameters from tensors given in [`PARAM_NAMES`] order.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let Ok([l1_kernel, l1_bias, l2_kernel, l2_bias, l3_kernel, l3_bias, w, b]) = <[Tensor; 8]>::try_from(tensors) else {
            return Err(Error::Format(format!("model needs exactly {} tensors", PARAM_NAMES.len())));
        };
        let p = ModelParams {
            encoder: EncoderParams { l1_kernel, l1_bias, l2_kernel, l2_bias, l3_kernel, l3_bias },
            capsules: CapsuleLayerParams { w, b },
        };
        p.encoder.validate()?;
        p.capsules.validate()?;
        if p.capsules.in_dim() != p.encoder.config().capsule_dim {
            return dim_err("capsule transform input dim does not match encoder output");
        }
        if !p.capsules.n_in().is_multiple_of(CAPSULES_PER_IMU) {
            return dim_err(format!("{} primary capsules is not a multiple of {CAPSULES_PER_IMU}", p.capsules.n_in()));
        }
        Ok(p)
    }

    /// Configuration implied by the tensor shapes.
    pub fn config(&self, routing: RoutingConfig) -> ModelConfig {
        ModelConfig {
            n_imu: self.capsules.n_in() / CAPSULES_PER_IMU,
            n_classes: self.capsules.n_out(),
            encoder: self.encoder.config(),
            out_dim: self.capsules.out_dim(),
            routing,
        }
    }

    pub fn register<T: Real>(&self, tape: &mut Tape<T>) -> ModelVars {
        let encoder = self.encoder.register(tape);
        let w = tape.leaf(self.capsules.w.cast());
        let b = tape.leaf(self.capsules.b.cast());
        ModelVars { encoder, w, b }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub w: Var,
    pub b: Var,
}

impl ModelVars {
    /// In [`PARAM_NAMES`] order.
    pub fn all(&self) -> [Var; 8] {
        let e = self.encoder.all();
        [e[0], e[1], e[2], e[3], e[4], e[5], self.w, self.b]
    }
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub primary: Var,
    pub routing: RoutingVars,
    /// Capsule lengths `[B, n_classes]`.
    pub norms: Var,
}

/// Records the forward pass of `x: [B, n_imu, 6, 128]`.
pub fn forward<T: Real>(tape: &mut Tape<T>, x: Var, vars: &ModelVars, routing: &RoutingConfig) -> Result<ForwardVars> {
    let caps = encode_all(tape, x, &vars.encoder)?;
    let n_in = tape.shape(vars.b)[0];
    if tape.shape(caps)[1] != n_in {
        return dim_err(format!(
            "input yields {} primary capsules but the capsule layer expects {n_in}",
            tape.shape(caps)[1]
        ));
    }
    let primary = tape.squash(caps)?;
    let routing = route_vars(tape, primary, vars.w, vars.b, routing)?;
    let norms = tape.norm(routing.v)?;
    Ok(ForwardVars { primary, routing, norms })
}

pub fn check_batch(batch: &Tensor, n_imu: usize) -> Result<usize> {
    match batch.shape() {
        &[b, m, CHANNELS_PER_IMU, WINDOW_LEN] if m == n_imu => Ok(b),
        s => dim_err(format!("batch must be [B, {n_imu}, {CHANNELS_PER_IMU}, {WINDOW_LEN}], got {s:?}")),
    }
}

/// Inference result of one batch.
#[derive(Debug, Clone)]
pub struct Inference {
    /// `[B, n_classes]`
    pub norms: Tensor,
    pub trace: RoutingTrace,
}

impl Inference {
    pub fn predictions(&self) -> Vec<usize> {
        let c = self.norms.shape()[1];
        self.norms.data().chunks(c).map(crate::capsules::argmax).collect()
    }
}

pub fn infer(params: &ModelParams, routing: &RoutingConfig, batch: &Tensor) -> Result<Inference> {
    let n_imu = params.capsules.n_in() / CAPSULES_PER_IMU;
    check_batch(batch, n_imu)?;
    let mut tape = Tape::<f32>::new();
    let vars = params.register(&mut tape);
    let x = tape.leaf(batch.clone());
    let fwd = forward(&mut tape, x, &vars, routing)?;
    Ok(Inference { norms: tape.value(fwd.norms).clone(), trace: RoutingTrace::from_vars(&tape, &fwd.routing) })
}
