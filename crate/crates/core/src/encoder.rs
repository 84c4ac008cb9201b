//! Shared per-IMU convolutional encoder.
//!
//! One IMU window is a `6 × 128` slab: rows 0..3 accelerometer x/y/z, rows
//! 3..6 gyroscope x/y/z. Three valid convolutions reduce it to 12 time
//! positions, each of which becomes one primary capsule:
//!
//! | layer | kernel | stride | output              | activation |
//! |-------|--------|--------|---------------------|------------|
//! | L1    | 1×9    | 1×1    | `c1 × 6 × 120`      | ReLU       |
//! | L2    | 3×20   | 3×4    | `c2 × 2 × 26`       | ReLU       |
//! | L3    | 2×15   | 1×1    | `dim × 1 × 12`      | none       |
//!
//! L1 filters each axis on its own, L2 sees the accelerometer and gyroscope
//! triples separately (kernel height 3, stride 3), and L3 fuses the two.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{dim_err, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

pub const CHANNELS_PER_IMU: usize = 6;
pub const WINDOW_LEN: usize = 128;
pub const CAPSULES_PER_IMU: usize = 12;

pub const L1_KERNEL: (usize, usize) = (1, 9);
pub const L1_STRIDE: (usize, usize) = (1, 1);
pub const L2_KERNEL: (usize, usize) = (3, 20);
pub const L2_STRIDE: (usize, usize) = (3, 4);
pub const L3_KERNEL: (usize, usize) = (2, 15);
pub const L3_STRIDE: (usize, usize) = (1, 1);

/// Channel widths. The defaults give 96-dimensional primary capsules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub l1_channels: usize,
    pub l2_channels: usize,
    pub capsule_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { l1_channels: 64, l2_channels: 96, capsule_dim: 96 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub l1_kernel: Tensor,
    pub l1_bias: Tensor,
    pub l2_kernel: Tensor,
    pub l2_bias: Tensor,
    pub l3_kernel: Tensor,
    pub l3_bias: Tensor,
}

fn kernel_shape(c_out: usize, c_in: usize, k: (usize, usize)) -> [usize; 4] {
    [c_out, c_in, k.0, k.1]
}

/// Uniform in ±sqrt(1/fan_in).
pub(crate) fn fan_in_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let s1 = kernel_shape(cfg.l1_channels, 1, L1_KERNEL);
        let s2 = kernel_shape(cfg.l2_channels, cfg.l1_channels, L2_KERNEL);
        let s3 = kernel_shape(cfg.capsule_dim, cfg.l2_channels, L3_KERNEL);
        let fan = |s: &[usize; 4]| s[1] * s[2] * s[3];
        EncoderParams {
            l1_kernel: fan_in_uniform(rng, &s1, fan(&s1)),
            l1_bias: fan_in_uniform(rng, &[cfg.l1_channels], fan(&s1)),
            l2_kernel: fan_in_uniform(rng, &s2, fan(&s2)),
            l2_bias: fan_in_uniform(rng, &[cfg.l2_channels], fan(&s2)),
            l3_kernel: fan_in_uniform(rng, &s3, fan(&s3)),
            l3_bias: fan_in_uniform(rng, &[cfg.capsule_dim], fan(&s3)),
        }
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            l1_channels: self.l1_kernel.shape()[0],
            l2_channels: self.l2_kernel.shape()[0],
            capsule_dim: self.l3_kernel.shape()[0],
        }
    }

    /// Checks every tensor against the fixed layer geometry.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.config();
        let want = [
            (&self.l1_kernel, kernel_shape(cfg.l1_channels, 1, L1_KERNEL).to_vec()),
            (&self.l1_bias, vec![cfg.l1_channels]),
            (&self.l2_kernel, kernel_shape(cfg.l2_channels, cfg.l1_channels, L2_KERNEL).to_vec()),
            (&self.l2_bias, vec![cfg.l2_channels]),
            (&self.l3_kernel, kernel_shape(cfg.capsule_dim, cfg.l2_channels, L3_KERNEL).to_vec()),
            (&self.l3_bias, vec![cfg.capsule_dim]),
        ];
        for (t, shape) in want {
            if t.shape() != shape.as_slice() {
                return dim_err(format!("encoder tensor {:?} should be {shape:?}", t.shape()));
            }
        }
        Ok(())
    }

    pub fn register<T: Real>(&self, tape: &mut Tape<T>) -> EncoderVars {
        EncoderVars {
            l1_kernel: tape.leaf(self.l1_kernel.cast()),
            l1_bias: tape.leaf(self.l1_bias.cast()),
            l2_kernel: tape.leaf(self.l2_kernel.cast()),
            l2_bias: tape.leaf(self.l2_bias.cast()),
            l3_kernel: tape.leaf(self.l3_kernel.cast()),
            l3_bias: tape.leaf(self.l3_bias.cast()),
        }
    }
}

/// Encoder parameters as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub l1_kernel: Var,
    pub l1_bias: Var,
    pub l2_kernel: Var,
    pub l2_bias: Var,
    pub l3_kernel: Var,
    pub l3_bias: Var,
}

impl EncoderVars {
    pub fn all(&self) -> [Var; 6] {
        [self.l1_kernel, self.l1_bias, self.l2_kernel, self.l2_bias, self.l3_kernel, self.l3_bias]
    }
}

/// Every intermediate of one encoder pass, for inspection.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayers {
    /// `[M, c1, 6, 120]`
    pub l1: Var,
    /// `[M, c2, 2, 26]`
    pub l2: Var,
    /// `[M, dim, 1, 12]`
    pub l3: Var,
    /// `[B, 12·n_imu, dim]`, capsule `m·12 + t` is time position `t` of IMU `m`
    pub capsules: Var,
}

/// Runs the shared encoder over every IMU slab of `x: [B, n_imu, 6, 128]`.
pub fn encode_layers<T: Real>(tape: &mut Tape<T>, x: Var, p: &EncoderVars) -> Result<EncoderLayers> {
    let xs = tape.shape(x).to_vec();
    let &[b, n_imu, ch, len] = xs.as_slice() else {
        return dim_err(format!("encoder input must be [B, n_imu, 6, 128], got {xs:?}"));
    };
    if ch != CHANNELS_PER_IMU || len != WINDOW_LEN {
        return dim_err(format!("encoder expects {CHANNELS_PER_IMU}x{WINDOW_LEN} slabs, got {ch}x{len}"));
    }
    let m = b * n_imu;
    let slabs = tape.reshape(x, &[m, 1, ch, len])?;
    let h1 = tape.conv2d(slabs, p.l1_kernel, p.l1_bias, L1_STRIDE)?;
    let l1 = tape.relu(h1)?;
    let h2 = tape.conv2d(l1, p.l2_kernel, p.l2_bias, L2_STRIDE)?;
    let l2 = tape.relu(h2)?;
    let l3 = tape.conv2d(l2, p.l3_kernel, p.l3_bias, L3_STRIDE)?;
    let s3 = tape.shape(l3).to_vec();
    if s3[2] != 1 || s3[3] != CAPSULES_PER_IMU {
        return dim_err(format!("encoder produced {s3:?}, expected {CAPSULES_PER_IMU} positions"));
    }
    let dim = s3[1];
    let flat = tape.reshape(l3, &[m, dim, CAPSULES_PER_IMU])?;
    let caps = tape.swap_last2(flat)?;
    let capsules = tape.reshape(caps, &[b, n_imu * CAPSULES_PER_IMU, dim])?;
    Ok(EncoderLayers { l1, l2, l3, capsules })
}

/// `[B, n_imu, 6, 128] -> [B, 12·n_imu, dim]`.
pub fn encode_all<T: Real>(tape: &mut Tape<T>, x: Var, p: &EncoderVars) -> Result<Var> {
    Ok(encode_layers(tape, x, p)?.capsules)
}

/// Encodes a single `[6, 128]` slab into `[12, dim]` capsules (no gradients kept).
pub fn encode_imu(window: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    if window.shape() != [CHANNELS_PER_IMU, WINDOW_LEN] {
        return dim_err(format!("encode_imu expects [6, 128], got {:?}", window.shape()));
    }
    let mut tape = Tape::<f32>::new();
    let vars = params.register(&mut tape);
    let x = tape.leaf(window.clone().reshape(&[1, 1, CHANNELS_PER_IMU, WINDOW_LEN])?);
    let caps = encode_all(&mut tape, x, &vars)?;
    let dim = params.config().capsule_dim;
    tape.value(caps).clone().reshape(&[CAPSULES_PER_IMU, dim])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_window(rng: &mut ChaCha8Rng) -> Tensor {
        let n = CHANNELS_PER_IMU * WINDOW_LEN;
        Tensor::from_vec(&[CHANNELS_PER_IMU, WINDOW_LEN], (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn output_is_twelve_capsules_of_96() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::init(&EncoderConfig::default(), &mut rng);
        p.validate().unwrap();
        let out = encode_imu(&random_window(&mut rng), &p).unwrap();
        assert_eq!(out.shape(), &[12, 96]);
    }

    #[test]
    fn zero_input_and_biases_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = EncoderParams::init(&EncoderConfig::default(), &mut rng);
        for b in [&mut p.l1_bias, &mut p.l2_bias, &mut p.l3_bias] {
            b.data_mut().fill(0.0);
        }
        let out = encode_imu(&Tensor::zeros(&[6, 128]), &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_slab_shape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParams::init(&EncoderConfig::default(), &mut rng);
        assert!(matches!(encode_imu(&Tensor::zeros(&[6, 127]), &p), Err(crate::Error::Dimension(_))));
        assert!(matches!(encode_imu(&Tensor::zeros(&[3, 128]), &p), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn intermediate_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = EncoderParams::init(&EncoderConfig::default(), &mut rng);
        let mut tape = Tape::<f32>::new();
        let vars = p.register(&mut tape);
        let x = tape.leaf(Tensor::zeros(&[2, 3, 6, 128]));
        let l = encode_layers(&mut tape, x, &vars).unwrap();
        assert_eq!(tape.shape(l.l1), &[6, 64, 6, 120]);
        assert_eq!(tape.shape(l.l2), &[6, 96, 2, 26]);
        assert_eq!(tape.shape(l.l3), &[6, 96, 1, 12]);
        assert_eq!(tape.shape(l.capsules), &[2, 36, 96]);
    }
}
