//! Deterministic class-conditioned sinusoid-plus-noise data for desk-scale runs.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{make_windows, split_subjects, DatasetKind, DatasetSplit, LabeledStream, Segment, WindowSet, TARGET_RATE_HZ, WINDOW_OVERLAP};
use crate::encoder::{CHANNELS_PER_IMU, WINDOW_LEN};
use crate::error::{Error, Result};

/// Per-channel frequency (Hz) and amplitude of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignature {
    pub freq_hz: Vec<f32>,
    pub amplitude: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_imu: usize,
    pub n_classes: usize,
    pub windows_per_class: usize,
    pub seed: u64,
    /// Windows are dealt round-robin to subjects `1..=n_subjects`.
    pub n_subjects: u16,
    pub noise_std: f32,
    pub signatures: Vec<ClassSignature>,
}

/// Width of each class's frequency band and gap to the next band.
const BAND_HZ: f32 = 0.5;
const BAND_STEP_HZ: f32 = 1.5;
const BASE_HZ: f32 = 1.0;

impl SyntheticSpec {
    /// Class `k` occupies the band `[1 + 1.5k, 1.5 + 1.5k]` Hz, so bands never overlap.
    pub fn new(n_imu: usize, n_classes: usize, windows_per_class: usize, seed: u64) -> Self {
        let n_ch = n_imu * CHANNELS_PER_IMU;
        let signatures = (0..n_classes)
            .map(|k| ClassSignature {
                freq_hz: (0..n_ch).map(|c| BASE_HZ + BAND_STEP_HZ * k as f32 + BAND_HZ * c as f32 / n_ch as f32).collect(),
                amplitude: (0..n_ch).map(|c| 0.5 + 0.25 * (c % 3) as f32 + 0.1 * (k % 4) as f32).collect(),
            })
            .collect();
        SyntheticSpec { n_imu, n_classes, windows_per_class, seed, n_subjects: 5, noise_std: 0.1, signatures }
    }

    pub fn validate(&self) -> Result<()> {
        let n_ch = self.n_imu * CHANNELS_PER_IMU;
        if self.n_imu == 0 || self.n_classes < 2 || self.windows_per_class == 0 || self.n_subjects == 0 {
            return Err(Error::Config("synthetic dataset needs n_imu >= 1, n_classes >= 2, windows_per_class >= 1, n_subjects >= 1".into()));
        }
        if self.signatures.len() != self.n_classes {
            return Err(Error::Config(format!("{} signatures for {} classes", self.signatures.len(), self.n_classes)));
        }
        let nyquist = TARGET_RATE_HZ as f32 / 2.0;
        for (k, s) in self.signatures.iter().enumerate() {
            if s.freq_hz.len() != n_ch || s.amplitude.len() != n_ch {
                return Err(Error::Config(format!("class {k} signature must cover {n_ch} channels")));
            }
            if s.freq_hz.iter().any(|&f| !(f > 0.0 && f < nyquist)) {
                return Err(Error::Config(format!("class {k} has a frequency outside (0, {nyquist}) Hz")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std must be finite and non-negative, got {}", self.noise_std)));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|k| format!("class{k}")).collect()
    }
}

/// All windows described by `spec`, unsplit and unnormalized.
pub fn synth_windows(spec: &SyntheticSpec) -> Result<WindowSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std as f64).map_err(|e| Error::Config(e.to_string()))?;
    let n_ch = spec.n_imu * CHANNELS_PER_IMU;
    let stride = super::window_stride(WINDOW_LEN, WINDOW_OVERLAP)?;
    let rate = TARGET_RATE_HZ as f64;
    let mut windows = Vec::with_capacity(spec.n_classes * spec.windows_per_class);
    for subject in 1..=spec.n_subjects {
        let mut segments = Vec::new();
        for (k, sig) in spec.signatures.iter().enumerate() {
            let s = (subject - 1) as usize;
            let n_sub = spec.n_subjects as usize;
            let count = spec.windows_per_class / n_sub + usize::from(s < spec.windows_per_class % n_sub);
            if count == 0 {
                continue;
            }
            let len = WINDOW_LEN + stride * (count - 1);
            let phase: Vec<f64> = (0..n_ch).map(|_| rng.random_range(0.0..TAU)).collect();
            let mut data = Vec::with_capacity(len * n_ch);
            for t in 0..len {
                for ((&amp, &freq), &ph) in sig.amplitude.iter().zip(&sig.freq_hz).zip(&phase) {
                    let clean = amp as f64 * (TAU * freq as f64 * t as f64 / rate + ph).sin();
                    data.push((clean + noise.sample(&mut rng)) as f32);
                }
            }
            segments.push(Segment { label: k, data });
        }
        let stream = LabeledStream { subject, rate_hz: TARGET_RATE_HZ, n_channels: n_ch, segments };
        windows.extend(make_windows(&stream, WINDOW_LEN, WINDOW_OVERLAP)?.0);
    }
    Ok(WindowSet { n_imu: spec.n_imu, class_names: spec.class_names(), windows })
}

/// Generates, splits (test subject 1, validation subject 2) and normalizes.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    split_subjects(synth_windows(spec)?, DatasetKind::Synthetic)
}
