//! Raw dataset parsing, resampling, windowing, subject splits and the
//! preprocessed window container.
//!
//! Streams are time-major: sample `t` of channel `c` lives at
//! `data[t * n_channels + c]`. Channels are grouped per IMU, six each
//! (accelerometer x/y/z, then gyroscope x/y/z), in the dataset's IMU order.

mod container;
mod pamap2;
mod realworld;
mod split;
mod synth;
mod windows;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use container::{decode_windows, encode_windows, read_windows, write_windows, CONTAINER_VERSION};
pub use pamap2::{parse_pamap2, parse_pamap2_file, parse_pamap2_text, PAMAP2_ACTIVITY_IDS, PAMAP2_MAX_GAP, PAMAP2_SUBJECTS};
pub use realworld::{parse_realworld, synchronize, RealWorldParse, SyncWarning, TimedSeries};
pub use split::{apply_stats, split_subjects, ChannelStats, DatasetSplit};
pub use synth::{synth_generate, synth_windows, ClassSignature, SyntheticSpec};
pub use windows::{make_windows, resample_decimate, window_starts, window_stride, SkipReport};

use crate::encoder::{CHANNELS_PER_IMU, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Rate every model input is sampled at.
pub const TARGET_RATE_HZ: u32 = 50;
/// Fraction of a window shared with the next one.
pub const WINDOW_OVERLAP: f64 = 0.6;

pub const PAMAP2_CLASSES: [&str; 12] = [
    "lying",
    "sitting",
    "standing",
    "walking",
    "running",
    "cycling",
    "nordic_walking",
    "ascending_stairs",
    "descending_stairs",
    "vacuum_cleaning",
    "ironing",
    "rope_jumping",
];
pub const PAMAP2_IMUS: [&str; 3] = ["hand", "chest", "ankle"];

pub const REALWORLD_CLASSES: [&str; 8] =
    ["climbingdown", "climbingup", "jumping", "lying", "standing", "sitting", "running", "walking"];
pub const REALWORLD_IMUS: [&str; 7] = ["chest", "forearm", "head", "shin", "thigh", "upperarm", "waist"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Pamap2,
    RealWorld,
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Pamap2 => "pamap2",
            DatasetKind::RealWorld => "realworld",
            DatasetKind::Synthetic => "synth",
        }
    }

    /// `(validation, test)` subject ids.
    pub fn held_out_subjects(self) -> (u16, u16) {
        match self {
            DatasetKind::Pamap2 => (5, 1),
            DatasetKind::RealWorld => (10, 11),
            DatasetKind::Synthetic => (2, 1),
        }
    }

    /// IMU position names; synthetic sets are named by index.
    pub fn imu_names(self, n_imu: usize) -> Vec<String> {
        match self {
            DatasetKind::Pamap2 => PAMAP2_IMUS.iter().map(|s| s.to_string()).collect(),
            DatasetKind::RealWorld => REALWORLD_IMUS.iter().map(|s| s.to_string()).collect(),
            DatasetKind::Synthetic => (0..n_imu).map(|m| format!("imu{m}")).collect(),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pamap2" => Ok(DatasetKind::Pamap2),
            "realworld" => Ok(DatasetKind::RealWorld),
            "synth" | "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset {other:?} (expected pamap2, realworld or synth)"))),
        }
    }
}

/// A contiguous run of samples carrying one label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: usize,
    /// Time-major samples.
    pub data: Vec<f32>,
}

/// One subject's recording, cut into same-label segments.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub subject: u16,
    pub rate_hz: u32,
    pub n_channels: usize,
    pub segments: Vec<Segment>,
}

impl LabeledStream {
    /// Splits a time-major recording wherever the per-sample label changes.
    pub fn from_labels(subject: u16, rate_hz: u32, n_channels: usize, data: &[f32], labels: &[usize]) -> Result<Self> {
        if n_channels == 0 || data.len() != labels.len() * n_channels {
            return Err(Error::Dimension(format!(
                "{} values for {} labelled samples of {n_channels} channels",
                data.len(),
                labels.len()
            )));
        }
        let mut segments: Vec<Segment> = Vec::new();
        for (t, &label) in labels.iter().enumerate() {
            let row = &data[t * n_channels..(t + 1) * n_channels];
            match segments.last_mut() {
                Some(seg) if seg.label == label => seg.data.extend_from_slice(row),
                _ => segments.push(Segment { label, data: row.to_vec() }),
            }
        }
        Ok(LabeledStream { subject, rate_hz, n_channels, segments })
    }

    pub fn segment_len(&self, seg: &Segment) -> usize {
        seg.data.len() / self.n_channels
    }

    /// Total number of samples over all segments.
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| self.segment_len(s)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One model input: `[n_imu, 6, 128]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    pub data: Tensor,
    pub label: usize,
    pub subject: u16,
}

impl ImuWindow {
    pub fn n_imu(&self) -> usize {
        self.data.shape()[0]
    }
}

/// Windows of one dataset before splitting, as stored in the container.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub n_imu: usize,
    pub class_names: Vec<String>,
    pub windows: Vec<ImuWindow>,
}

impl WindowSet {
    pub fn validate(&self) -> Result<()> {
        let shape = [self.n_imu, CHANNELS_PER_IMU, WINDOW_LEN];
        for (i, w) in self.windows.iter().enumerate() {
            if w.data.shape() != shape {
                return Err(Error::Dimension(format!("window {i} has shape {:?}, expected {shape:?}", w.data.shape())));
            }
            if w.label >= self.class_names.len() {
                return Err(Error::Index(format!("window {i} label {} out of range", w.label)));
            }
        }
        Ok(())
    }
}

/// Stacks windows into a `[B, n_imu, 6, 128]` batch plus their labels.
pub fn stack_windows<'a, I>(windows: I) -> Result<(Tensor, Vec<usize>)>
where
    I: IntoIterator<Item = &'a ImuWindow>,
{
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for w in windows {
        match &shape {
            None => shape = Some(w.data.shape().to_vec()),
            Some(s) if s.as_slice() != w.data.shape() => {
                return Err(Error::Dimension(format!("cannot stack windows of shapes {s:?} and {:?}", w.data.shape())))
            }
            _ => {}
        }
        data.extend_from_slice(w.data.data());
        labels.push(w.label);
    }
    let Some(shape) = shape else {
        return Err(Error::Contract("cannot stack an empty window list".into()));
    };
    let mut full = vec![labels.len()];
    full.extend(shape);
    Ok((Tensor::from_vec(&full, data)?, labels))
}

/// What preprocessing dropped on the way from raw files to windows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrepareReport {
    pub skipped: SkipReport,
    pub warnings: Vec<SyncWarning>,
}

/// Raw files → 50 Hz windows, for PAMAP2 or RealWorld.
pub fn prepare(kind: DatasetKind, raw_dir: &Path) -> Result<(WindowSet, PrepareReport)> {
    let (streams, warnings, classes, n_imu): (Vec<LabeledStream>, _, &[&str], _) = match kind {
        DatasetKind::Pamap2 => {
            let raw = parse_pamap2(raw_dir)?;
            let down = raw.iter().map(|s| resample_decimate(s, TARGET_RATE_HZ)).collect::<Result<_>>()?;
            (down, Vec::new(), &PAMAP2_CLASSES, PAMAP2_IMUS.len())
        }
        DatasetKind::RealWorld => {
            let parsed = parse_realworld(raw_dir)?;
            (parsed.streams, parsed.warnings, &REALWORLD_CLASSES, REALWORLD_IMUS.len())
        }
        DatasetKind::Synthetic => {
            return Err(Error::Config("synthetic data is generated, not prepared from raw files".into()));
        }
    };
    let mut windows = Vec::new();
    let mut skipped = SkipReport::default();
    for s in &streams {
        let (w, skip) = make_windows(s, WINDOW_LEN, WINDOW_OVERLAP)?;
        windows.extend(w);
        skipped.merge(&skip);
    }
    let set = WindowSet { n_imu, class_names: classes.iter().map(|c| c.to_string()).collect(), windows };
    Ok((set, PrepareReport { skipped, warnings }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_split_on_label_change() {
        let data: Vec<f32> = (0..10).map(|x| x as f32).collect();
        let s = LabeledStream::from_labels(3, 50, 2, &data, &[0, 0, 1, 1, 0]).unwrap();
        assert_eq!(s.segments.len(), 3);
        assert_eq!(s.segments[1], Segment { label: 1, data: vec![4.0, 5.0, 6.0, 7.0] });
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn dataset_names_parse() {
        assert_eq!("PAMAP2".parse::<DatasetKind>().unwrap(), DatasetKind::Pamap2);
        assert_eq!("synth".parse::<DatasetKind>().unwrap(), DatasetKind::Synthetic);
        assert!(matches!("mnist".parse::<DatasetKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn stacking_checks_shapes() {
        let a = ImuWindow { data: Tensor::zeros(&[2, 6, 128]), label: 1, subject: 1 };
        let b = ImuWindow { data: Tensor::zeros(&[3, 6, 128]), label: 0, subject: 1 };
        let (x, y) = stack_windows([&a, &a]).unwrap();
        assert_eq!(x.shape(), &[2, 2, 6, 128]);
        assert_eq!(y, vec![1, 1]);
        assert!(stack_windows([&a, &b]).is_err());
    }
}
