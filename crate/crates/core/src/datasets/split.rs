use std::collections::BTreeSet;

use super::{DatasetKind, ImuWindow, WindowSet};
use crate::encoder::WINDOW_LEN;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as 1 so constant channels pass through centred.
const MIN_STD: f64 = 1e-8;

/// Per-channel z-score statistics, channel index `imu · 6 + axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn compute(windows: &[ImuWindow]) -> Result<Self> {
        let Some(first) = windows.first() else {
            return Err(Error::Split("cannot compute channel statistics without training windows".into()));
        };
        let n_ch = first.data.numel() / WINDOW_LEN;
        let mut sum = vec![0.0f64; n_ch];
        let mut sq = vec![0.0f64; n_ch];
        for w in windows {
            for (c, row) in w.data.data().chunks(WINDOW_LEN).enumerate() {
                for &v in row {
                    sum[c] += v as f64;
                }
            }
        }
        let count = (windows.len() * WINDOW_LEN) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        for w in windows {
            for (c, row) in w.data.data().chunks(WINDOW_LEN).enumerate() {
                for &v in row {
                    let d = v as f64 - mean[c];
                    sq[c] += d * d;
                }
            }
        }
        let std = sq.iter().map(|s| (s / count).sqrt()).map(|s| if s < MIN_STD { 1.0 } else { s });
        Ok(ChannelStats { mean: mean.iter().map(|&m| m as f32).collect(), std: std.map(|s| s as f32).collect() })
    }
}

/// Normalizes windows in place with `(x − mean) / std`.
pub fn apply_stats(windows: &mut [ImuWindow], stats: &ChannelStats) -> Result<()> {
    for w in windows {
        let data = w.data.data_mut();
        if data.len() != stats.mean.len() * WINDOW_LEN {
            return Err(Error::Dimension(format!("window has {} values, statistics cover {} channels", data.len(), stats.mean.len())));
        }
        for (c, row) in data.chunks_mut(WINDOW_LEN).enumerate() {
            let (m, s) = (stats.mean[c] as f64, stats.std[c] as f64);
            for v in row {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }
    Ok(())
}

/// Leave-subjects-out split with train-only normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ImuWindow>,
    pub validation: Vec<ImuWindow>,
    pub test: Vec<ImuWindow>,
    pub class_names: Vec<String>,
    pub channel_stats: ChannelStats,
}

impl DatasetSplit {
    pub fn n_imu(&self) -> usize {
        self.train.first().map_or(0, ImuWindow::n_imu)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Holds out the dataset's validation and test subjects and normalizes all
/// three parts with statistics of the remaining training subjects.
pub fn split_subjects(set: WindowSet, kind: DatasetKind) -> Result<DatasetSplit> {
    set.validate()?;
    let (val_subject, test_subject) = kind.held_out_subjects();
    let present: BTreeSet<u16> = set.windows.iter().map(|w| w.subject).collect();
    for (role, s) in [("validation", val_subject), ("test", test_subject)] {
        if !present.contains(&s) {
            return Err(Error::Split(format!("{kind} {role} subject {s} has no windows (subjects present: {present:?})")));
        }
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for w in set.windows {
        match w.subject {
            s if s == test_subject => test.push(w),
            s if s == val_subject => validation.push(w),
            _ => train.push(w),
        }
    }
    let channel_stats = ChannelStats::compute(&train)?;
    for part in [&mut train, &mut validation, &mut test] {
        apply_stats(part, &channel_stats)?;
    }
    Ok(DatasetSplit { train, validation, test, class_names: set.class_names, channel_stats })
}
