//! PAMAP2 protocol files: one `subject1NN.dat` per subject, 54
//! space-separated columns per line at 100 Hz.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{LabeledStream, Segment};
use crate::error::{Error, Result};

const N_COLUMNS: usize = 54;
const RATE_HZ: u32 = 100;
/// First column (0-based) of the hand, chest and ankle blocks.
const IMU_BLOCKS: [usize; 3] = [3, 20, 37];
/// Offsets within a block of the ±16g accelerometer and the gyroscope.
const ACC16_OFFSET: usize = 1;
const GYRO_OFFSET: usize = 7;
const N_CHANNELS: usize = 18;

/// Activity ids kept, in class-index order.
pub const PAMAP2_ACTIVITY_IDS: [u32; 12] = [1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24];
pub const PAMAP2_SUBJECTS: [u16; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];
/// Longest NaN run that is interpolated (0.5 s at 100 Hz).
pub const PAMAP2_MAX_GAP: usize = 50;

fn class_of(activity: u32) -> Option<usize> {
    PAMAP2_ACTIVITY_IDS.iter().position(|&a| a == activity)
}

fn subject_file(dir: &Path, subject: u16) -> PathBuf {
    dir.join(format!("subject{}.dat", 100 + subject))
}

/// Parses all nine subjects, looking in `raw_dir` or its `Protocol` subdirectory.
pub fn parse_pamap2(raw_dir: &Path) -> Result<Vec<LabeledStream>> {
    let protocol = raw_dir.join("Protocol");
    let dir = if subject_file(&protocol, 1).exists() { protocol } else { raw_dir.to_path_buf() };
    let files: Vec<(u16, PathBuf)> = PAMAP2_SUBJECTS.iter().map(|&s| (s, subject_file(&dir, s))).collect();
    if let Some((_, missing)) = files.iter().find(|(_, p)| !p.is_file()) {
        return Err(Error::MissingFile(missing.clone()));
    }
    files.par_iter().map(|(s, p)| parse_pamap2_file(p, *s)).collect()
}

pub fn parse_pamap2_file(path: &Path, subject: u16) -> Result<LabeledStream> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_pamap2_text(&text, subject, path)
}

/// Parses file contents; `path` is only used in error messages.
pub fn parse_pamap2_text(text: &str, subject: u16, path: &Path) -> Result<LabeledStream> {
    // runs of consecutive kept rows with the same activity
    let mut runs: Vec<(usize, Vec<[f32; N_CHANNELS]>)> = Vec::new();
    let mut broken = true;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != N_COLUMNS {
            return Err(parse_err(format!("expected {N_COLUMNS} columns, found {}", cols.len())));
        }
        let num = |c: usize| cols[c].parse::<f64>().map_err(|_| parse_err(format!("column {} is not a number: {:?}", c + 1, cols[c])));
        let activity = num(1)?;
        let class = if activity.is_finite() && activity >= 0.0 { class_of(activity as u32) } else { None };
        let Some(class) = class else {
            broken = true;
            continue;
        };
        let mut row = [0.0f32; N_CHANNELS];
        for (m, &block) in IMU_BLOCKS.iter().enumerate() {
            for axis in 0..3 {
                row[m * 6 + axis] = num(block + ACC16_OFFSET + axis)? as f32;
                row[m * 6 + 3 + axis] = num(block + GYRO_OFFSET + axis)? as f32;
            }
        }
        match runs.last_mut() {
            Some((label, rows)) if !broken && *label == class => rows.push(row),
            _ => runs.push((class, vec![row])),
        }
        broken = false;
    }
    let mut segments = Vec::new();
    for (label, mut rows) in runs {
        let valid = repair_gaps(&mut rows, PAMAP2_MAX_GAP);
        let mut current: Vec<f32> = Vec::new();
        for (row, ok) in rows.iter().zip(&valid) {
            if *ok {
                current.extend_from_slice(row);
            } else if !current.is_empty() {
                segments.push(Segment { label, data: std::mem::take(&mut current) });
            }
        }
        if !current.is_empty() {
            segments.push(Segment { label, data: current });
        }
    }
    Ok(LabeledStream { subject, rate_hz: RATE_HZ, n_channels: N_CHANNELS, segments })
}

/// Linearly interpolates interior NaN runs of at most `max_gap` samples in
/// every channel. Returns which rows remain usable: rows inside longer runs
/// or runs touching either end are marked invalid.
fn repair_gaps<const C: usize>(rows: &mut [[f32; C]], max_gap: usize) -> Vec<bool> {
    let n = rows.len();
    let mut valid = vec![true; n];
    for ch in 0..C {
        let mut t = 0;
        while t < n {
            if !rows[t][ch].is_nan() {
                t += 1;
                continue;
            }
            let start = t;
            while t < n && rows[t][ch].is_nan() {
                t += 1;
            }
            let end = t;
            if start == 0 || end == n || end - start > max_gap {
                valid[start..end].iter_mut().for_each(|v| *v = false);
                continue;
            }
            let (a, b) = (rows[start - 1][ch], rows[end][ch]);
            let span = (end - start + 1) as f32;
            for (k, row) in rows[start..end].iter_mut().enumerate() {
                row[ch] = a + (b - a) * (k + 1) as f32 / span;
            }
        }
    }
    valid
}
