//! RealWorld recordings: `proband{N}/**/{acc|Gyroscope}_{activity}[_{session}]_{position}.csv`,
//! each with a `id,attr_time,attr_x,attr_y,attr_z` header and millisecond
//! device timestamps. Archives shipped with the dataset must be extracted first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use super::{LabeledStream, Segment, REALWORLD_CLASSES, REALWORLD_IMUS, TARGET_RATE_HZ};
use crate::error::{Error, Result};

/// Irregularly sampled three-axis series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedSeries {
    pub time_ms: Vec<f64>,
    pub values: Vec<[f32; 3]>,
}

/// An activity recording that could not be aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncWarning {
    pub subject: u16,
    pub activity: String,
    pub session: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RealWorldParse {
    pub streams: Vec<LabeledStream>,
    pub warnings: Vec<SyncWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Sensor {
    Acc,
    Gyro,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct FileKey {
    class: usize,
    session: u32,
    position: usize,
    sensor: Sensor,
}

fn classify(path: &Path) -> Option<FileKey> {
    if !path.extension()?.to_str()?.eq_ignore_ascii_case("csv") {
        return None;
    }
    let stem = path.file_stem()?.to_str()?.to_ascii_lowercase();
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() < 3 {
        return None;
    }
    let sensor = match parts[0] {
        "acc" => Sensor::Acc,
        "gyr" | "gyro" | "gyroscope" => Sensor::Gyro,
        _ => return None,
    };
    let position = REALWORLD_IMUS.iter().position(|&p| p == parts[parts.len() - 1])?;
    let mut session = 0;
    let mut activity = Vec::new();
    for p in &parts[1..parts.len() - 1] {
        match p.parse::<u32>() {
            Ok(n) => session = n,
            Err(_) => activity.push(*p),
        }
    }
    let class = REALWORLD_CLASSES.iter().position(|&c| c == activity.join(""))?;
    Some(FileKey { class, session, position, sensor })
}

fn read_series(path: &Path) -> Result<TimedSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str, fallback: usize| headers.iter().position(|h| h == name).unwrap_or(fallback);
    let (ct, cx, cy, cz) = (col("attr_time", 1), col("attr_x", 2), col("attr_y", 3), col("attr_z", 4));
    let mut rows: Vec<(f64, [f32; 3])> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| -> Result<f64> {
            rec.get(c).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("column {} missing or not a number", c + 1),
            })
        };
        rows.push((field(ct)?, [field(cx)? as f32, field(cy)? as f32, field(cz)? as f32]));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(TimedSeries { time_ms: rows.iter().map(|r| r.0).collect(), values: rows.iter().map(|r| r.1).collect() })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { path: path.to_path_buf(), line, msg: format!("{other:?}") },
    }
}

/// Aligns series onto a common grid of period `period_ms`, from the latest
/// start to the earliest end, taking the nearest sample (earlier on ties).
/// Output is time-major with three channels per series; empty when the time
/// ranges do not overlap.
pub fn synchronize(series: &[TimedSeries], period_ms: f64) -> Vec<f32> {
    if series.is_empty() || series.iter().any(|s| s.time_ms.is_empty()) {
        return Vec::new();
    }
    let start = series.iter().map(|s| s.time_ms[0]).fold(f64::NEG_INFINITY, f64::max);
    let end = series.iter().map(|s| *s.time_ms.last().expect("non-empty")).fold(f64::INFINITY, f64::min);
    if start > end {
        return Vec::new();
    }
    let n = ((end - start) / period_ms + 1e-9).floor() as usize + 1;
    let mut out = vec![0.0f32; n * 3 * series.len()];
    let width = 3 * series.len();
    for (k, s) in series.iter().enumerate() {
        let mut p = 0;
        for t in 0..n {
            let g = start + t as f64 * period_ms;
            while p + 1 < s.time_ms.len() && s.time_ms[p + 1] <= g {
                p += 1;
            }
            let pick = if p + 1 < s.time_ms.len() && (s.time_ms[p + 1] - g) < (g - s.time_ms[p]).abs() { p + 1 } else { p };
            out[t * width + 3 * k..t * width + 3 * k + 3].copy_from_slice(&s.values[pick]);
        }
    }
    out
}

fn subject_dirs(raw_dir: &Path) -> Result<Vec<(u16, PathBuf)>> {
    let entries = std::fs::read_dir(raw_dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(raw_dir.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_ascii_lowercase();
        if let Some(id) = name.strip_prefix("proband").and_then(|n| n.parse::<u16>().ok()) {
            if entry.path().is_dir() {
                dirs.push((id, entry.path()));
            }
        }
    }
    if dirs.is_empty() {
        return Err(Error::MissingFile(raw_dir.join("proband1")));
    }
    dirs.sort();
    Ok(dirs)
}

fn parse_subject(subject: u16, dir: &Path) -> Result<(LabeledStream, Vec<SyncWarning>)> {
    let mut files: BTreeMap<(usize, u32), BTreeMap<(usize, Sensor), PathBuf>> = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if let Some(key) = classify(entry.path()) {
            files.entry((key.class, key.session)).or_default().insert((key.position, key.sensor), entry.path().to_path_buf());
        }
    }
    let period = 1000.0 / TARGET_RATE_HZ as f64;
    let mut segments = Vec::new();
    let mut warnings = Vec::new();
    for ((class, session), found) in files {
        let warn = |reason: String| SyncWarning { subject, activity: REALWORLD_CLASSES[class].to_string(), session, reason };
        let mut paths = Vec::new();
        let mut missing = Vec::new();
        for (pos, name) in REALWORLD_IMUS.iter().enumerate() {
            for (sensor, label) in [(Sensor::Acc, "acc"), (Sensor::Gyro, "gyroscope")] {
                match found.get(&(pos, sensor)) {
                    Some(p) => paths.push(p.clone()),
                    None => missing.push(format!("{name}/{label}")),
                }
            }
        }
        if !missing.is_empty() {
            warnings.push(warn(format!("missing {}", missing.join(", "))));
            continue;
        }
        let series = paths.iter().map(|p| read_series(p)).collect::<Result<Vec<_>>>()?;
        let data = synchronize(&series, period);
        if data.is_empty() {
            warnings.push(warn("sensor time ranges do not overlap".into()));
            continue;
        }
        segments.push(Segment { label: class, data });
    }
    let stream = LabeledStream { subject, rate_hz: TARGET_RATE_HZ, n_channels: 6 * REALWORLD_IMUS.len(), segments };
    Ok((stream, warnings))
}

/// Parses every `proband{N}` directory under `raw_dir`.
pub fn parse_realworld(raw_dir: &Path) -> Result<RealWorldParse> {
    let dirs = subject_dirs(raw_dir)?;
    let parsed = dirs.par_iter().map(|(s, d)| parse_subject(*s, d)).collect::<Result<Vec<_>>>()?;
    let mut out = RealWorldParse::default();
    for (stream, warnings) in parsed {
        for w in &warnings {
            log::warn!("subject {} {} session {}: {}", w.subject, w.activity, w.session, w.reason);
        }
        out.streams.push(stream);
        out.warnings.extend(warnings);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_are_classified() {
        let k = classify(Path::new("acc_climbingdown_chest.csv")).unwrap();
        assert_eq!((k.class, k.session, k.position, k.sensor), (0, 0, 0, Sensor::Acc));
        let k = classify(Path::new("Gyroscope_walking_2_waist.csv")).unwrap();
        assert_eq!((k.class, k.session, k.position, k.sensor), (7, 2, 6, Sensor::Gyro));
        assert!(classify(Path::new("MagneticField_walking_waist.csv")).is_none());
        assert!(classify(Path::new("acc_walking_waist.zip")).is_none());
    }

    #[test]
    fn nearest_sample_prefers_earlier_on_ties() {
        let a = TimedSeries { time_ms: vec![0.0, 20.0, 40.0], values: vec![[0.0; 3], [1.0; 3], [2.0; 3]] };
        let b = TimedSeries { time_ms: vec![10.0, 30.0, 50.0], values: vec![[5.0; 3], [6.0; 3], [7.0; 3]] };
        let out = synchronize(&[a, b], 20.0);
        // grid 10, 30 within [10, 40]
        assert_eq!(out.len(), 2 * 6);
        assert_eq!(&out[..6], &[0.0, 0.0, 0.0, 5.0, 5.0, 5.0]);
        assert_eq!(&out[6..], &[1.0, 1.0, 1.0, 6.0, 6.0, 6.0]);
    }
}
