use super::{ImuWindow, LabeledStream, Segment};
use crate::encoder::CHANNELS_PER_IMU;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Segments too short to hold a single window.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub segments: usize,
    pub samples: usize,
}

impl SkipReport {
    pub fn merge(&mut self, other: &SkipReport) {
        self.segments += other.segments;
        self.samples += other.samples;
    }
}

/// Keeps every second sample of each segment. Only exact halving is supported.
pub fn resample_decimate(stream: &LabeledStream, target_hz: u32) -> Result<LabeledStream> {
    if stream.rate_hz != 2 * target_hz {
        return Err(Error::UnsupportedRate(format!("{} Hz -> {target_hz} Hz is not a 2:1 decimation", stream.rate_hz)));
    }
    let c = stream.n_channels;
    let segments = stream
        .segments
        .iter()
        .map(|seg| Segment {
            label: seg.label,
            data: seg.data.chunks(c).step_by(2).flatten().copied().collect(),
        })
        .collect();
    Ok(LabeledStream { subject: stream.subject, rate_hz: target_hz, n_channels: c, segments })
}

/// Hop between window starts: `round(length · (1 − overlap))`.
pub fn window_stride(length: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("window overlap must lie in [0, 1), got {overlap}")));
    }
    let stride = (length as f64 * (1.0 - overlap)).round() as usize;
    if length == 0 || stride == 0 {
        return Err(Error::Config(format!("window length {length} with overlap {overlap} gives no progress")));
    }
    Ok(stride)
}

/// Start offsets of every full window in a segment of `t` samples.
pub fn window_starts(t: usize, length: usize, stride: usize) -> Vec<usize> {
    if t < length {
        return Vec::new();
    }
    (0..=t - length).step_by(stride).collect()
}

/// Cuts each segment into windows of `length` samples. Windows never span
/// two segments; segments shorter than one window are counted and skipped.
pub fn make_windows(stream: &LabeledStream, length: usize, overlap: f64) -> Result<(Vec<ImuWindow>, SkipReport)> {
    let c = stream.n_channels;
    if c == 0 || !c.is_multiple_of(CHANNELS_PER_IMU) {
        return Err(Error::Dimension(format!("{c} channels is not a whole number of {CHANNELS_PER_IMU}-channel IMUs")));
    }
    let stride = window_stride(length, overlap)?;
    let n_imu = c / CHANNELS_PER_IMU;
    let mut out = Vec::new();
    let mut skipped = SkipReport::default();
    for seg in &stream.segments {
        let t = stream.segment_len(seg);
        let starts = window_starts(t, length, stride);
        if starts.is_empty() {
            skipped.segments += 1;
            skipped.samples += t;
            continue;
        }
        for start in starts {
            // time-major segment -> channel-major window
            let mut data = vec![0.0f32; c * length];
            for dt in 0..length {
                let row = &seg.data[(start + dt) * c..(start + dt + 1) * c];
                for (ch, &v) in row.iter().enumerate() {
                    data[ch * length + dt] = v;
                }
            }
            out.push(ImuWindow {
                data: Tensor::from_vec(&[n_imu, CHANNELS_PER_IMU, length], data)?,
                label: seg.label,
                subject: stream.subject,
            });
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(rate: u32, values: &[f32]) -> LabeledStream {
        LabeledStream { subject: 1, rate_hz: rate, n_channels: 1, segments: vec![Segment { label: 0, data: values.to_vec() }] }
    }

    #[test]
    fn decimation_keeps_even_samples() {
        let s = resample_decimate(&stream(100, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 50).unwrap();
        assert_eq!(s.segments[0].data, vec![1.0, 3.0, 5.0]);
        assert_eq!(s.rate_hz, 50);
    }

    #[test]
    fn odd_rate_ratio_is_rejected() {
        assert!(matches!(resample_decimate(&stream(120, &[1.0]), 50), Err(Error::UnsupportedRate(_))));
    }

    #[test]
    fn stride_is_fifty_one() {
        assert_eq!(window_stride(128, 0.6).unwrap(), 51);
        assert_eq!(window_starts(230, 128, 51), vec![0, 51, 102]);
        assert_eq!(window_starts(128, 128, 51), vec![0]);
        assert!(window_starts(127, 128, 51).is_empty());
    }
}
