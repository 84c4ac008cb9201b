use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use arcnet::datasets::{
    decode_windows, encode_windows, make_windows, parse_pamap2, parse_pamap2_text, parse_realworld, read_windows,
    resample_decimate, split_subjects, synchronize, synth_generate, synth_windows, window_starts, write_windows,
    DatasetKind, ImuWindow, LabeledStream, Segment, SyntheticSpec, TimedSeries, WindowSet, REALWORLD_IMUS,
};
use arcnet::numerics::Tensor;
use arcnet::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One PAMAP2 line; IMU block `m` channel values are `100·m + column offset + base`.
fn pamap2_line(ts: f64, activity: u32, base: f32) -> String {
    let mut cols = vec![format!("{ts:.2}"), activity.to_string(), "NaN".to_string()];
    for m in 0..3 {
        for off in 0..17 {
            cols.push(format!("{}", 100.0 * m as f32 + off as f32 + base));
        }
    }
    cols.join(" ")
}

#[test]
fn three_line_file_maps_channels() {
    let text = (0..3).map(|t| pamap2_line(t as f64 * 0.01, 4, t as f32 * 0.5)).collect::<Vec<_>>().join("\n");
    let s = parse_pamap2_text(&text, 1, Path::new("subject101.dat")).unwrap();
    assert_eq!((s.rate_hz, s.n_channels, s.len()), (100, 18, 3));
    assert_eq!(s.segments.len(), 1);
    assert_eq!(s.segments[0].label, 3);
    // acc16 at block offsets 1..4, gyro at 7..10
    let row0 = &s.segments[0].data[..18];
    let expect: Vec<f32> = (0..3)
        .flat_map(|m| [1, 2, 3, 7, 8, 9].map(|off| 100.0 * m as f32 + off as f32))
        .collect();
    assert_eq!(row0, expect.as_slice());
    assert_eq!(s.segments[0].data[18 * 2], 2.0);
}

#[test]
fn transient_rows_are_dropped_and_split_segments() {
    let lines = [pamap2_line(0.0, 1, 0.0), pamap2_line(0.01, 0, 0.0), pamap2_line(0.02, 1, 0.0), pamap2_line(0.03, 1, 0.0)];
    let s = parse_pamap2_text(&lines.join("\n"), 1, Path::new("x.dat")).unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(s.segments.len(), 2, "a transient row breaks contiguity");
    assert!(s.segments.iter().all(|seg| seg.label == 0));
}

#[test]
fn unknown_activity_ids_are_dropped() {
    let lines = [pamap2_line(0.0, 9, 0.0), pamap2_line(0.01, 24, 0.0)];
    let s = parse_pamap2_text(&lines.join("\n"), 1, Path::new("x.dat")).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.segments[0].label, 11);
}

#[test]
fn single_nan_is_interpolated_to_the_midpoint() {
    let mut lines: Vec<String> = (0..3).map(|t| pamap2_line(t as f64 * 0.01, 2, 0.0)).collect();
    let set_acc_x = |line: &str, v: &str| {
        let mut cols: Vec<String> = line.split(' ').map(String::from).collect();
        cols[4] = v.to_string();
        cols.join(" ")
    };
    lines[0] = set_acc_x(&lines[0], "1.0");
    lines[1] = set_acc_x(&lines[1], "NaN");
    lines[2] = set_acc_x(&lines[2], "3.0");
    let s = parse_pamap2_text(&lines.join("\n"), 1, Path::new("x.dat")).unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(s.segments[0].data[18], 2.0);
}

#[test]
fn long_gap_splits_the_segment() {
    let mut text = String::new();
    for t in 0..200 {
        let mut line = pamap2_line(t as f64 * 0.01, 3, 0.0);
        if (50..111).contains(&t) {
            let mut cols: Vec<&str> = line.split(' ').collect();
            cols[12] = "NaN";
            line = cols.join(" ");
        }
        writeln!(text, "{line}").unwrap();
    }
    let s = parse_pamap2_text(&text, 1, Path::new("x.dat")).unwrap();
    assert_eq!(s.segments.len(), 2);
    assert_eq!(s.len(), 200 - 61);
}

#[test]
fn wrong_column_count_reports_the_line() {
    let text = format!("{}\n1.0 2 3 4\n", pamap2_line(0.0, 1, 0.0));
    match parse_pamap2_text(&text, 1, Path::new("subject101.dat")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn missing_subject_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    for s in 101..=104 {
        std::fs::write(dir.path().join(format!("subject{s}.dat")), pamap2_line(0.0, 1, 0.0)).unwrap();
    }
    match parse_pamap2(dir.path()) {
        Err(Error::MissingFile(p)) => assert!(p.ends_with("subject105.dat"), "{p:?}"),
        other => panic!("expected missing file, got {other:?}"),
    }
}

#[test]
fn protocol_directory_parses_all_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let proto = dir.path().join("Protocol");
    std::fs::create_dir(&proto).unwrap();
    for s in 1..=9u16 {
        let text: String = (0..300).map(|t| pamap2_line(t as f64 * 0.01, 1 + (t / 150) as u32, s as f32) + "\n").collect();
        std::fs::write(proto.join(format!("subject{}.dat", 100 + s)), text).unwrap();
    }
    let streams = parse_pamap2(dir.path()).unwrap();
    assert_eq!(streams.iter().map(|s| s.subject).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
    assert!(streams.iter().all(|s| s.len() == 300 && s.segments.len() == 2));
}

#[test]
fn decimated_sine_matches_analytic_samples() {
    let data: Vec<f32> = (0..1000).map(|k| (std::f64::consts::TAU * k as f64 / 100.0).sin() as f32).collect();
    let s = LabeledStream { subject: 1, rate_hz: 100, n_channels: 1, segments: vec![Segment { label: 0, data }] };
    let d = resample_decimate(&s, 50).unwrap();
    assert_eq!(d.segments[0].data.len(), 500);
    for (m, &v) in d.segments[0].data.iter().enumerate() {
        let truth = (std::f64::consts::TAU * m as f64 / 50.0).sin();
        assert!((v as f64 - truth).abs() < 1e-6);
    }
}

#[test]
fn constant_stream_halves() {
    let s = LabeledStream { subject: 1, rate_hz: 100, n_channels: 2, segments: vec![Segment { label: 0, data: vec![4.0; 20] }] };
    let d = resample_decimate(&s, 50).unwrap();
    assert_eq!(d.segments[0].data, vec![4.0; 10]);
}

fn stream_of(lengths: &[(usize, usize)], n_channels: usize) -> LabeledStream {
    // channel 0 carries the global sample index so windows can be traced back
    let mut t0 = 0;
    let segments = lengths
        .iter()
        .map(|&(label, len)| {
            let mut data = vec![0.0f32; len * n_channels];
            for t in 0..len {
                data[t * n_channels] = (t0 + t) as f32;
                data[t * n_channels + 1] = label as f32;
            }
            t0 += len;
            Segment { label, data }
        })
        .collect();
    LabeledStream { subject: 1, rate_hz: 50, n_channels, segments }
}

#[test]
fn window_examples() {
    let (w, skip) = make_windows(&stream_of(&[(0, 230)], 6), 128, 0.6).unwrap();
    assert_eq!(w.iter().map(|w| w.data.data()[0] as usize).collect::<Vec<_>>(), vec![0, 51, 102]);
    assert_eq!(skip.segments, 0);
    let (w, skip) = make_windows(&stream_of(&[(0, 127)], 6), 128, 0.6).unwrap();
    assert!(w.is_empty());
    assert_eq!((skip.segments, skip.samples), (1, 127));
    let (w, _) = make_windows(&stream_of(&[(0, 128)], 6), 128, 0.6).unwrap();
    assert_eq!(w.len(), 1);
}

#[test]
fn window_count_formula_for_every_length() {
    for t in 128..=4000 {
        let expected = (t - 128) / 51 + 1;
        assert_eq!(window_starts(t, 128, 51).len(), expected, "T = {t}");
    }
    for t in (128..=4000).step_by(37) {
        let (w, _) = make_windows(&stream_of(&[(2, t)], 6), 128, 0.6).unwrap();
        assert_eq!(w.len(), (t - 128) / 51 + 1, "T = {t}");
    }
}

#[test]
fn windows_are_channel_major_per_imu() {
    let n_ch = 12;
    let mut data = vec![0.0f32; 128 * n_ch];
    for t in 0..128 {
        for c in 0..n_ch {
            data[t * n_ch + c] = (c * 1000 + t) as f32;
        }
    }
    let s = LabeledStream { subject: 4, rate_hz: 50, n_channels: n_ch, segments: vec![Segment { label: 1, data }] };
    let (w, _) = make_windows(&s, 128, 0.6).unwrap();
    assert_eq!(w[0].data.shape(), &[2, 6, 128]);
    // IMU 1, gyro y (axis 4), time 17
    assert_eq!(w[0].data.data()[(6 + 4) * 128 + 17], (10 * 1000 + 17) as f32);
    assert_eq!((w[0].label, w[0].subject), (1, 4));
}

proptest! {
    #[test]
    fn no_window_spans_two_labels(runs in prop::collection::vec((0usize..4, 1usize..400), 1..12)) {
        let s = stream_of(&runs, 6);
        let (windows, skip) = make_windows(&s, 128, 0.6).unwrap();
        // map global index -> segment index
        let mut owner = Vec::new();
        for (k, &(_, len)) in runs.iter().enumerate() {
            owner.extend(std::iter::repeat_n(k, len));
        }
        let mut expected = 0;
        for &(_, len) in &runs {
            expected += if len >= 128 { (len - 128) / 51 + 1 } else { 0 };
        }
        prop_assert_eq!(windows.len(), expected);
        prop_assert_eq!(skip.segments, runs.iter().filter(|r| r.1 < 128).count());
        for w in &windows {
            let idx = &w.data.data()[..128];
            let first = idx[0] as usize;
            prop_assert!(idx.iter().enumerate().all(|(dt, &v)| v as usize == first + dt));
            let seg = owner[first];
            prop_assert_eq!(owner[first + 127], seg);
            prop_assert_eq!(w.label, runs[seg].0);
            prop_assert!(w.data.data()[128..256].iter().all(|&l| l as usize == w.label));
        }
    }
}

fn fake_windows(subjects: &[u16], per_subject: usize, n_imu: usize, seed: u64) -> WindowSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::new();
    for &s in subjects {
        for k in 0..per_subject {
            let data = (0..n_imu * 6 * 128).map(|i| rng.random_range(-3.0f32..5.0) * (1 + i % 7) as f32 + (i % 5) as f32).collect();
            windows.push(ImuWindow { data: Tensor::from_vec(&[n_imu, 6, 128], data).unwrap(), label: k % 3, subject: s });
        }
    }
    WindowSet { n_imu, class_names: vec!["a".into(), "b".into(), "c".into()], windows }
}

fn subjects(ws: &[ImuWindow]) -> BTreeSet<u16> {
    ws.iter().map(|w| w.subject).collect()
}

#[test]
fn pamap2_split_holds_out_one_and_five() {
    let split = split_subjects(fake_windows(&[1, 2, 3, 4, 5, 6, 7, 8, 9], 4, 3, 1), DatasetKind::Pamap2).unwrap();
    assert_eq!(subjects(&split.test), BTreeSet::from([1]));
    assert_eq!(subjects(&split.validation), BTreeSet::from([5]));
    assert_eq!(subjects(&split.train), BTreeSet::from([2, 3, 4, 6, 7, 8, 9]));
}

#[test]
fn realworld_split_holds_out_ten_and_eleven() {
    let ids: Vec<u16> = (1..=15).collect();
    let split = split_subjects(fake_windows(&ids, 2, 7, 2), DatasetKind::RealWorld).unwrap();
    assert_eq!(subjects(&split.validation), BTreeSet::from([10]));
    assert_eq!(subjects(&split.test), BTreeSet::from([11]));
    assert_eq!(split.train.len(), 13 * 2);
}

#[test]
fn absent_held_out_subject_is_an_error() {
    let err = split_subjects(fake_windows(&[1, 2, 3, 4], 2, 3, 3), DatasetKind::Pamap2).unwrap_err();
    assert!(matches!(err, Error::Split(_)), "{err:?}");
}

#[test]
fn train_channels_are_standardized() {
    let split = split_subjects(fake_windows(&[1, 2, 3, 4, 5, 6], 5, 3, 4), DatasetKind::Pamap2).unwrap();
    for c in 0..18 {
        let vals: Vec<f64> = split.train.iter().flat_map(|w| w.data.data()[c * 128..(c + 1) * 128].iter().map(|&v| v as f64)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
        assert!((std - 1.0).abs() < 1e-3, "channel {c} std {std}");
    }
}

proptest! {
    #[test]
    fn split_subject_sets_are_disjoint(extra in prop::collection::btree_set(6u16..30, 1..10), seed in any::<u64>()) {
        let mut ids: Vec<u16> = extra.into_iter().collect();
        ids.extend([1, 5]);
        ids.sort();
        ids.dedup();
        let split = split_subjects(fake_windows(&ids, 1, 1, seed), DatasetKind::Pamap2).unwrap();
        let (a, b, c) = (subjects(&split.train), subjects(&split.validation), subjects(&split.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(a.len() + b.len() + c.len(), ids.len());
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SyntheticSpec::new(2, 4, 10, 99);
    let a = encode_windows(&synth_windows(&spec).unwrap()).unwrap();
    let b = encode_windows(&synth_windows(&spec).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = encode_windows(&synth_windows(&SyntheticSpec { seed: 100, ..spec.clone() }).unwrap()).unwrap();
    assert_ne!(a, other);
    assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
}

#[test]
fn synthetic_window_count() {
    let set = synth_windows(&SyntheticSpec::new(2, 4, 10, 1)).unwrap();
    assert_eq!(set.windows.len(), 40);
    for k in 0..4 {
        assert_eq!(set.windows.iter().filter(|w| w.label == k).count(), 10);
    }
    let split = synth_generate(&SyntheticSpec::new(2, 4, 50, 1)).unwrap();
    assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 200);
}

#[test]
fn container_round_trip_is_exact() {
    let set = synth_windows(&SyntheticSpec::new(3, 5, 6, 7)).unwrap();
    let bytes = encode_windows(&set).unwrap();
    assert_eq!(&bytes[..4], b"ARCD");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let back = decode_windows(&bytes).unwrap();
    assert_eq!(back, set);
    assert_eq!(encode_windows(&back).unwrap(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.arcd");
    write_windows(&path, &set).unwrap();
    assert_eq!(read_windows(&path).unwrap(), set);
}

#[test]
fn container_rejects_damage() {
    let set = synth_windows(&SyntheticSpec::new(2, 3, 3, 7)).unwrap();
    let bytes = encode_windows(&set).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_windows(&bad), Err(Error::Format(_))));
    assert!(matches!(decode_windows(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    assert!(matches!(read_windows(Path::new("/nonexistent/set.arcd")), Err(Error::MissingFile(_))));
}

#[test]
fn parse_serialize_parse_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    for s in 1..=9u16 {
        let text: String = (0..1200).map(|t| pamap2_line(t as f64 * 0.01, [1, 4, 5][t / 400], s as f32 + t as f32 * 0.01) + "\n").collect();
        std::fs::write(dir.path().join(format!("subject{}.dat", 100 + s)), text).unwrap();
    }
    let (set, report) = arcnet::datasets::prepare(DatasetKind::Pamap2, dir.path()).unwrap();
    // 400 samples per activity at 100 Hz -> 200 at 50 Hz -> 2 windows each
    assert_eq!(set.windows.len(), 9 * 3 * 2);
    assert_eq!(report.skipped.segments, 0);
    let again = decode_windows(&encode_windows(&set).unwrap()).unwrap();
    assert_eq!(again, set);
    let (set2, _) = arcnet::datasets::prepare(DatasetKind::Pamap2, dir.path()).unwrap();
    assert_eq!(set2, set);
}

fn write_rw_csv(path: &Path, times: &[f64], base: f32) {
    let mut s = String::from("id,attr_time,attr_x,attr_y,attr_z\n");
    for (i, t) in times.iter().enumerate() {
        writeln!(s, "{},{},{},{},{}", i + 1, t, base + i as f32, base + 0.5, base - 0.5).unwrap();
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn realworld_identical_timestamps_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("proband3").join("data");
    std::fs::create_dir_all(&data).unwrap();
    let times: Vec<f64> = (0..300).map(|k| 1.4e12 + 20.0 * k as f64).collect();
    for (p, pos) in REALWORLD_IMUS.iter().enumerate() {
        write_rw_csv(&data.join(format!("acc_walking_{pos}.csv")), &times, p as f32 * 10.0);
        write_rw_csv(&data.join(format!("Gyroscope_walking_{pos}.csv")), &times, p as f32 * 10.0 + 5.0);
    }
    // lying lacks the head gyroscope
    for pos in REALWORLD_IMUS {
        write_rw_csv(&data.join(format!("acc_lying_{pos}.csv")), &times, 0.0);
        if pos != "head" {
            write_rw_csv(&data.join(format!("Gyroscope_lying_{pos}.csv")), &times, 0.0);
        }
    }
    let parsed = parse_realworld(dir.path()).unwrap();
    assert_eq!(parsed.streams.len(), 1);
    let s = &parsed.streams[0];
    assert_eq!((s.subject, s.rate_hz, s.n_channels), (3, 50, 42));
    assert_eq!(s.segments.len(), 1);
    assert_eq!(s.segments[0].label, 7);
    assert_eq!(s.len(), 300);
    // sample 4 of the forearm gyroscope (position 1, channels 9..12)
    assert_eq!(&s.segments[0].data[4 * 42 + 9..4 * 42 + 12], &[19.0, 15.5, 14.5]);
    assert_eq!(parsed.warnings.len(), 1);
    assert_eq!(parsed.warnings[0].activity, "lying");
    assert!(parsed.warnings[0].reason.contains("head/gyroscope"));
}

#[test]
fn realworld_disjoint_ranges_give_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("proband1");
    std::fs::create_dir_all(&data).unwrap();
    let early: Vec<f64> = (0..50).map(|k| 20.0 * k as f64).collect();
    let late: Vec<f64> = (0..50).map(|k| 5000.0 + 20.0 * k as f64).collect();
    for (p, pos) in REALWORLD_IMUS.iter().enumerate() {
        let t = if p == 0 { &late } else { &early };
        write_rw_csv(&data.join(format!("acc_running_{pos}.csv")), t, 0.0);
        write_rw_csv(&data.join(format!("Gyroscope_running_{pos}.csv")), t, 0.0);
    }
    let parsed = parse_realworld(dir.path()).unwrap();
    assert!(parsed.streams[0].segments.is_empty());
    assert_eq!(parsed.warnings.len(), 1);
}

#[test]
fn half_period_offset_alignment_length() {
    let n = 100;
    let a = TimedSeries { time_ms: (0..n).map(|k| 20.0 * k as f64).collect(), values: (0..n).map(|k| [k as f32; 3]).collect() };
    let b = TimedSeries { time_ms: (0..n).map(|k| 10.0 + 20.0 * k as f64).collect(), values: (0..n).map(|k| [k as f32; 3]).collect() };
    let out = synchronize(&[a.clone(), b], 20.0);
    // overlap [10, 1980] holds 99 grid points
    assert_eq!(out.len() / 6, n - 1);
    let same = synchronize(&[a.clone(), a], 20.0);
    assert_eq!(same.len() / 6, n);
    assert!(synchronize(&[], 20.0).is_empty());
}
