use std::path::Path;
use std::process::{Command, Output};

fn arcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arcnet")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const MICRO: &str = "# small network for fast runs\nl1_channels = 4\nl2_channels = 8\ncapsule_dim = 8\nout_dim = 8\ninitial_lr = 0.003\nbatch_size = 16\n";

#[test]
fn train_without_data_is_a_usage_error() {
    let o = arcnet(&["train"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    let first = err.lines().next().unwrap();
    assert!(first.starts_with("error kind=usage exit=1 message="), "{err}");
    assert!(first.contains("--data"));
    assert!(err.contains("Usage: arcnet train"), "{err}");
}

#[test]
fn bad_flags_and_unknown_keys_are_usage_errors() {
    assert_eq!(code(&arcnet(&["train", "--epochs", "lots"])), 1);
    assert_eq!(code(&arcnet(&["frobnicate"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "epochs = 3\nlearnig_rate = 0.1\n").unwrap();
    let o = arcnet(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learnig_rate"));
    assert_eq!(code(&arcnet(&["--help"])), 0);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = arcnet(&["train", "--data", p(&dir.path().join("absent.arcd")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error kind=data exit=2"));
    let o = arcnet(&["prepare", "--dataset", "pamap2", "--raw-dir", p(dir.path()), "--out", p(&dir.path().join("x.arcd"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr(&o).lines().count(), 1, "single-line reason");
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.arcd"), dir.path().join("b.arcd"), dir.path().join("c.arcd"));
    assert_eq!(code(&arcnet(&["synth", "--seed", "7", "--out", p(&a)])), 0);
    assert_eq!(code(&arcnet(&["synth", "--seed", "7", "--out", p(&b)])), 0);
    assert_eq!(code(&arcnet(&["synth", "--seed", "8", "--out", p(&c)])), 0);
    let read = |f: &Path| std::fs::read(f).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("synth.arcd");
    let cfg = d.join("micro.cfg");
    std::fs::write(&cfg, MICRO).unwrap();
    assert_eq!(code(&arcnet(&["synth", "--seed", "2", "--out", p(&data)])), 0);

    let run = |out: &str| arcnet(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&d.join(out)), "--epochs", "3", "--ensemble-k", "2", "--deterministic"]);
    let o = run("a");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("epochs=3 "));
    assert_eq!(code(&run("b")), 0);
    for f in ["last.arcc", "metrics.csv", "run.cfg"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }

    let o = arcnet(&["evaluate", "--data", p(&data), "--out", p(&d.join("a"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("checkpoints=2 windows=40"));
    let csv = std::fs::read_to_string(d.join("a").join("evaluation.csv")).unwrap();
    assert!(csv.contains("class0"));

    let o = arcnet(&["corrupt", "--data", p(&data), "--out", p(&d.join("a")), "--probability", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("delta_wf1_pp=0.0000"));
    assert!(stdout(&o).contains("delta_accuracy_pp=0.0000"));

    let last = d.join("a").join("last.arcc");
    let o = arcnet(&["priors", "--data", p(&data), "--out", p(&d.join("a")), "--checkpoint", p(&last)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let heat = std::fs::read_to_string(d.join("a").join("priors.csv")).unwrap();
    assert_eq!(heat.lines().next().unwrap(), "position,class0,class1,class2,class3");
    assert_eq!(heat.lines().count(), 3);
    assert!(std::fs::read(d.join("a").join("priors.pgm")).unwrap().starts_with(b"P5\n"));
}

#[test]
fn gradcheck_passes_at_the_default_tolerance() {
    let o = arcnet(&["gradcheck", "--tol", "1e-3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 17);
    assert!(out.lines().all(|l| l.ends_with("status=pass")));
    assert!(out.contains("check=network_r3"));
}
