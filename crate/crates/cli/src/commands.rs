use std::path::{Path, PathBuf};

use arcnet::datasets::{
    prepare, read_windows, split_subjects, synth_windows, write_windows, DatasetKind, DatasetSplit, WindowSet, PAMAP2_CLASSES,
    REALWORLD_CLASSES,
};
use arcnet::encoder::CAPSULES_PER_IMU;
use arcnet::experiments::{evaluate, export_prior_heatmap, run_corruption_test};
use arcnet::selfcheck::gradcheck_suite;
use arcnet::training::{train, Checkpoint};
use arcnet::{Error, Result};

use crate::config::RunConfig;

const PGM_CELL: usize = 24;

pub fn dispatch(command: &str, cfg: &RunConfig) -> Result<()> {
    match command {
        "prepare" => run_prepare(cfg),
        "synth" => run_synth(cfg),
        "train" => run_train(cfg),
        "evaluate" => run_evaluate(cfg),
        "corrupt" => run_corrupt(cfg),
        "priors" => run_priors(cfg),
        "gradcheck" => run_gradcheck(cfg),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, command: &str, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::Config(format!("{command} needs --{flag}")))
}

fn names_match(names: &[String], known: &[&str]) -> bool {
    names.len() == known.len() && names.iter().zip(known).all(|(a, b)| a == b)
}

/// The configured dataset, or the one whose class list the container carries.
fn dataset_kind(cfg: &RunConfig, set: &WindowSet) -> DatasetKind {
    cfg.dataset.unwrap_or_else(|| {
        if names_match(&set.class_names, &PAMAP2_CLASSES) {
            DatasetKind::Pamap2
        } else if names_match(&set.class_names, &REALWORLD_CLASSES) {
            DatasetKind::RealWorld
        } else {
            DatasetKind::Synthetic
        }
    })
}

fn load_split(cfg: &RunConfig, command: &str) -> Result<(DatasetKind, DatasetSplit)> {
    let set = read_windows(required(&cfg.data, command, "data")?)?;
    let kind = dataset_kind(cfg, &set);
    Ok((kind, split_subjects(set, kind)?))
}

/// Explicit checkpoints, else the best `ensemble_k` retained epochs in the run
/// directory, else its `last.arcc`.
fn load_checkpoints(cfg: &RunConfig, command: &str) -> Result<Vec<Checkpoint>> {
    if !cfg.checkpoints.is_empty() {
        return cfg.checkpoints.iter().map(|p| Checkpoint::load(p)).collect();
    }
    let dir = required(&cfg.out, command, "out")?;
    let mut retained = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("epoch_") && name.ends_with(".arcc") {
                retained.push(Checkpoint::load(&path)?);
            }
        }
    }
    if retained.is_empty() {
        return Ok(vec![Checkpoint::load(&dir.join("last.arcc"))?]);
    }
    retained.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.epoch.cmp(&b.epoch)));
    retained.truncate(cfg.ensemble_k.max(1));
    Ok(retained)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn run_prepare(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.dataset.ok_or_else(|| Error::Config("prepare needs --dataset pamap2 or realworld".into()))?;
    let raw = required(&cfg.raw_dir, "prepare", "raw-dir")?;
    let out = required(&cfg.out, "prepare", "out")?;
    let (set, rep) = prepare(kind, raw)?;
    for w in &rep.warnings {
        log::warn!("skipped subject {} {} session {}: {}", w.subject, w.activity, w.session, w.reason);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_windows(out, &set)?;
    println!(
        "windows={} imus={} classes={} skipped_segments={} skipped_samples={} warnings={}",
        set.windows.len(),
        set.n_imu,
        set.class_names.len(),
        rep.skipped.segments,
        rep.skipped.samples,
        rep.warnings.len()
    );
    Ok(())
}

fn run_synth(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "synth", "out")?;
    let set = synth_windows(&cfg.synth_spec())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_windows(out, &set)?;
    println!("windows={} imus={} classes={}", set.windows.len(), set.n_imu, set.class_names.len());
    Ok(())
}

fn run_train(cfg: &RunConfig) -> Result<()> {
    required(&cfg.data, "train", "data")?;
    let out = required(&cfg.out, "train", "out")?.to_path_buf();
    let (kind, split) = load_split(cfg, "train")?;
    let tc = cfg.train_config(kind);
    tc.validate()?;
    std::fs::create_dir_all(&out)?;
    write(&out.join("run.cfg"), tc.canonical())?;
    log::info!("training on {} windows, validating on {}", split.train.len(), split.validation.len());
    let outcome = train(&tc, &split, Some(&out))?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "epochs={} train_loss={:.6} val_loss={:.6} val_acc={:.4} retained={}",
        outcome.history.len(),
        last.train_loss,
        last.val_loss,
        last.val_acc,
        outcome.retained.len()
    );
    Ok(())
}

fn run_evaluate(cfg: &RunConfig) -> Result<()> {
    let (_, split) = load_split(cfg, "evaluate")?;
    let ckpts = load_checkpoints(cfg, "evaluate")?;
    let report = evaluate(&ckpts, &split.test, split.n_classes(), cfg.batch_size)?;
    if let Some(dir) = &cfg.out {
        write(&dir.join("evaluation.csv"), report.to_csv(&split.class_names))?;
    }
    println!(
        "checkpoints={} windows={} accuracy={:.6} precision={:.6} recall={:.6} wf1={:.6}",
        ckpts.len(),
        report.total(),
        report.accuracy,
        report.precision,
        report.recall,
        report.wf1
    );
    Ok(())
}

fn run_corrupt(cfg: &RunConfig) -> Result<()> {
    let (_, split) = load_split(cfg, "corrupt")?;
    let ckpts = load_checkpoints(cfg, "corrupt")?;
    let r = run_corruption_test(&ckpts, &split.test, split.n_classes(), cfg.seed, cfg.probability, cfg.batch_size)?;
    if let Some(dir) = &cfg.out {
        write(&dir.join("corruption.csv"), r.to_csv(&split.class_names))?;
    }
    println!(
        "clean_wf1={:.6} corrupted_wf1={:.6} delta_wf1_pp={:.4} clean_accuracy={:.6} corrupted_accuracy={:.6} delta_accuracy_pp={:.4}",
        r.clean.wf1, r.corrupted.wf1, r.delta_wf1, r.clean.accuracy, r.corrupted.accuracy, r.delta_accuracy
    );
    Ok(())
}

fn run_priors(cfg: &RunConfig) -> Result<()> {
    let dir = required(&cfg.out, "priors", "out")?;
    let ckpt = load_checkpoints(cfg, "priors")?.swap_remove(0);
    let n_imu = ckpt.params.capsules.n_in() / CAPSULES_PER_IMU;
    let n_classes = ckpt.params.capsules.n_out();
    let (kind, class_names) = match &cfg.data {
        Some(path) => {
            let set = read_windows(path)?;
            (dataset_kind(cfg, &set), set.class_names)
        }
        None => (cfg.dataset.unwrap_or(DatasetKind::Synthetic), (0..n_classes).map(|k| format!("class{k}")).collect()),
    };
    let imu_names = kind.imu_names(n_imu);
    let map = export_prior_heatmap(&ckpt, &imu_names, &class_names, cfg.aggregation)?;
    write(&dir.join("priors.csv"), map.to_csv())?;
    write(&dir.join("priors.pgm"), map.to_pgm(PGM_CELL))?;
    println!("imus={n_imu} classes={n_classes} csv={} pgm={}", dir.join("priors.csv").display(), dir.join("priors.pgm").display());
    Ok(())
}

fn run_gradcheck(cfg: &RunConfig) -> Result<()> {
    let entries = gradcheck_suite(cfg.tol, cfg.seed)?;
    let mut failed = Vec::new();
    for e in &entries {
        let ok = e.report.passed();
        println!("check={} max_rel_error={:.3e} tol={:e} status={}", e.name, e.report.max_rel_error(), cfg.tol, if ok { "pass" } else { "fail" });
        if !ok {
            failed.push(e.name.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Contract(format!("gradient check failed for {}", failed.join(", "))))
    }
}
