//! `arcnet`: data preparation, training, evaluation and diagnostics.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure. Failures print
//! one `error kind=... exit=... message="..."` line on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use arcnet::datasets::DatasetKind;
use arcnet::experiments::Aggregation;
use arcnet::{Error, ErrorKind};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "arcnet", version, about = "Capsule-routed multi-IMU activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw dataset into a window container (--dataset, --raw-dir, --out FILE).
    Prepare(Opts),
    /// Write a synthetic window container (--seed, --out FILE).
    Synth(Opts),
    /// Train on a container (--data FILE, --out DIR).
    Train(Opts),
    /// Evaluate checkpoints on the test subject (--data FILE, --out DIR).
    Evaluate(Opts),
    /// Compare clean and single-IMU-corrupted test accuracy (--data FILE, --out DIR).
    Corrupt(Opts),
    /// Export the learned prior matrix as CSV and PGM heatmaps (--out DIR).
    Priors(Opts),
    /// Finite-difference check of every op and the full network (--tol).
    Gradcheck(Opts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare(_) => "prepare",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Corrupt(_) => "corrupt",
            Command::Priors(_) => "priors",
            Command::Gradcheck(_) => "gradcheck",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::Prepare(o)
            | Command::Synth(o)
            | Command::Train(o)
            | Command::Evaluate(o)
            | Command::Corrupt(o)
            | Command::Priors(o)
            | Command::Gradcheck(o) => o,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct Opts {
    /// Settings file, one `key = value` per line; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    raw_dir: Option<PathBuf>,
    /// Window container (.arcd).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file for prepare and synth, run directory otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded reference mode.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    routing_iters: Option<usize>,
    #[arg(long)]
    eta: Option<f32>,
    #[arg(long)]
    ensemble_k: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Checkpoint to use (repeatable); defaults to the retained epochs in --out.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Per-window corruption probability.
    #[arg(long)]
    probability: Option<f64>,
    /// Prior pooling per IMU: mean or max.
    #[arg(long)]
    aggregation: Option<Aggregation>,
}

impl Opts {
    fn run_config(&self) -> arcnet::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
                _ => Error::Io(e),
            })?;
            cfg.apply_text(&text)?;
        }
        macro_rules! over {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        over!(dataset, raw_dir, data, out, routing_iters, eta);
        macro_rules! over_value {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        over_value!(seed, threads, epochs, batch_size, ensemble_k, tol, probability, aggregation);
        if !self.checkpoint.is_empty() {
            cfg.checkpoints = self.checkpoint.clone();
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if cfg.deterministic {
            cfg.threads = 1;
        }
        Ok(cfg)
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

fn report(kind: ErrorKind, message: &str) -> ExitCode {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ").replace('"', "'");
    let code = exit_code(kind);
    eprintln!("error kind={} exit={code} message=\"{flat}\"", kind_name(kind));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::command().after_help(config::keys_help()).try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            let code = report(ErrorKind::Usage, &first);
            eprintln!("{}", e.render());
            return code;
        }
    };
    let name = cli.command.name();
    let result = cli.command.opts().run_config().and_then(|cfg| {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global().map_err(|e| Error::Config(e.to_string()))?;
        commands::dispatch(name, &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = report(e.kind(), &e.to_string());
            if e.kind() == ErrorKind::Usage {
                let mut cmd = Cli::command();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    eprintln!("{}", sub.clone().bin_name(format!("arcnet {name}")).render_usage());
                }
            }
            code
        }
    }
}
