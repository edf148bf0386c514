//! `boomerang-kit`: train denoisers, sample, run Boomerang and its
//! applications, and write reproducible artifacts.

mod commands;
mod config;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boomerang_core::io::RunIndex;
use boomerang_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "boomerang-kit", version, about = "Diffusion local sampling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a noise-prediction MLP and write its checkpoint and loss curve.
    Train(Common),
    /// Draw samples by running the full reverse chain from noise.
    Sample(Common),
    /// Boomerang every record of the dataset.
    Boomerang(Common),
    /// Distance between records and their Boomerang outputs per ratio.
    Sweep(Common),
    /// Baseline vs Boomerang-augmented vs synthetic-only classifiers.
    AugmentEval(Common),
    /// Resolution enhancement of downsampled records.
    Pre(Common),
    /// Brute-force checks of the numerical core.
    Selftest(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    t_boom: Option<usize>,
    #[arg(long)]
    n_cascade: Option<usize>,
    /// Comma-separated t_boom / T ratios.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, env = "BOOMERANG_KIT_THREADS")]
    threads: Option<usize>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Train(c) => ("train", c),
            Command::Sample(c) => ("sample", c),
            Command::Boomerang(c) => ("boomerang", c),
            Command::Sweep(c) => ("sweep", c),
            Command::AugmentEval(c) => ("augment-eval", c),
            Command::Pre(c) => ("pre", c),
            Command::Selftest(c) => ("selftest", c),
        }
    }
}

/// Config file values with flags applied on top.
fn resolve(args: &Common) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = args.t_boom {
        cfg.t_boom = t;
    }
    if let Some(n) = args.n_cascade {
        cfg.n_cascade = n;
    }
    if let Some(r) = &args.ratios {
        cfg.ratios = r.clone();
    }
    cfg.validate()?;
    cfg.train.seed = cfg.seed();
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (name, args) = cli.command.parts();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::validation(e.to_string()))?;
    }
    let cfg = resolve(args)?;
    let out: &Path = &args.out;
    std::fs::create_dir_all(out)?;
    let mut artifacts = match &cli.command {
        Command::Train(_) => commands::train(&cfg, out)?,
        Command::Sample(_) => commands::sample(&cfg, out)?,
        Command::Boomerang(_) => commands::boomerang(&cfg, out)?,
        Command::Sweep(_) => commands::sweep(&cfg, out)?,
        Command::AugmentEval(_) => commands::augment_eval(&cfg, out)?,
        Command::Pre(_) => commands::pre(&cfg, out)?,
        Command::Selftest(_) => selftest::run(cfg.seed())?,
    };
    let mut resolved = serde_json::to_string_pretty(&cfg)?;
    resolved.push('\n');
    std::fs::write(out.join("config.json"), resolved)?;
    artifacts.push("config.json".into());
    RunIndex {
        command: name.into(),
        seed: cfg.seed(),
        artifacts,
    }
    .write(&out.join("index.json"))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("ERROR 1: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("ERROR {code}: {e}");
            ExitCode::from(code as u8)
        }
    }
}
