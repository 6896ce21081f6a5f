use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use hypermf_cli::{exit_code, run, Command, Config};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Simulate,
    Vlasov,
    Continuum,
    Distance,
    ConvergenceStudy,
    CutdistStudy,
    Figures,
    Validate,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Simulate => Command::Simulate,
            Sub::Vlasov => Command::Vlasov,
            Sub::Continuum => Command::Continuum,
            Sub::Distance => Command::Distance,
            Sub::ConvergenceStudy => Command::ConvergenceStudy,
            Sub::CutdistStudy => Command::CutdistStudy,
            Sub::Figures => Command::Figures,
            Sub::Validate => Command::Validate,
        }
    }
}

/// Higher-order multi-agent dynamics, their Vlasov limits and distances.
#[derive(Debug, Parser)]
#[command(name = "hypermf", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings, applied after the file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base seed; overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(failed) => {
            if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<hypermf::Error>().map_or(1, exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| hypermf::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    let report = run(cli.command.into(), &cfg, &cli.out)?;
    let mut stdout = std::io::stdout().lock();
    for line in &report.lines {
        if writeln!(stdout, "{line}").is_err() {
            break;
        }
    }
    Ok(report.failed)
}
