use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use caltrend_cli::commands::{cmd_estimate, cmd_recommend, cmd_simulate};
use caltrend_cli::config::RunConfig;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caltrend", version, about = "Calendar time-varying treatment effects in sequential trial emulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate effect curves, project, select, decompose and test.
    Estimate(RunArgs),
    /// Run a simulation campaign over a scenario grid.
    Simulate(RunArgs),
    /// Recompute the reporting decision from saved artifacts.
    Recommend {
        /// Directory holding selection.json and theta.json.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Print a configuration template with every default spelled out.
    ExportConfigTemplate {
        /// Write to this file instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(c) = self.c {
            cfg.analysis.c = c;
        }
        if let Some(d) = self.delta {
            cfg.analysis.delta = d;
        }
        if let Some(b) = self.bootstrap {
            cfg.analysis.bootstrap = b;
        }
        Ok(cfg)
    }
}

/// Requested threads, capped by CALTREND_THREADS.
fn thread_budget(requested: Option<usize>) -> anyhow::Result<usize> {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut n = requested.unwrap_or(available).max(1);
    if let Ok(v) = std::env::var("CALTREND_THREADS") {
        let cap: usize = v.parse().with_context(|| format!("CALTREND_THREADS={v} is not a positive integer"))?;
        n = n.min(cap.max(1));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(n)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Estimate(args) => {
            let cfg = args.load()?;
            let threads = thread_budget(cfg.threads)?;
            let files = cmd_estimate(&cfg, threads)?;
            println!("wrote {} artifacts to {}", files.len(), cfg.output.display());
        }
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let threads = thread_budget(cfg.threads)?;
            let files = cmd_simulate(&cfg, threads)?;
            println!("wrote {} summaries to {}", files.len(), cfg.output.display());
        }
        Command::Recommend { output, c, delta } => {
            let doc = cmd_recommend(&output, c, delta)?;
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::ExportConfigTemplate { output } => {
            let text = RunConfig::template().to_toml()?;
            match output {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CALTREND_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
