use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use elephant_core::csvio::format_f64;
use elephant_core::exec;
use elephant_experiments::sweep::GridAxis;
use elephant_experiments::{parse_grid, run_experiment, sweep, DataCache, ExperimentConfig, Harness, RunReport};

mod fetch;

#[derive(Parser)]
#[command(name = "elephant", version, about = "Run elephant network experiments")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, env = "ELEPHANT_WORKERS", global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// TOML or JSON experiment config.
    config: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Skip seeds whose report already exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config over its seeds.
    Run(RunOpts),
    /// Run the Cartesian product of a grid over a base config.
    Sweep {
        #[command(flatten)]
        opts: RunOpts,
        /// `key=v1,v2;other.key=v3`; may be repeated.
        #[arg(long, required = true)]
        grid: Vec<String>,
    },
    /// NTK curves and gradient covariance of a saved network.
    Diag {
        #[command(flatten)]
        opts: RunOpts,
        /// Checkpoint to analyse, overriding `diagnostics.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Dataset management.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Download the MNIST IDX files into a directory, or verify them.
    FetchMnist {
        dir: PathBuf,
        /// Only check the checksums of existing files.
        #[arg(long)]
        verify_only: bool,
    },
}

fn load(opts: &RunOpts, patch: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::read(&opts.config)?;
    patch(&mut cfg);
    if let Some(s) = &opts.seeds {
        cfg.seeds = Some(s.clone());
    }
    if let Some(d) = &opts.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()
        .with_context(|| format!("{}", opts.config.display()))?;
    Ok(cfg)
}

fn print_reports(reports: &[RunReport]) {
    for r in reports {
        let (metric, _) = r.harness.primary_metric();
        let value = r.metric(metric).map_or_else(|| "-".to_string(), format_f64);
        let status = match &r.abort_reason {
            Some(reason) => format!("ABORTED ({reason})"),
            None => "ok".to_string(),
        };
        println!("{} seed {:>3}  {metric} = {value}  {status}", r.config_hash, r.seed);
    }
}

fn exit_for(aborted: bool) -> ExitCode {
    if aborted {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.workers {
        exec::configure_workers(n);
    }
    let data = DataCache::new();
    match cli.command {
        Command::Run(opts) => {
            let cfg = load(&opts, |_| {})?;
            let reports = run_experiment(&cfg, opts.resume, &data)?;
            print_reports(&reports);
            println!("artifacts under {}", cfg.output_dir.join(cfg.hash()).display());
            Ok(exit_for(reports.iter().any(|r| r.aborted)))
        }
        Command::Sweep { opts, grid } => {
            let cfg = load(&opts, |_| {})?;
            let mut axes: Vec<GridAxis> = Vec::new();
            for g in &grid {
                for ax in parse_grid(g)? {
                    if axes.iter().any(|a| a.key == ax.key) {
                        bail!("grid key `{}` given twice", ax.key);
                    }
                    axes.push(ax);
                }
            }
            let res = sweep(&cfg, &axes, opts.resume, &data)?;
            for c in &res.cells {
                let mark = if res.best.contains(&c.cell) { "*" } else { " " };
                println!(
                    "{mark} cell {:>3} [{}]  {} = {} ± {}  (n={}, aborted={})",
                    c.cell,
                    c.label,
                    c.metric,
                    format_f64(c.mean),
                    format_f64(c.stderr),
                    c.n,
                    c.aborted
                );
            }
            println!("summary in {}", res.summary_dir.display());
            Ok(exit_for(res.any_aborted()))
        }
        Command::Diag { opts, checkpoint } => {
            let cfg = load(&opts, |cfg| {
                cfg.harness = Harness::Diagnostics;
                if let Some(c) = checkpoint {
                    cfg.diagnostics.checkpoint = Some(c);
                }
            })?;
            let reports = run_experiment(&cfg, opts.resume, &data)?;
            for r in &reports {
                for (k, v) in &r.metrics {
                    println!("seed {} {k} = {}", r.seed, format_f64(*v));
                }
            }
            println!("artifacts under {}", cfg.output_dir.join(cfg.hash()).display());
            Ok(exit_for(reports.iter().any(|r| r.aborted)))
        }
        Command::Data {
            command: DataCommand::FetchMnist { dir, verify_only },
        } => {
            let n = fetch::fetch_mnist(&dir, verify_only).with_context(|| format!("MNIST in {}", dir.display()))?;
            if n == 0 {
                println!("all MNIST files present and verified in {}", dir.display());
            } else {
                println!("fetched and verified {n} MNIST file(s) into {}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
