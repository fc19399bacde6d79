use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use spngp::SpnGp;
use spngp_cli::{evaluate, predict, sweep, train, ExperimentConfig};

#[derive(Parser)]
#[command(name = "spngp", version, about = "Sum-product networks of local Gaussian-process experts")]
struct Cli {
    /// Experiment config (TOML). Required by train, eval and sweep.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for leaf fitting and optimization.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print optimizer traces and phase timings to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the configured dataset and write model and report.
    Train,
    /// Predictive moments of a saved model at the rows of a query CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        /// Refuse queries outside the training domain.
        #[arg(long)]
        strict: bool,
    },
    /// Baselines, full GP and SPN-GP over repeated train/test splits.
    Eval,
    /// RMSE against the number of points per expert.
    Sweep,
    /// Check a model file.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let Some(p) = &cli.config else {
        bail!("this command needs --config");
    };
    ExperimentConfig::load(p, cli.seed)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("setting up the worker pool")?;
    }
    match &cli.cmd {
        Cmd::Train => {
            let cfg = config(&cli)?;
            let out = train::run(&cfg, cli.verbose)?;
            let files = train::write(&cfg, &out)?;
            println!("model   {}", files.model.display());
            println!("report  {}", files.report.display());
            println!("log evidence {:.6}, {} leaves", out.report.log_evidence, out.report.leaves.len());
            if cli.verbose {
                for (p, t) in &out.timings.phases {
                    eprintln!("{p}\t{t:.3}s");
                }
            }
        }
        Cmd::Predict {
            model,
            query,
            out,
            delimiter,
            strict,
        } => {
            if !delimiter.is_ascii() {
                bail!("delimiter must be ASCII");
            }
            let csv = predict::run(model, query, *delimiter as u8, *strict)?;
            match out {
                Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Cmd::Eval => {
            let cfg = config(&cli)?;
            let (report, timings) = evaluate::run(&cfg, cli.verbose)?;
            evaluate::write(&cfg, &report, &timings)?;
            print!("{}", report.to_table());
            if cli.verbose {
                eprintln!("total {:.3}s", timings.total());
            }
        }
        Cmd::Sweep => {
            let cfg = config(&cli)?;
            let (res, timings) = sweep::run(&cfg, cli.verbose)?;
            sweep::write(&cfg, &res, &timings)?;
            print!("{}", res.to_csv());
        }
        Cmd::Validate { model } => {
            let (m, fp) = SpnGp::load(model).with_context(|| format!("{} is not a valid model", model.display()))?;
            let v = m.validate();
            if !v.is_empty() {
                for x in &v {
                    println!("{x}");
                }
                bail!("{} violations", v.len());
            }
            println!(
                "ok: {} nodes, {} leaves, config {fp}",
                m.nodes().len(),
                m.leaf_ids().len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
