use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sst_cli::commands::{ablate_sampling, format_ablation, prune_checkpoint, prune_csv, report, train_to_dir};
use sst_cli::gradcheck;
use sst_cli::{Checkpoint, RunConfig};
use sst_core::diagnostics::PRUNE_ENERGIES;

#[derive(Parser)]
#[command(name = "sst", version, about = "Sparse spectral training and low-rank baselines")]
struct Cli {
    /// Worker threads for seed sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run; writes metrics.csv, summary.json and checkpoint.bin.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every layer kind against every loss.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Compare the four sampling strategies under identical seeds.
    AblateSampling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prune checkpoints by retained spectral energy and re-evaluate.
    Prune {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Comma-separated energies; defaults to 1.00 down to 0.90.
        #[arg(long, value_delimiter = ',')]
        energies: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a run directory (or a directory of runs).
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads > 1 {
        log::warn!("built without the parallel feature; --threads ignored");
    }

    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let out = out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs/latest"));
            let art = train_to_dir(&cfg, &out)?;
            let m = &art.output.metrics;
            println!(
                "{} r={} seed={}: {} steps, final eval loss {}",
                m.method,
                m.rank,
                m.seed,
                m.steps_completed,
                m.final_eval().map_or("-".into(), |e| format!("{:.6}", e.loss))
            );
            println!("wrote {}, {}, {}", art.metrics.display(), art.summary.display(), art.checkpoint.display());
            if let Some(step) = art.nan_abort() {
                eprintln!("non-finite loss at step {step}; run aborted");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seeds, corrupt_gradient } => {
            let entries = gradcheck::run(gradcheck::Options {
                seeds,
                corrupt: corrupt_gradient,
                ..Default::default()
            })?;
            print!("{}", gradcheck::format_table(&entries));
            if entries.iter().all(|e| e.passed()) {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("gradient check failed (tolerance {:e})", gradcheck::TOLERANCE);
                Ok(ExitCode::from(1))
            }
        }
        Command::AblateSampling { config, seed, seeds, out } => {
            let cfg = load_config(&config, seed)?;
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let table = format_ablation(&ablate_sampling(&cfg, seeds)?);
            print!("{table}");
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("ablation.txt"), &table)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Prune { checkpoints, energies, out } => {
            let energies = if energies.is_empty() { PRUNE_ENERGIES.to_vec() } else { energies };
            let mut rows = Vec::new();
            for path in &checkpoints {
                let ck = Checkpoint::load(path)?;
                let label = path.parent().and_then(|p| p.file_name()).map_or_else(
                    || path.display().to_string(),
                    |n| n.to_string_lossy().into_owned(),
                );
                rows.extend(prune_checkpoint(&ck, &label, &energies)?);
            }
            println!("{:<16} {:>7} {:>13} {:>12} {:>12}", "run", "energy", "pruned ratio", "eval loss", "delta");
            for r in &rows {
                println!("{:<16} {:>7.2} {:>13.4} {:>12.6} {:>12.3e}", r.label, r.energy, r.pruned_ratio, r.eval_loss, r.delta);
            }
            if let Some(out) = out {
                fs::write(&out, prune_csv(&rows))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run_dir, out } => {
            let (text, csv) = report(&run_dir)?;
            print!("{text}");
            let out = out.unwrap_or_else(|| run_dir.join("report.csv"));
            fs::write(&out, csv)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
