use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use collapse_lab_cli::{analyze, init_threads, presets, resume, run, AnalyzeOptions, RunConfig, RunOptions, Status};

#[derive(Parser)]
#[command(name = "collapse-lab", version, about = "Smoluchowski-Poisson collapse laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run from a config file or a preset name.
    Run {
        config: String,
        /// Override the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Interrupt after this step, leaving a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Continue an interrupted run from its checkpoint.
    Resume {
        checkpoint: PathBuf,
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Fit the blowup time and analyse collapses of a finished run.
    Analyze {
        dir: PathBuf,
        /// Blowup point `a,b`; by default every separated peak of the last snapshot.
        #[arg(long, value_parser = parse_point)]
        x0: Option<(f64, f64)>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        b_list: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
    },
    /// List the shipped presets.
    Presets,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let x = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let y = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((x, y))
}

fn load_config(arg: &str) -> Result<RunConfig> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return RunConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()));
    }
    if presets::NAMES.contains(&arg) {
        return RunConfig::from_preset(arg);
    }
    bail!("`{arg}` is neither a config file nor a preset ({})", presets::NAMES.join(", "))
}

fn report_outcome(o: &collapse_lab_cli::RunOutcome) {
    match o.status {
        Status::Completed => println!(
            "completed: {} after {} steps at t = {} ({})",
            o.stop_reason.map_or("-", |r| r.as_str()),
            o.steps,
            o.t,
            o.dir.display()
        ),
        Status::Interrupted => println!("interrupted at step {} (t = {}); resume from {}", o.steps, o.t, o.dir.join("checkpoint.bin").display()),
        s => println!("{}: step {} (t = {})", s.as_str(), o.steps, o.t),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.command {
        Command::Run { config, output, stop_after } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            let outcome = run(&cfg, RunOptions { stop_after })?;
            report_outcome(&outcome);
        }
        Command::Resume { checkpoint, stop_after } => {
            let outcome = resume(&checkpoint, RunOptions { stop_after })?;
            if outcome.already_complete {
                println!("run in {} is already complete; nothing to resume", outcome.dir.display());
            } else {
                report_outcome(&outcome);
            }
        }
        Command::Analyze { dir, x0, b_list, epsilon } => {
            let opts = AnalyzeOptions { x0, b_list, epsilon, ..AnalyzeOptions::default() };
            let report = analyze(&dir, &opts)?;
            println!("{}: {} collapse(s), {} quantized", report.kind, report.collapses, report.quantized);
            if let Some(note) = &report.note {
                println!("{note}");
            }
            println!("report written to {}", dir.join(collapse_lab_cli::analyze::REPORT).display());
        }
        Command::Presets => {
            for name in presets::NAMES {
                println!("{name}");
            }
        }
    }
    Ok(())
}
