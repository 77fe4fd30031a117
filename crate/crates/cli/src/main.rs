//! Command-line front end: training runs, evaluation reports, agent
//! comparisons and trace replay verification. Every failure exits nonzero
//! with one machine-readable JSON line on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fourways::config::DemandLevel;
use fourways::harness::{self, AgentSpec};
use fourways::rewards::RewardKind;
use fourways::trace;
use fourways::{Config, Error, Result};

#[derive(Parser)]
#[command(
    name = "fourways",
    version,
    about = "Four-arm junction workbench: train, evaluate and compare signal-control agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents with one reward kind and mark the best run.
    Train {
        /// Reward kind, e.g. avg-speed; see the config reference for all 12.
        #[arg(long)]
        reward: String,
        /// Independent runs to launch; defaults to the configured count.
        #[arg(long)]
        runs: Option<usize>,
        /// Base seed; each run derives its own seed from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config TOML; omit for the built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory collecting checkpoints, logs, manifest and best marker.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one agent greedily over a seeded scenario grid.
    Evaluate {
        /// Checkpoint path, "system-d" or "max-occupancy".
        #[arg(long)]
        agent: String,
        /// Comma-separated demand levels.
        #[arg(long, default_value = "low,medium,high")]
        levels: String,
        /// Inclusive seed range "0..99" or a comma-separated list; defaults
        /// to the configured range.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report directory (scores, summary, plot, meta).
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Also record a replayable trace per scenario under this directory.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Paired evaluation of several agents over identical scenarios.
    Compare {
        /// Comma-separated agents: checkpoint paths or baseline names.
        #[arg(long)]
        agents: String,
        #[arg(long, default_value = "low,medium,high")]
        levels: String,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Re-run a recorded trace and verify it reproduces byte-for-byte.
    Replay {
        /// Trace directory written by `evaluate --trace-out`.
        #[arg(long)]
        trace: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn parse_levels(s: &str) -> Result<Vec<DemandLevel>> {
    let levels: Vec<DemandLevel> =
        s.split(',').map(|t| t.trim().parse()).collect::<Result<_>>()?;
    if levels.is_empty() {
        return Err(Error::Config("no demand levels given".into()));
    }
    Ok(levels)
}

/// Either an inclusive range "a..b" or a comma-separated list of seeds.
fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let int = |t: &str| -> Result<u64> {
        t.trim().parse().map_err(|_| Error::Config(format!("bad seed: {t:?}")))
    };
    if let Some((a, b)) = s.split_once("..") {
        let from = int(a)?;
        let to = int(b)?;
        if from > to {
            return Err(Error::Config(format!("empty seed range: {s:?}")));
        }
        return Ok((from..=to).collect());
    }
    s.split(',').map(int).collect()
}

fn seeds_or_default(arg: Option<&String>, cfg: &Config) -> Result<Vec<u64>> {
    match arg {
        Some(s) => parse_seeds(s),
        None => Ok((cfg.evaluation.seed_from..=cfg.evaluation.seed_to).collect()),
    }
}

fn print_summary(rows: &[harness::SummaryRow]) {
    println!("{:<24} {:>8} {:>10} {:>10} {:>10} {:>10}", "agent", "level", "median_s", "mean_s", "q1_s", "q3_s");
    for r in rows {
        println!(
            "{:<24} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            r.agent, r.level.to_string(), r.median_s, r.mean_s, r.q1_s, r.q3_s
        );
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { reward, runs, seed, config, out } => {
            let cfg = load_config(config.as_ref())?;
            let kind: RewardKind = reward.parse()?;
            let runs = runs.unwrap_or(cfg.training.runs);
            let report = harness::train_command(&cfg, kind, seed, runs, &out, true)?;
            for r in &report.runs {
                let status = if r.failed { "failed" } else { "ok" };
                println!("run {:02}: {status}, {} episodes, seed {}", r.run_id, r.episodes_done, r.seed);
            }
            println!(
                "best: run {:02}, mean of per-level medians {:.3} s -> {}",
                report.best.run_id, report.best.score_s, report.best.checkpoint
            );
            Ok(())
        }
        Command::Evaluate { agent, levels, seeds, config, out, trace_out } => {
            let cfg = load_config(config.as_ref())?;
            let levels = parse_levels(&levels)?;
            let seeds = seeds_or_default(seeds.as_ref(), &cfg)?;
            let scenarios = harness::scenario_grid(&levels, &seeds, cfg.evaluation.episode_s);
            let spec = AgentSpec::parse(&agent);
            let summary =
                harness::evaluate_command(&cfg, &spec, &scenarios, &out, true, trace_out.as_deref())?;
            print_summary(&summary);
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Compare { agents, levels, seeds, config, out } => {
            let cfg = load_config(config.as_ref())?;
            let levels = parse_levels(&levels)?;
            let seeds = seeds_or_default(seeds.as_ref(), &cfg)?;
            let scenarios = harness::scenario_grid(&levels, &seeds, cfg.evaluation.episode_s);
            let specs: Vec<AgentSpec> =
                agents.split(',').map(|a| AgentSpec::parse(a.trim())).collect();
            let summary = harness::compare_command(&cfg, &specs, &scenarios, &out, true)?;
            print_summary(&summary);
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Replay { trace } => {
            let scratch = tempfile::tempdir()?;
            let results = trace::verify_trace(&trace, scratch.path())?;
            let mut mismatched = Vec::new();
            for (file, ok) in &results {
                println!("{file}: {}", if *ok { "match" } else { "MISMATCH" });
                if !ok {
                    mismatched.push(file.clone());
                }
            }
            if !mismatched.is_empty() {
                return Err(Error::Trace(format!(
                    "replay diverged from the recording in {}",
                    mismatched.join(", ")
                )));
            }
            println!("trace reproduces byte-for-byte");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = serde_json::to_string(&e.to_string()).unwrap_or_else(|_| "\"\"".into());
            eprintln!("{{\"error\":\"{}\",\"message\":{message}}}", e.kind());
            ExitCode::FAILURE
        }
    }
}
