//! The `tgnn` command line, as a library so the commands can be driven in-process.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use tgnn::experiments::{self as ex, ArtifactDir};
use tgnn::fdm::ReferenceSolution;
use tgnn::metrics::{evaluate, EvalReport};
use tgnn::net::NetworkParams;
use tgnn::{Error, ExperimentConfig, Result};

#[derive(Parser, Debug)]
#[command(
    name = "tgnn",
    version,
    about = "Theory-guided neural network experiments for transient groundwater flow"
)]
pub struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; replaces any seed list in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample the log-conductivity field.
    Field,
    /// Sample the field and simulate reference heads.
    Sim,
    /// Train one network with the configured trainer mode.
    Train,
    /// Train TgNN-LD, TgNN and TgNN-1 on identical data and seeds.
    Compare,
    /// One TgNN-LD run per epoch budget.
    SweepEpochs {
        /// Comma-separated budgets; defaults to `experiments.sweep_epochs`.
        #[arg(long, value_delimiter = ',')]
        epochs: Option<Vec<usize>>,
    },
    /// All three methods at each observation-noise level.
    NoiseSuite {
        /// Comma-separated percentages; defaults to `metrics.noise_levels`.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Frozen-multiplier run paired with a dynamic run.
    ReplayMultipliers {
        /// λ_PDE,λ_EC,λ_EK; defaults to `experiments.replay_multipliers`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        lambda: Option<Vec<f64>>,
    },
    /// Score a checkpoint against a reference solution.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        solution: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.experiments.seeds.clear();
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))
}

/// Runs one command and returns the finished output directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let mut cfg = load_config(&cli)?;
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::SweepEpochs { epochs: Some(list) } => cfg.experiments.sweep_epochs = list.clone(),
        Command::NoiseSuite { levels: Some(list) } => cfg.metrics.noise_levels = list.clone(),
        Command::ReplayMultipliers { lambda: Some(v) } => {
            let v: [f64; 3] = v
                .as_slice()
                .try_into()
                .map_err(|_| Error::InvalidArgument(format!("--lambda needs 3 values, got {}", v.len())))?;
            cfg.experiments.replay_multipliers = v;
        }
        _ => {}
    }
    cfg.validate()?;
    let mut out = ArtifactDir::create(&cfg.output_dir)?;

    match &cli.command {
        Command::Field | Command::Sim | Command::Train => {
            out.write_header(&cfg, &[cfg.seed])?;
            let sc = ex::build_scenario(&cfg, cfg.seed)?;
            let with_solution = !matches!(cli.command, Command::Field);
            out.write_scenario("", &sc, with_solution)?;
            if let Command::Train = cli.command {
                let prepared = ex::prepare(&cfg, &sc, cfg.metrics.noise_percent)?;
                out.write("dataset.csv", &prepared.problem.dataset.to_csv())?;
                let method = ex::configured_method(&cfg.trainer);
                let label = if method == ex::Method::Dual { ex::TGNN_LD } else { "fixed-weights" };
                let run = ex::run_method(&cfg, &sc, &prepared, label, method, cfg.trainer.max_epochs)?;
                out.write_run("", &run)?;
                out.write("eval.csv", &format!("{}\n{}\n", EvalReport::CSV_HEADER, run.report.csv_row()))?;
                out.write("timing.txt", &run.timing_row())?;
                ex::check_aborted(std::slice::from_ref(&run))?;
            }
        }
        Command::Compare => {
            let seeds = cfg.master_seeds();
            out.write_header(&cfg, &seeds)?;
            let (scenarios, runs) = ex::compare_runs(&cfg, &seeds, threads)?;
            write_grouped(&mut out, &scenarios, &runs, "compare")?;
        }
        Command::NoiseSuite { .. } => {
            let seeds = cfg.master_seeds();
            out.write_header(&cfg, &seeds)?;
            let (scenarios, runs) = ex::noise_runs(&cfg, &seeds, &cfg.metrics.noise_levels, threads)?;
            write_grouped(&mut out, &scenarios, &runs, "noise")?;
        }
        Command::SweepEpochs { .. } => {
            out.write_header(&cfg, &[cfg.seed])?;
            let (sc, runs) = ex::sweep_runs(&cfg, cfg.seed, &cfg.experiments.sweep_epochs, threads)?;
            out.write_scenario("", &sc, false)?;
            for r in &runs {
                out.write_run(&format!("epochs_{}/", r.max_epochs), r)?;
            }
            out.write("sweep.csv", &ex::runs_csv(&runs))?;
            out.write("timing_sweep.csv", &ex::timing_csv(&runs))?;
            ex::check_aborted(&runs)?;
        }
        Command::ReplayMultipliers { .. } => {
            out.write_header(&cfg, &[cfg.seed])?;
            let (sc, runs) = ex::replay_runs(&cfg, cfg.seed, cfg.experiments.replay_multipliers, threads)?;
            out.write_scenario("", &sc, false)?;
            for r in &runs {
                out.write_run(&format!("{}/", r.label), r)?;
            }
            out.write("replay.csv", &ex::runs_csv(&runs))?;
            out.write("timing_replay.csv", &ex::timing_csv(&runs))?;
            ex::check_aborted(&runs)?;
        }
        Command::Eval { checkpoint, solution } => {
            out.write_header(&cfg, &[cfg.seed])?;
            let (params, iteration) = NetworkParams::from_checkpoint(&read_input(checkpoint)?)?;
            let reference = ReferenceSolution::from_text(&read_input(solution)?)?;
            let start = Instant::now();
            let mut report = evaluate(&params, &reference, &cfg.metrics.eval)?;
            report.wall_time_s = start.elapsed().as_secs_f64();
            let mut kv = format!(
                "checkpoint_iteration={iteration}\nfield_fingerprint={}\n",
                reference.field_fingerprint
            );
            kv.push_str(&report.to_key_values());
            out.write("eval.txt", &kv)?;
            out.write("eval.csv", &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()))?;
            out.write("timing.txt", &format!("eval_wall_s={:.6}\n", report.wall_time_s))?;
        }
    }
    out.finish()
}

fn write_grouped(out: &mut ArtifactDir, scenarios: &[ex::Scenario], runs: &[ex::RunRecord], name: &str) -> Result<()> {
    for sc in scenarios {
        out.write_scenario(&format!("seed_{}/", sc.master_seed), sc, false)?;
    }
    for r in runs {
        let noise = if name == "noise" {
            format!("noise_{}/", r.noise_percent)
        } else {
            String::new()
        };
        out.write_run(&format!("seed_{}/{noise}{}/", r.master_seed, r.label), r)?;
    }
    out.write(&format!("{name}.csv"), &ex::runs_csv(runs))?;
    out.write(&format!("{name}_summary.csv"), &ex::medians_csv(&ex::medians(runs)))?;
    out.write(&format!("timing_{name}.csv"), &ex::timing_csv(runs))?;
    ex::check_aborted(runs)
}

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::InvalidArgument(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests;
