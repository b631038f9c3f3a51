use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowmap_cli::commands::{eval, sample, train, CHECKPOINT_FILE};
use flowmap_cli::config::load_config;
use flowmap_cli::error::{runtime_err, CliResult};
use flowmap_cli::{checks, config};

#[derive(Parser)]
#[command(
    name = "flowmap",
    version,
    about = "Train, sample, and evaluate endpoint-prediction flows on synthetic tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-key override, e.g. --set train.steps=500. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Ends sampling on the last integrator state instead of jumping to the
    /// final prediction.
    #[arg(long)]
    strict_paper: bool,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<config::RunConfig> {
        load_config(&self.config, &self.sets, self.seed, self.strict_paper)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes model.ckpt, loss.csv, and manifest.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate the learned flow from fresh prior draws; writes samples.csv
    /// or frames.txt plus trajectory.csv.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained checkpoint to sample from.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score samples against the target distribution; writes report.json and
    /// metrics.csv (plus ablation.csv when eval.ablate_k is set).
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, sample, and eval into one output directory.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a self-check suite against independently coded oracles.
    Check {
        /// One of: geom, grad, sampler, all.
        #[arg(long)]
        suite: String,
        /// Also write the results CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_checks(suite: &str, out: Option<&PathBuf>) -> CliResult<()> {
    let rows = checks::run_suite(suite)?;
    let csv = checks::to_csv(&rows);
    print!("{csv}");
    if let Some(path) = out {
        std::fs::write(path, &csv)
            .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(runtime_err(format!("{} check(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { cfg, out } => {
            let config = cfg.load()?;
            let summary = train::run(&config, &out)?;
            println!(
                "trained {} steps (cfm {}, refine {}), final loss {:.6e}",
                summary.steps, summary.cfm_steps, summary.refine_steps, summary.final_loss
            );
            Ok(())
        }
        Command::Sample { cfg, checkpoint, out } => {
            let config = cfg.load()?;
            let outcome = sample::run(&config, &checkpoint, &out)?;
            println!(
                "sampled {} draws at {} evaluations each",
                config.sample.n_samples, outcome.nfe_per_sample
            );
            Ok(())
        }
        Command::Eval { cfg, checkpoint, out } => {
            let config = cfg.load()?;
            let report = eval::run(&config, &checkpoint, &out)?;
            println!(
                "evaluated {} samples: median score {:.6e}, energy distance {:.6e}",
                report.n_samples, report.median_score, report.energy_distance
            );
            Ok(())
        }
        Command::Run { cfg, out } => {
            let config = cfg.load()?;
            let summary = train::run(&config, &out)?;
            println!(
                "trained {} steps (cfm {}, refine {}), final loss {:.6e}",
                summary.steps, summary.cfm_steps, summary.refine_steps, summary.final_loss
            );
            let checkpoint = out.join(CHECKPOINT_FILE);
            let outcome = sample::run(&config, &checkpoint, &out)?;
            println!(
                "sampled {} draws at {} evaluations each",
                config.sample.n_samples, outcome.nfe_per_sample
            );
            let report = eval::run(&config, &checkpoint, &out)?;
            println!(
                "evaluated {} samples: median score {:.6e}, energy distance {:.6e}",
                report.n_samples, report.median_score, report.energy_distance
            );
            Ok(())
        }
        Command::Check { suite, out } => run_checks(&suite, out.as_ref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
