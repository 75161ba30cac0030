use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tsln::config::PipelineConfig;
use tsln::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "tsln", version, about = "Two-stage logistic-normal small area estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic census and replicate survey samples.
    Simulate(Common),
    /// Fit both model stages to a survey.
    Fit(Common),
    /// Posterior summaries from a previous fit in the output directory.
    Summarize(Common),
    /// Run the simulation grid.
    Experiment(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIAGNOSTIC: u8 = 3;

fn load(c: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate(c) => {
            let cfg = load(c)?;
            pipeline::simulate(&cfg, cfg.seed, &c.out).context("simulate")?;
            eprintln!("wrote {} replicate samples to {}", cfg.simulate.replicates, c.out.display());
        }
        Command::Fit(c) => {
            let cfg = load(c)?;
            let r = pipeline::fit(&cfg, cfg.seed, &c.out).context("fit")?;
            eprintln!(
                "fit {} records in {} areas: SR {:.3}, ALC {:.3}, max mu R-hat {:.4}",
                r.records, r.sampled_areas, r.sr, r.alc, r.stage2_max_mu_rhat
            );
        }
        Command::Summarize(c) => {
            let cfg = load(c)?;
            let t = pipeline::summarize(&cfg, &c.out).context("summarize")?;
            eprintln!("summarized {} areas; national median {:.4}", t.areas.len(), t.rollup.median);
        }
        Command::Experiment(c) => {
            let cfg = load(c)?;
            let total = cfg.experiment.cells().len();
            let done = std::sync::atomic::AtomicUsize::new(0);
            let (_, grid) = pipeline::experiment(&cfg, cfg.seed, &c.out, |r| {
                let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                let status = match &r.outcome {
                    Ok(m) => format!("ALC {:.3} coverage {:.3}", m.alc, m.report.coverage),
                    Err(e) => format!("failed: {e}"),
                };
                eprintln!(
                    "[{k}/{total}] replicate {} sigma {} RE {}: {status}",
                    r.key.replicate, r.key.residual_sd, r.key.area_effect
                );
            })
            .context("experiment")?;
            for g in grid {
                eprintln!(
                    "sigma {} RE {}: median ALC {:.3}, coverage {:.3}, median MRRMSE {:.3}",
                    g.residual_sd, g.area_effect, g.median_alc, g.coverage, g.median_mrrmse
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<PipelineError>() {
                Some(p) if p.is_config() => ExitCode::from(EXIT_CONFIG),
                Some(p) if p.is_diagnostic() => ExitCode::from(EXIT_DIAGNOSTIC),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
