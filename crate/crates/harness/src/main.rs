use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use metromd::config::{ExperimentConfig, ExperimentKind};
use metromd::runners::RunError;

/// Metropolized Langevin experiments.
#[derive(Debug, Parser)]
#[command(name = "metromd", version)]
struct Cli {
    /// autocorr_fluid, scaling, autocorr_dumbbell, stationarity or blowup_demo
    experiment: String,
    /// Path to a `key = value` config file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the sample budget
    #[arg(long)]
    samples: Option<u64>,
    /// Also write an SVG log-log plot
    #[arg(long)]
    plot: bool,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let kind: ExperimentKind = cli.experiment.parse()?;
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| metromd::config::ConfigError::Invalid(format!("{}: {e}", cli.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text, Some(kind))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(samples) = cli.samples {
        cfg.samples = samples;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| {
        let outcome = metromd::run_to_dir(&cfg, &cfg.out, cli.plot)?;
        print!("{}", outcome.summary());
        eprintln!("wrote {}", cfg.out.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
