//! Experiment harness: configuration, runners and output for the `metromd`
//! command-line tool.

pub mod config;
pub mod output;
pub mod runners;

use std::path::Path;
use std::time::Instant;

use config::{ExperimentConfig, ExperimentKind};
use output::Artifact;
use runners::{AutocorrReport, BlowupReport, DumbbellReport, RunError, ScalingReport, StationarityReport};

/// Result of one experiment run.
#[derive(Debug, Clone)]
pub enum Outcome {
    AutocorrFluid(AutocorrReport),
    Scaling(ScalingReport),
    AutocorrDumbbell(DumbbellReport),
    Stationarity(StationarityReport),
    BlowupDemo(BlowupReport),
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    Ok(match cfg.experiment {
        ExperimentKind::AutocorrFluid => Outcome::AutocorrFluid(runners::run_autocorr_fluid(cfg)?),
        ExperimentKind::Scaling => Outcome::Scaling(runners::run_scaling(cfg)?),
        ExperimentKind::AutocorrDumbbell => Outcome::AutocorrDumbbell(runners::run_autocorr_dumbbell(cfg)?),
        ExperimentKind::Stationarity => Outcome::Stationarity(runners::run_stationarity(cfg)?),
        ExperimentKind::BlowupDemo => Outcome::BlowupDemo(runners::run_blowup_demo(cfg)?),
    })
}

impl Outcome {
    pub fn summary(&self) -> String {
        match self {
            Outcome::AutocorrFluid(r) => output::autocorr_summary(r),
            Outcome::Scaling(r) => output::scaling_summary(r),
            Outcome::AutocorrDumbbell(r) => output::dumbbell_summary(r),
            Outcome::Stationarity(r) => output::stationarity_summary(r),
            Outcome::BlowupDemo(r) => output::blowup_summary(r),
        }
    }

    pub fn artifacts(&self, plot: bool) -> Vec<Artifact> {
        let mut out = match self {
            Outcome::AutocorrFluid(r) => output::autocorr_artifacts(r),
            Outcome::AutocorrDumbbell(r) => output::autocorr_artifacts(&r.autocorr),
            Outcome::Scaling(r) => output::scaling_artifacts(r),
            Outcome::Stationarity(r) => output::stationarity_artifacts(r),
            Outcome::BlowupDemo(_) => Vec::new(),
        };
        if plot {
            let series: Option<Vec<(String, Vec<(f64, f64)>)>> = match self {
                Outcome::AutocorrFluid(r) | Outcome::AutocorrDumbbell(DumbbellReport { autocorr: r, .. }) => Some(
                    r.series
                        .iter()
                        .map(|s| (s.partition.to_string(), s.points.clone()))
                        .collect(),
                ),
                Outcome::Scaling(r) => Some(
                    r.slopes
                        .iter()
                        .map(|(k, _)| {
                            let pts = r
                                .rows
                                .iter()
                                .filter(|row| row.partition == *k)
                                .map(|row| (row.n as f64, row.mean_accept_per_particle))
                                .collect();
                            (k.to_string(), pts)
                        })
                        .collect(),
                ),
                _ => None,
            };
            if let Some(series) = series {
                let (title, x, y) = match self {
                    Outcome::Scaling(_) => ("Mean acceptance per particle", "n", "acceptance"),
                    _ => ("Richardson error", "h", "epsilon_h"),
                };
                out.push(Artifact {
                    name: "plot.svg".into(),
                    contents: output::loglog_svg(title, x, y, &series),
                });
            }
        }
        out
    }

    /// Invariant checks that turn a completed run into a failure.
    pub fn check(&self) -> Result<(), RunError> {
        if let Outcome::AutocorrDumbbell(r) = self {
            if r.solver_failures > 0 {
                return Err(RunError::Invariant(format!("{} RATTLE solver failures", r.solver_failures)));
            }
            if r.max_violation > 1e-10 || r.max_tangency > 1e-10 {
                return Err(RunError::Invariant(format!(
                    "constraint residuals {:e} / {:e} exceed 1e-10",
                    r.max_violation, r.max_tangency
                )));
            }
        }
        Ok(())
    }
}

/// Runs `cfg` and writes its outputs, summary and manifest into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, plot: bool) -> Result<Outcome, RunError> {
    let start = Instant::now();
    let outcome = run(cfg)?;
    let wall = start.elapsed().as_secs_f64();
    output::write_run(dir, cfg, &outcome.artifacts(plot), &outcome.summary(), wall)?;
    outcome.check()?;
    Ok(outcome)
}
