//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use metromd_core::integrate::{RattleSolverParams, Sweep};
use metromd_core::model::PartitionKind;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("bad value for `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    AutocorrFluid,
    Scaling,
    AutocorrDumbbell,
    Stationarity,
    BlowupDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::AutocorrFluid,
        ExperimentKind::Scaling,
        ExperimentKind::AutocorrDumbbell,
        ExperimentKind::Stationarity,
        ExperimentKind::BlowupDemo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::AutocorrFluid => "autocorr_fluid",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::AutocorrDumbbell => "autocorr_dumbbell",
            ExperimentKind::Stationarity => "stationarity",
            ExperimentKind::BlowupDemo => "blowup_demo",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ConfigError::Value {
                key: "experiment".into(),
                reason: format!("unknown experiment `{s}`"),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalName {
    Verlet,
    Respa,
    Rattle,
}

impl FromStr for ProposalName {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "verlet" => Ok(Self::Verlet),
            "respa" => Ok(Self::Respa),
            "rattle" => Ok(Self::Rattle),
            _ => Err(ConfigError::Value {
                key: "proposal".into(),
                reason: format!("unknown proposal `{s}`"),
            }),
        }
    }
}

impl fmt::Display for ProposalName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Verlet => "verlet",
            Self::Respa => "respa",
            Self::Rattle => "rattle",
        })
    }
}

/// How the autocorrelation experiments estimate `A^h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// One long chain per stepsize, every step an origin.
    LongRun,
    /// Origins drawn from a stationary chain; from each origin the whole
    /// stepsize ladder runs on shared noise.
    Coupled,
}

impl FromStr for Estimator {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long_run" => Ok(Self::LongRun),
            "coupled" => Ok(Self::Coupled),
            _ => Err(ConfigError::Value {
                key: "estimator".into(),
                reason: format!("unknown estimator `{s}`"),
            }),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LongRun => "long_run",
            Self::Coupled => "coupled",
        })
    }
}

/// Every tunable of every experiment. Fields an experiment does not use are
/// ignored by its runner.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Particles for fluids, dumbbells for the constrained system.
    pub n: usize,
    pub n_ladder: Vec<usize>,
    pub dim: usize,
    pub density: f64,
    pub temperature: f64,
    /// Explicit box side; derived from `n` and `density` when absent.
    pub box_length: Option<f64>,
    pub mass: f64,
    pub gamma: f64,
    pub partitions: Vec<PartitionKind>,
    pub proposal: ProposalName,
    pub sweep: Sweep,
    pub h: f64,
    pub h_ladder: Vec<f64>,
    pub h_fast: Option<f64>,
    pub r_split: f64,
    pub r_cut: f64,
    pub rest_length: f64,
    pub samples: u64,
    pub burn_in: u64,
    pub t_corr: f64,
    pub estimator: Estimator,
    /// Simulated time between consecutive origins of the coupled estimator.
    pub origin_spacing: f64,
    pub seed: u64,
    pub cell_list: bool,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
    pub bins: usize,
    pub thin: u64,
    pub out: PathBuf,
}

pub const KEYS: &[&str] = &[
    "experiment",
    "n",
    "n_ladder",
    "dim",
    "density",
    "temperature",
    "box_length",
    "mass",
    "gamma",
    "partitions",
    "proposal",
    "sweep",
    "h",
    "h_ladder",
    "h_fast",
    "r_split",
    "r_cut",
    "rest_length",
    "samples",
    "burn_in",
    "t_corr",
    "estimator",
    "origin_spacing",
    "seed",
    "cell_list",
    "solver_tolerance",
    "solver_max_iterations",
    "bins",
    "thin",
    "out",
];

impl ExperimentConfig {
    /// Reference parameters for each experiment at desk-scale budgets.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let base = Self {
            experiment,
            n: 25,
            n_ladder: vec![27, 64, 125, 216, 512],
            dim: 2,
            density: 0.8442,
            temperature: 0.728,
            box_length: None,
            mass: 1.0,
            gamma: 1.0,
            partitions: vec![PartitionKind::Trivial, PartitionKind::PerParticle],
            proposal: ProposalName::Verlet,
            sweep: Sweep::Ascending,
            h: 0.01,
            h_ladder: vec![0.005, 0.0025, 0.00125, 0.000625],
            h_fast: None,
            r_split: 1.5,
            r_cut: 2.5,
            rest_length: 1.0,
            samples: 10_000_000,
            burn_in: 100_000,
            t_corr: 1.0,
            estimator: Estimator::LongRun,
            origin_spacing: 1.0,
            seed: 1,
            cell_list: true,
            solver_tolerance: RattleSolverParams::default().tolerance,
            solver_max_iterations: RattleSolverParams::default().max_iterations,
            bins: 50,
            thin: 400,
            out: PathBuf::from("out").join(experiment.as_str()),
        };
        match experiment {
            ExperimentKind::AutocorrFluid => base,
            ExperimentKind::Scaling => Self {
                dim: 3,
                h: 0.01,
                samples: 100_000,
                burn_in: 10_000,
                ..base
            },
            ExperimentKind::AutocorrDumbbell => Self {
                n: 30,
                density: 0.998,
                temperature: 3.0,
                r_cut: 3.0,
                partitions: vec![PartitionKind::PerDumbbell],
                proposal: ProposalName::Rattle,
                samples: 1_000_000,
                ..base
            },
            ExperimentKind::Stationarity => Self {
                n: 1,
                dim: 1,
                box_length: Some(1.0),
                temperature: 1.0,
                partitions: vec![PartitionKind::Trivial],
                h: 0.05,
                samples: 10_000_000,
                burn_in: 10_000,
                ..base
            },
            ExperimentKind::BlowupDemo => Self {
                partitions: vec![PartitionKind::PerParticle],
                h: 0.1,
                samples: 1_000_000,
                burn_in: 0,
                ..base
            },
        }
    }

    /// Parses a config file. `experiment` may be omitted when `fallback` is
    /// given; every other key starts from the experiment's defaults.
    pub fn parse(text: &str, fallback: Option<ExperimentKind>) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line, key });
            }
            if pairs.iter().any(|(_, k, _)| *k == key) {
                return Err(ConfigError::Duplicate { line, key });
            }
            pairs.push((line, key, value.trim().to_string()));
        }
        let experiment = match pairs.iter().find(|(_, k, _)| k == "experiment") {
            Some((_, _, v)) => v.parse()?,
            None => fallback.ok_or_else(|| ConfigError::Invalid("no `experiment` key".into()))?,
        };
        if let Some(expected) = fallback {
            if expected != experiment {
                return Err(ConfigError::Invalid(format!(
                    "config is for `{experiment}` but `{expected}` was requested"
                )));
            }
        }
        let mut cfg = Self::defaults(experiment);
        for (_, key, value) in &pairs {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "experiment" => {}
            "n" => self.n = num(key, value)?,
            "n_ladder" => self.n_ladder = list(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "density" => self.density = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "box_length" => self.box_length = optional(key, value)?,
            "mass" => self.mass = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "partitions" => {
                self.partitions = value
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<PartitionKind>().map_err(|e| ConfigError::Value {
                            key: key.into(),
                            reason: e.to_string(),
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            "proposal" => self.proposal = value.parse()?,
            "sweep" => {
                self.sweep = match value {
                    "ascending" => Sweep::Ascending,
                    "symmetric" => Sweep::Symmetric,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            reason: format!("unknown sweep `{value}`"),
                        })
                    }
                }
            }
            "h" => self.h = num(key, value)?,
            "h_ladder" => self.h_ladder = list(key, value)?,
            "h_fast" => self.h_fast = optional(key, value)?,
            "r_split" => self.r_split = num(key, value)?,
            "r_cut" => self.r_cut = num(key, value)?,
            "rest_length" => self.rest_length = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "burn_in" => self.burn_in = num(key, value)?,
            "t_corr" => self.t_corr = num(key, value)?,
            "estimator" => self.estimator = value.parse()?,
            "origin_spacing" => self.origin_spacing = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "cell_list" => self.cell_list = num(key, value)?,
            "solver_tolerance" => self.solver_tolerance = num(key, value)?,
            "solver_max_iterations" => self.solver_max_iterations = num(key, value)?,
            "bins" => self.bins = num(key, value)?,
            "thin" => self.thin = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => unreachable!("key list checked by the parser"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        let positive = [
            ("density", self.density),
            ("temperature", self.temperature),
            ("mass", self.mass),
            ("h", self.h),
            ("r_split", self.r_split),
            ("r_cut", self.r_cut),
            ("rest_length", self.rest_length),
            ("t_corr", self.t_corr),
            ("origin_spacing", self.origin_spacing),
            ("solver_tolerance", self.solver_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("`{name}` must be positive, got {v}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("`gamma` must be non-negative");
        }
        if let Some(l) = self.box_length {
            if !(l > 0.0 && l.is_finite()) {
                return bad("`box_length` must be positive");
            }
        }
        if let Some(hf) = self.h_fast {
            if !(hf > 0.0) {
                return bad("`h_fast` must be positive");
            }
        }
        if self.n == 0 || !(1..=3).contains(&self.dim) {
            return bad("`n` must be at least 1 and `dim` one of 1, 2, 3");
        }
        if self.samples == 0 || self.thin == 0 || self.bins < 2 || self.solver_max_iterations == 0 {
            return bad("`samples`, `thin` and `solver_max_iterations` must be at least 1, `bins` at least 2");
        }
        if self.partitions.is_empty() {
            return bad("`partitions` must name at least one partition");
        }
        let needs_ladder = matches!(
            self.experiment,
            ExperimentKind::AutocorrFluid | ExperimentKind::AutocorrDumbbell
        );
        if needs_ladder {
            if self.h_ladder.len() < 2 {
                return bad("`h_ladder` needs at least two stepsizes");
            }
            let mut sorted = self.h_ladder.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for w in sorted.windows(2) {
                if ((w[0] / w[1]) - 2.0).abs() > 1e-9 {
                    return bad("`h_ladder` must halve from one stepsize to the next");
                }
            }
            if sorted.iter().any(|&h| !(h > 0.0)) {
                return bad("`h_ladder` entries must be positive");
            }
        }
        if self.experiment == ExperimentKind::Scaling && self.n_ladder.len() < 2 {
            return bad("`n_ladder` needs at least two sizes");
        }
        if self.experiment == ExperimentKind::AutocorrDumbbell
            && (self.proposal != ProposalName::Rattle || self.partitions != [PartitionKind::PerDumbbell])
        {
            return bad("the dumbbell experiment needs `proposal = rattle` and `partitions = per_dumbbell`");
        }
        if self.experiment != ExperimentKind::AutocorrDumbbell && self.proposal == ProposalName::Rattle {
            return bad("RATTLE proposals are only available for the dumbbell system");
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }

    pub fn solver(&self) -> RattleSolverParams {
        RattleSolverParams {
            tolerance: self.solver_tolerance,
            max_iterations: self.solver_max_iterations,
        }
    }

    /// Echo of every key, in the order of [`KEYS`], readable by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let opt = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        let lines = [
            ("experiment", self.experiment.to_string()),
            ("n", self.n.to_string()),
            ("n_ladder", join(self.n_ladder.iter().map(|x| x.to_string()).collect())),
            ("dim", self.dim.to_string()),
            ("density", self.density.to_string()),
            ("temperature", self.temperature.to_string()),
            ("box_length", opt(self.box_length)),
            ("mass", self.mass.to_string()),
            ("gamma", self.gamma.to_string()),
            ("partitions", join(self.partitions.iter().map(|x| x.to_string()).collect())),
            ("proposal", self.proposal.to_string()),
            ("sweep", self.sweep.name().to_string()),
            ("h", self.h.to_string()),
            ("h_ladder", join(self.h_ladder.iter().map(|x| x.to_string()).collect())),
            ("h_fast", opt(self.h_fast)),
            ("r_split", self.r_split.to_string()),
            ("r_cut", self.r_cut.to_string()),
            ("rest_length", self.rest_length.to_string()),
            ("samples", self.samples.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("t_corr", self.t_corr.to_string()),
            ("estimator", self.estimator.to_string()),
            ("origin_spacing", self.origin_spacing.to_string()),
            ("seed", self.seed.to_string()),
            ("cell_list", self.cell_list.to_string()),
            ("solver_tolerance", self.solver_tolerance.to_string()),
            ("solver_max_iterations", self.solver_max_iterations.to_string()),
            ("bins", self.bins.to_string()),
            ("thin", self.thin.to_string()),
            ("out", self.out.display().to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        reason: format!("`{value}`: {e}"),
    })
}

fn optional(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(|s| num(key, s.trim()))
        .collect()
}
