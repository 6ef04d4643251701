//! Flat `section.key = value` configuration with `#` comments.
//!
//! Every key has a default; unknown keys and malformed values are rejected
//! with the offending line. [`ExperimentConfig::echo`] writes back every
//! resolved value so that a run can be repeated from its own output.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use mild_girsanov::spectral::{DriftSpec, OperatorSpec};
use mild_girsanov::stationary::{Bandwidth, LongRunConfig, WindowGrid};
use mild_girsanov::{McConfig, TimeGrid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("`{key}`: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("experiment `{found}` in the config does not match the subcommand `{expected}`")]
    ExperimentMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] mild_girsanov::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    VerifyGirsanov,
    VerifyKernel,
    MomentBounds,
    Invariant,
    DensityRatio,
    Regularity,
    Colored,
    ConvergenceSweep,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::VerifyGirsanov,
        Experiment::VerifyKernel,
        Experiment::MomentBounds,
        Experiment::Invariant,
        Experiment::DensityRatio,
        Experiment::Regularity,
        Experiment::Colored,
        Experiment::ConvergenceSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::VerifyGirsanov => "verify-girsanov",
            Experiment::VerifyKernel => "verify-kernel",
            Experiment::MomentBounds => "moment-bounds",
            Experiment::Invariant => "invariant",
            Experiment::DensityRatio => "density-ratio",
            Experiment::Regularity => "regularity",
            Experiment::Colored => "colored",
            Experiment::ConvergenceSweep => "convergence-sweep",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorFamily {
    /// `λ_j = j²`.
    Laplacian,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftKindConfig {
    Zero,
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Zero,
    /// First unit vector.
    E1,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub family: OperatorFamily,
    pub d: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub drift_kind: DriftKindConfig,
    pub drift_c: f64,
    pub drift_amplitude: f64,
    pub drift_scale: f64,
    pub initial: InitialState,
    pub horizon: f64,
    pub steps: usize,
    /// `None` means `8/ω`.
    pub window_length: Option<f64>,
    pub window_steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
    pub self_normalized: bool,
    pub longrun_burn_in: f64,
    pub longrun_averaging: f64,
    /// `None` means the window step.
    pub longrun_dt: Option<f64>,
    pub longrun_chains: usize,
    /// `None` means 17 points spanning ±2 stationary standard deviations.
    pub density_points: Option<Vec<f64>>,
    pub density_bandwidth: Bandwidth,
    pub regularity_samples: usize,
    pub sweep_steps: Vec<usize>,
    pub output_directory: PathBuf,
    pub formats: BTreeSet<Format>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            family: OperatorFamily::Laplacian,
            d: 8,
            beta: 0.5,
            epsilon: 0.0,
            drift_kind: DriftKindConfig::Tanh,
            drift_c: -0.5,
            drift_amplitude: 0.5,
            drift_scale: 1.0,
            initial: InitialState::E1,
            horizon: 1.0,
            steps: 256,
            window_length: None,
            window_steps: 256,
            samples: 20_000,
            seed: 1,
            workers: 0,
            self_normalized: false,
            longrun_burn_in: 10.0,
            longrun_averaging: 200.0,
            longrun_dt: None,
            longrun_chains: 64,
            density_points: None,
            density_bandwidth: Bandwidth::Silverman,
            regularity_samples: 1000,
            sweep_steps: vec![64, 128, 256, 512],
            output_directory: PathBuf::from("results"),
            formats: [Format::Csv, Format::Json, Format::Svg].into_iter().collect(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "experiment",
    "operator.family",
    "operator.d",
    "operator.eigenvalues",
    "operator.beta",
    "operator.epsilon",
    "drift.kind",
    "drift.c",
    "drift.amplitude",
    "drift.scale",
    "initial.x",
    "grid.T",
    "grid.N",
    "window.S",
    "window.N",
    "mc.samples",
    "mc.seed",
    "mc.workers",
    "mc.self_normalized",
    "longrun.burn_in",
    "longrun.averaging",
    "longrun.dt",
    "longrun.chains",
    "density.points",
    "density.bandwidth",
    "regularity.samples",
    "sweep.steps",
    "output.directory",
    "output.formats",
];

fn parse_scalar<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_scalar)
        .collect()
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{value}` is not a boolean")),
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        let mut eigenvalues: Option<(usize, Vec<f64>)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            let bad = |message: String| ConfigError::BadValue {
                line,
                key: key.to_string(),
                message,
            };
            match key {
                "experiment" => cfg.experiment = Some(value.parse().map_err(bad)?),
                "operator.family" => {
                    cfg.family = match value {
                        "laplacian" => OperatorFamily::Laplacian,
                        "explicit" => OperatorFamily::Explicit(Vec::new()),
                        _ => return Err(bad(format!("`{value}` is not one of laplacian, explicit"))),
                    }
                }
                "operator.d" => cfg.d = parse_scalar(value).map_err(bad)?,
                "operator.eigenvalues" => eigenvalues = Some((line, parse_list(value).map_err(bad)?)),
                "operator.beta" => cfg.beta = parse_scalar(value).map_err(bad)?,
                "operator.epsilon" => cfg.epsilon = parse_scalar(value).map_err(bad)?,
                "drift.kind" => {
                    cfg.drift_kind = match value {
                        "zero" => DriftKindConfig::Zero,
                        "linear" => DriftKindConfig::Linear,
                        "tanh" => DriftKindConfig::Tanh,
                        _ => return Err(bad(format!("`{value}` is not one of zero, linear, tanh"))),
                    }
                }
                "drift.c" => cfg.drift_c = parse_scalar(value).map_err(bad)?,
                "drift.amplitude" => cfg.drift_amplitude = parse_scalar(value).map_err(bad)?,
                "drift.scale" => cfg.drift_scale = parse_scalar(value).map_err(bad)?,
                "initial.x" => {
                    cfg.initial = match value {
                        "zero" => InitialState::Zero,
                        "e1" => InitialState::E1,
                        _ => InitialState::Explicit(parse_list(value).map_err(bad)?),
                    }
                }
                "grid.T" => cfg.horizon = parse_scalar(value).map_err(bad)?,
                "grid.N" => cfg.steps = parse_scalar(value).map_err(bad)?,
                "window.S" => cfg.window_length = Some(parse_scalar(value).map_err(bad)?),
                "window.N" => cfg.window_steps = parse_scalar(value).map_err(bad)?,
                "mc.samples" => cfg.samples = parse_scalar(value).map_err(bad)?,
                "mc.seed" => cfg.seed = parse_scalar(value).map_err(bad)?,
                "mc.workers" => cfg.workers = parse_scalar(value).map_err(bad)?,
                "mc.self_normalized" => cfg.self_normalized = parse_bool(value).map_err(bad)?,
                "longrun.burn_in" => cfg.longrun_burn_in = parse_scalar(value).map_err(bad)?,
                "longrun.averaging" => cfg.longrun_averaging = parse_scalar(value).map_err(bad)?,
                "longrun.dt" => cfg.longrun_dt = Some(parse_scalar(value).map_err(bad)?),
                "longrun.chains" => cfg.longrun_chains = parse_scalar(value).map_err(bad)?,
                "density.points" => cfg.density_points = Some(parse_list(value).map_err(bad)?),
                "density.bandwidth" => {
                    cfg.density_bandwidth = if value == "silverman" {
                        Bandwidth::Silverman
                    } else {
                        Bandwidth::Fixed(parse_scalar(value).map_err(bad)?)
                    }
                }
                "regularity.samples" => cfg.regularity_samples = parse_scalar(value).map_err(bad)?,
                "sweep.steps" => cfg.sweep_steps = parse_list(value).map_err(bad)?,
                "output.directory" => cfg.output_directory = PathBuf::from(value),
                "output.formats" => {
                    cfg.formats = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|f| match f {
                            "csv" => Ok(Format::Csv),
                            "json" => Ok(Format::Json),
                            "svg" => Ok(Format::Svg),
                            _ => Err(bad(format!("`{f}` is not one of csv, json, svg"))),
                        })
                        .collect::<Result<_, _>>()?
                }
                _ => unreachable!("key list and match arms agree"),
            }
        }
        match (&mut cfg.family, eigenvalues) {
            (OperatorFamily::Explicit(list), Some((_, values))) => {
                if seen.contains("operator.d") && cfg.d != values.len() {
                    return Err(ConfigError::Invalid {
                        key: "operator.d",
                        message: format!("d = {} but {} eigenvalues were listed", cfg.d, values.len()),
                    });
                }
                cfg.d = values.len();
                *list = values;
            }
            (OperatorFamily::Explicit(_), None) => {
                return Err(ConfigError::Invalid {
                    key: "operator.eigenvalues",
                    message: "the explicit family needs an eigenvalue list".into(),
                })
            }
            (OperatorFamily::Laplacian, Some((line, _))) => {
                return Err(ConfigError::BadValue {
                    line,
                    key: "operator.eigenvalues".into(),
                    message: "only used with operator.family = explicit".into(),
                })
            }
            (OperatorFamily::Laplacian, None) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Re-validates every derived model object.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.operator()?;
        self.drift()?.validate(&spec)?;
        self.grid()?;
        self.window()?;
        self.initial_state()?;
        if self.window_steps % 2 != 0 {
            return Err(ConfigError::Invalid {
                key: "window.N",
                message: format!("the window-doubling check needs an even step count, got {}", self.window_steps),
            });
        }
        if self.samples < 2 {
            return Err(ConfigError::Invalid {
                key: "mc.samples",
                message: format!("need at least 2 samples, got {}", self.samples),
            });
        }
        if self.sweep_steps.is_empty() || self.sweep_steps.iter().any(|&n| n < 2) {
            return Err(ConfigError::Invalid {
                key: "sweep.steps",
                message: "need a nonempty list of step counts >= 2".into(),
            });
        }
        if self.formats.is_empty() {
            return Err(ConfigError::Invalid {
                key: "output.formats",
                message: "at least one format is required".into(),
            });
        }
        if let Bandwidth::Fixed(h) = self.density_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(ConfigError::Invalid {
                    key: "density.bandwidth",
                    message: format!("must be `silverman` or a positive number, got {h}"),
                });
            }
        }
        Ok(())
    }

    pub fn operator(&self) -> Result<OperatorSpec, ConfigError> {
        Ok(match &self.family {
            OperatorFamily::Laplacian => OperatorSpec::laplacian(self.d, self.beta, self.epsilon)?,
            OperatorFamily::Explicit(values) => OperatorSpec::new(values.clone(), self.beta, self.epsilon)?,
        })
    }

    pub fn drift(&self) -> Result<DriftSpec, ConfigError> {
        self.drift_for_dim(self.d)
    }

    /// The configured drift on the first `d` modes only.
    pub fn drift_for_dim(&self, d: usize) -> Result<DriftSpec, ConfigError> {
        Ok(match self.drift_kind {
            DriftKindConfig::Zero => DriftSpec::zero(),
            DriftKindConfig::Linear => DriftSpec::linear(self.drift_c)?,
            DriftKindConfig::Tanh => DriftSpec::bounded_tanh(self.drift_amplitude, self.drift_scale, d)?,
        })
    }

    pub fn initial_state(&self) -> Result<Vec<f64>, ConfigError> {
        match &self.initial {
            InitialState::Zero => Ok(vec![0.0; self.d]),
            InitialState::E1 => {
                let mut x = vec![0.0; self.d];
                x[0] = 1.0;
                Ok(x)
            }
            InitialState::Explicit(x) if x.len() == self.d => Ok(x.clone()),
            InitialState::Explicit(x) => Err(ConfigError::Invalid {
                key: "initial.x",
                message: format!("expected {} entries, got {}", self.d, x.len()),
            }),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid, ConfigError> {
        Ok(TimeGrid::new(self.horizon, self.steps)?)
    }

    pub fn window(&self) -> Result<WindowGrid, ConfigError> {
        let length = match self.window_length {
            Some(s) => s,
            None => 8.0 / self.operator()?.omega(),
        };
        Ok(WindowGrid::new(length, self.window_steps)?)
    }

    pub fn mc(&self) -> McConfig {
        let mut mc = McConfig::new(self.samples, self.seed).with_workers(self.workers);
        mc.self_normalized = self.self_normalized;
        mc
    }

    pub fn long_run(&self) -> Result<LongRunConfig, ConfigError> {
        Ok(LongRunConfig {
            burn_in: self.longrun_burn_in,
            averaging: self.longrun_averaging,
            dt: match self.longrun_dt {
                Some(dt) => dt,
                None => self.window()?.dt(),
            },
            chains: self.longrun_chains,
        })
    }

    /// Every key with its resolved value; parsing the echo gives back an
    /// equal configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        if let Some(e) = self.experiment {
            put("experiment", e.name().into());
        }
        match &self.family {
            OperatorFamily::Laplacian => put("operator.family", "laplacian".into()),
            OperatorFamily::Explicit(values) => {
                put("operator.family", "explicit".into());
                put("operator.eigenvalues", join(&values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()));
            }
        }
        put("operator.d", self.d.to_string());
        put("operator.beta", format!("{:?}", self.beta));
        put("operator.epsilon", format!("{:?}", self.epsilon));
        put(
            "drift.kind",
            match self.drift_kind {
                DriftKindConfig::Zero => "zero",
                DriftKindConfig::Linear => "linear",
                DriftKindConfig::Tanh => "tanh",
            }
            .into(),
        );
        put("drift.c", format!("{:?}", self.drift_c));
        put("drift.amplitude", format!("{:?}", self.drift_amplitude));
        put("drift.scale", format!("{:?}", self.drift_scale));
        put(
            "initial.x",
            match &self.initial {
                InitialState::Zero => "zero".into(),
                InitialState::E1 => "e1".into(),
                InitialState::Explicit(x) => join(&x.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()),
            },
        );
        put("grid.T", format!("{:?}", self.horizon));
        put("grid.N", self.steps.to_string());
        if let Some(s) = self.window_length {
            put("window.S", format!("{s:?}"));
        }
        put("window.N", self.window_steps.to_string());
        put("mc.samples", self.samples.to_string());
        put("mc.seed", self.seed.to_string());
        put("mc.workers", self.workers.to_string());
        put("mc.self_normalized", self.self_normalized.to_string());
        put("longrun.burn_in", format!("{:?}", self.longrun_burn_in));
        put("longrun.averaging", format!("{:?}", self.longrun_averaging));
        if let Some(dt) = self.longrun_dt {
            put("longrun.dt", format!("{dt:?}"));
        }
        put("longrun.chains", self.longrun_chains.to_string());
        if let Some(points) = &self.density_points {
            put("density.points", join(&points.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()));
        }
        put(
            "density.bandwidth",
            match self.density_bandwidth {
                Bandwidth::Silverman => "silverman".into(),
                Bandwidth::Fixed(h) => format!("{h:?}"),
            },
        );
        put("regularity.samples", self.regularity_samples.to_string());
        put("sweep.steps", join(&self.sweep_steps));
        put("output.directory", self.output_directory.display().to_string());
        put(
            "output.formats",
            self.formats.iter().map(|f| f.name()).collect::<Vec<_>>().join(", "),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let text = "operator.family = explicit\noperator.eigenvalues = 1, 2.5, 7\ndrift.kind = linear\ndrift.c = -0.25\ninitial.x = 0.1, 0.2, 0.3\nwindow.S = 3.5\ndensity.points = -0.5, 0.5\ndensity.bandwidth = 0.1\noutput.formats = json\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.d, 3);
        let again = ExperimentConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = ExperimentConfig::parse("grid.N = 64\ngrid.M = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, ref key } if key == "grid.M"));
    }

    #[test]
    fn malformed_values_report_key_and_line() {
        let err = ExperimentConfig::parse("\n\nmc.samples = many\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 3, ref key, .. } if key == "mc.samples"));
        let err = ExperimentConfig::parse("grid.N\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
        let err = ExperimentConfig::parse("grid.N = 4\ngrid.N = 8\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }));
    }

    #[test]
    fn model_constraints_are_revalidated() {
        assert!(matches!(
            ExperimentConfig::parse("operator.beta = 1.5\n"),
            Err(ConfigError::Model(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("drift.kind = linear\ndrift.c = 2\n"),
            Err(ConfigError::Model(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("initial.x = 1, 2\n"),
            Err(ConfigError::Invalid { key: "initial.x", .. })
        ));
        assert!(ExperimentConfig::parse("operator.eigenvalues = 1, 2\n").is_err());
    }
}
