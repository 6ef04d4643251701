//! Run outputs: the JSON report, CSV tables and the stdout summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mild_girsanov::mc::Estimate;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::config::{ExperimentConfig, Format};
use crate::svg::LinePlot;

pub const SCHEMA: &str = "mild-girsanov/1";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("cannot serialize the report: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Reported without a pass/fail verdict.
    Recorded,
}

impl CheckStatus {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Recorded => "recorded",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
    /// Bound, oracle value or tolerance the value was compared with.
    pub reference: Option<f64>,
    pub status: CheckStatus,
    pub detail: String,
}

impl CheckRecord {
    pub fn new(name: &str, value: f64, reference: Option<f64>, status: CheckStatus, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            value,
            std_error: None,
            reference,
            status,
            detail: detail.into(),
        }
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub params: BTreeMap<String, Value>,
    pub value: f64,
    pub std_error: f64,
    pub ess: f64,
    pub n: usize,
    pub seed: u64,
    pub wall_time_ms: f64,
}

impl ResultRecord {
    pub fn from_estimate(experiment: &str, params: BTreeMap<String, Value>, e: &Estimate, seed: u64, wall_time_ms: f64) -> Self {
        Self {
            experiment: experiment.to_string(),
            params,
            value: e.value,
            std_error: e.std_error,
            ess: e.ess,
            n: e.n,
            seed,
            wall_time_ms,
        }
    }
}

/// Builds a parameter map from `key => value` pairs.
#[macro_export]
macro_rules! params {
    ($($key:expr => $value:expr),* $(,)?) => {{
        let mut map = std::collections::BTreeMap::<String, serde_json::Value>::new();
        $(map.insert($key.to_string(), serde_json::json!($value));)*
        map
    }};
}

/// A named numeric table written as `<name>.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub checks: Vec<CheckRecord>,
    pub records: Vec<ResultRecord>,
    pub tables: Vec<Table>,
    pub plots: Vec<LinePlot>,
    /// Raw path rows `(sample_id, mode, node_index, time, h, dB)`.
    pub path_dump: Vec<(u64, usize, usize, f64, f64, f64)>,
}

impl ExperimentOutput {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub schema: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub seed: u64,
    pub config: &'a str,
    pub checks: &'a [CheckRecord],
    pub records: &'a [ResultRecord],
    pub all_pass: bool,
    pub wall_time_ms: f64,
}

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), OutputError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn params_text(params: &BTreeMap<String, Value>) -> String {
    params
        .iter()
        .map(|(k, v)| match v {
            Value::String(s) => format!("{k}={s}"),
            other => format!("{k}={other}"),
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes every requested artifact into `dir` and returns the paths.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    experiment: &'static str,
    output: &ExperimentOutput,
    wall_time_ms: f64,
) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let echo = cfg.echo();
    let echo_path = dir.join("config.echo");
    std::fs::write(&echo_path, &echo).map_err(io_err(&echo_path))?;
    written.push(echo_path);

    if cfg.formats.contains(&Format::Json) {
        let report = RunReport {
            schema: SCHEMA,
            version: env!("CARGO_PKG_VERSION"),
            experiment,
            seed: cfg.seed,
            config: &echo,
            checks: &output.checks,
            records: &output.records,
            all_pass: output.all_pass(),
            wall_time_ms,
        };
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(io_err(&path))?;
        written.push(path);
    }

    if cfg.formats.contains(&Format::Csv) {
        let path = dir.join("results.csv");
        write_csv(
            &path,
            &["experiment", "params", "value", "std_error", "ess", "n", "seed", "wall_time_ms"],
            output.records.iter().map(|r| {
                vec![
                    r.experiment.clone(),
                    params_text(&r.params),
                    fmt_f64(r.value),
                    fmt_f64(r.std_error),
                    fmt_f64(r.ess),
                    r.n.to_string(),
                    r.seed.to_string(),
                    format!("{:.3}", r.wall_time_ms),
                ]
            }),
        )?;
        written.push(path);

        let path = dir.join("checks.csv");
        write_csv(
            &path,
            &["name", "value", "std_error", "reference", "status", "detail"],
            output.checks.iter().map(|c| {
                vec![
                    c.name.clone(),
                    fmt_f64(c.value),
                    fmt_opt(c.std_error),
                    fmt_opt(c.reference),
                    c.status.label().to_string(),
                    c.detail.clone(),
                ]
            }),
        )?;
        written.push(path);

        for table in &output.tables {
            let path = dir.join(format!("{}.csv", table.name));
            let header: Vec<&str> = table.header.iter().map(String::as_str).collect();
            write_csv(&path, &header, table.rows.iter().map(|row| row.iter().map(|&v| fmt_f64(v))))?;
            written.push(path);
        }
    }

    if !output.path_dump.is_empty() {
        let path = dir.join("paths.csv");
        write_csv(
            &path,
            &["sample_id", "mode", "node_index", "time", "h", "dB"],
            output.path_dump.iter().map(|&(id, j, k, t, h, db)| {
                vec![id.to_string(), j.to_string(), k.to_string(), fmt_f64(t), fmt_f64(h), fmt_f64(db)]
            }),
        )?;
        written.push(path);
    }

    if cfg.formats.contains(&Format::Svg) {
        for plot in &output.plots {
            let path = dir.join(format!("{}.svg", plot.name));
            std::fs::write(&path, plot.render()).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Fixed-width table of check results for stdout.
pub fn summary_table(experiment: &str, output: &ExperimentOutput) -> String {
    let width = output.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{experiment}\n{:<width$}  {:>9}  {:>13}  {:>13}  detail\n", "check", "status", "value", "reference");
    for c in &output.checks {
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>13.6e}  {:>13}  {}\n",
            c.name,
            c.status.label(),
            c.value,
            c.reference.map(|r| format!("{r:.6e}")).unwrap_or_else(|| "-".into()),
            c.detail
        ));
    }
    let failed = output.checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
    out.push_str(&format!(
        "{} checks, {} failed, {} records\n",
        output.checks.len(),
        failed,
        output.records.len()
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn recorded_checks_do_not_fail_a_run() {
        let mut out = ExperimentOutput::default();
        out.checks.push(CheckRecord::new("a", 1.0, None, CheckStatus::Recorded, ""));
        out.checks.push(CheckRecord::new("b", 1.0, Some(2.0), CheckStatus::Pass, ""));
        assert!(out.all_pass());
        out.checks.push(CheckRecord::new("c", 3.0, Some(2.0), CheckStatus::Fail, ""));
        assert!(!out.all_pass());
        assert!(summary_table("x", &out).contains("1 failed"));
    }

    #[test]
    fn params_are_flattened_in_key_order() {
        let p = params! {"z" => 1, "a" => "tanh"};
        assert_eq!(params_text(&p), "a=tanh;z=1");
    }
}
