//! Experiment orchestration: builds streams, runs policies with
//! instrumentation, aggregates repetitions and writes CSV/JSON reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::CoverageState;
use crate::policy::{OutputSet, PolicyError, PolicySpec, RunContext};
use crate::seeding;
use crate::stream::{StreamConfig, StreamError, StreamEvent};

pub mod verify;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "k")]
    Budget,
    #[serde(rename = "T")]
    Visits,
    #[serde(rename = "delta_t")]
    DeltaT,
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "c")]
    Preemption,
    #[serde(rename = "n_items")]
    Items,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Budget => "k",
            Self::Visits => "T",
            Self::DeltaT => "delta_t",
            Self::Delta => "delta",
            Self::Epsilon => "epsilon",
            Self::Preemption => "c",
            Self::Items => "n_items",
        }
    }

    fn integral(self) -> bool {
        !matches!(self, Self::Epsilon | Self::Preemption)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

impl ReportFormat {
    /// `.json` means JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

/// Experiment description, usually read from a TOML file:
///
/// ```toml
/// seed = 7
/// repetitions = 50
///
/// [stream]
/// n_items = 5000
/// visits = 5
/// delta_t = 45
/// k = 10
/// prob_lo = 0.0
/// prob_hi = 0.2
/// source = { synthetic = { topics = 40, per_item_min = 1, per_item_max = 4 } }
///
/// [[policies]]
/// name = "storm"
/// horizon = "T"
///
/// [sweep]
/// param = "k"
/// values = [1, 5, 10]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<ReportFormat>,
    /// Record wall-clock times. Off by default so reports are byte-identical
    /// across reruns; when off the time column is written as 0.
    #[serde(default)]
    pub timing: bool,
}

fn default_repetitions() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| HarnessError::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.stream.validate()?;
        if self.repetitions == 0 {
            return Err(HarnessError::Invalid("repetitions must be positive".into()));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::Invalid("no policies configured".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(HarnessError::Invalid("sweep has no values".into()));
            }
            for &v in &sweep.values {
                let (stream, policies) = self.with_sweep_value(sweep.param, v)?;
                stream.validate()?;
                for spec in &policies {
                    spec.build(context(&stream, 0))?;
                }
            }
        } else {
            for spec in &self.policies {
                spec.build(context(&self.stream, 0))?;
            }
        }
        Ok(())
    }

    /// Stream config and policies with one sweep value substituted.
    pub fn with_sweep_value(&self, param: SweepParam, value: f64) -> Result<(StreamConfig, Vec<PolicySpec>), HarnessError> {
        if !value.is_finite() || value < 0.0 || (param.integral() && value.fract() != 0.0) {
            return Err(HarnessError::Invalid(format!(
                "sweep value {value} is not valid for `{}`",
                param.as_str()
            )));
        }
        let n = value as usize;
        let mut stream = self.stream.clone();
        let mut policies = self.policies.clone();
        match param {
            SweepParam::Budget => stream.k = n,
            SweepParam::Visits => stream.visits = n,
            SweepParam::DeltaT => stream.delta_t = n,
            SweepParam::Items => stream.n_items = n,
            SweepParam::Delta | SweepParam::Epsilon | SweepParam::Preemption => {
                for p in &mut policies {
                    match (param, p) {
                        (SweepParam::Delta, PolicySpec::Stormpp { delta, .. }) => *delta = n,
                        (SweepParam::Epsilon, PolicySpec::Sievepp { epsilon }) => *epsilon = value,
                        (SweepParam::Preemption, PolicySpec::Preemption { c }) => *c = value,
                        _ => {}
                    }
                }
            }
        }
        Ok((stream, policies))
    }
}

fn context(stream: &StreamConfig, seed: u64) -> RunContext {
    RunContext {
        k: stream.k,
        visits: stream.visits,
        visit_bound: stream.visit_bound(),
        seed,
    }
}

/// Metrics of one policy run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub policy: String,
    pub outputs: Vec<OutputSet>,
    pub total_coverage: f64,
    pub oracle_calls: u64,
    /// Largest number of item copies held after any event.
    pub peak_copies: usize,
    pub wall_time_s: f64,
    pub exhausted: bool,
}

impl RunReport {
    /// Coverage of all shown copies, recomputed from scratch.
    pub fn recomputed_coverage(&self) -> f64 {
        CoverageState::recompute_from_scratch(self.outputs.iter().flat_map(OutputSet::item_refs)).value()
    }
}

/// Seed handed to a policy for a run whose stream was built from `seed`.
pub fn policy_seed(seed: u64) -> u64 {
    seeding::split(seed, 0x5eed)
}

/// Runs one policy over a prepared event sequence.
pub fn run_events(events: &[StreamEvent], spec: &PolicySpec, ctx: RunContext, timing: bool) -> Result<RunReport, HarnessError> {
    let mut policy = spec.build(ctx)?;
    let start = Instant::now();
    let mut outputs = Vec::new();
    let mut peak = 0;
    for event in events {
        if let Some(out) = policy.step(event) {
            outputs.push(out);
        }
        peak = peak.max(policy.stored_copies());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut report = RunReport {
        policy: spec.label(),
        outputs,
        total_coverage: 0.0,
        oracle_calls: policy.oracle_calls(),
        peak_copies: peak,
        wall_time_s: if timing { elapsed } else { 0.0 },
        exhausted: policy.exhausted(),
    };
    report.total_coverage = report.recomputed_coverage();
    Ok(report)
}

/// Builds the stream for `seed` and runs `spec` on it.
pub fn run_one(config: &ExperimentConfig, spec: &PolicySpec, seed: u64) -> Result<RunReport, HarnessError> {
    let events = config.stream.build(seed, None)?;
    run_events(&events, spec, context(&config.stream, policy_seed(seed)), config.timing)
}

/// Seed of repetition `rep` under `master`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    seeding::split(master, rep as u64)
}

/// One aggregated line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub policy: String,
    pub mean_coverage: f64,
    pub std_coverage: f64,
    pub mean_oracle_calls: f64,
    pub mean_peak_copies: f64,
    pub mean_wall_time_s: f64,
    pub exhaustion_count: u64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Aggregates repeated runs of one policy.
pub fn aggregate(param: Option<SweepParam>, value: Option<f64>, runs: &[RunReport]) -> SweepRow {
    let get = |f: fn(&RunReport) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let coverage = get(|r| r.total_coverage);
    SweepRow {
        sweep_param: param.map(|p| p.as_str().to_string()).unwrap_or_default(),
        sweep_value: value,
        policy: runs.first().map(|r| r.policy.clone()).unwrap_or_default(),
        mean_coverage: mean(&coverage),
        std_coverage: std_dev(&coverage),
        mean_oracle_calls: mean(&get(|r| r.oracle_calls as f64)),
        mean_peak_copies: mean(&get(|r| r.peak_copies as f64)),
        mean_wall_time_s: mean(&get(|r| r.wall_time_s)),
        exhaustion_count: runs.iter().filter(|r| r.exhausted).count() as u64,
    }
}

/// Runs every policy for every repetition, once per sweep value (or once
/// when there is no sweep). Repetitions run in parallel; rows come out
/// ordered by (sweep value, policy label).
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>, HarnessError> {
    config.validate()?;
    let points: Vec<(Option<SweepParam>, Option<f64>)> = match &config.sweep {
        Some(s) => s.values.iter().map(|&v| (Some(s.param), Some(v))).collect(),
        None => vec![(None, None)],
    };
    let preloaded = config.stream.load_source()?;

    let mut rows = Vec::new();
    for (param, value) in points {
        let (stream, policies) = match (param, value) {
            (Some(p), Some(v)) => config.with_sweep_value(p, v)?,
            _ => (config.stream.clone(), config.policies.clone()),
        };
        let per_rep: Vec<Vec<RunReport>> = (0..config.repetitions)
            .into_par_iter()
            .map(|rep| {
                let seed = repetition_seed(config.seed, rep);
                let events = stream.build(seed, preloaded.as_deref())?;
                policies
                    .iter()
                    .map(|spec| run_events(&events, spec, context(&stream, policy_seed(seed)), config.timing))
                    .collect()
            })
            .collect::<Result<_, HarnessError>>()?;
        for (i, _) in policies.iter().enumerate() {
            let runs: Vec<RunReport> = per_rep.iter().map(|r| r[i].clone()).collect();
            rows.push(aggregate(param, value, &runs));
        }
    }
    rows.sort_by(|a, b| {
        a.sweep_value
            .unwrap_or(0.0)
            .total_cmp(&b.sweep_value.unwrap_or(0.0))
            .then_with(|| a.policy.cmp(&b.policy))
    });
    Ok(rows)
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub const CSV_HEADER: [&str; 9] = [
    "sweep_param",
    "sweep_value",
    "policy",
    "mean_coverage",
    "std_coverage",
    "mean_oracle_calls",
    "mean_peak_copies",
    "mean_wall_time_s",
    "exhaustion_count",
];

fn rounded(row: &SweepRow) -> SweepRow {
    SweepRow {
        sweep_value: row.sweep_value.map(round_sig),
        mean_coverage: round_sig(row.mean_coverage),
        std_coverage: round_sig(row.std_coverage),
        mean_oracle_calls: round_sig(row.mean_oracle_calls),
        mean_peak_copies: round_sig(row.mean_peak_copies),
        mean_wall_time_s: round_sig(row.mean_wall_time_s),
        ..row.clone()
    }
}

pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in rows.iter().map(rounded) {
        w.write_record([
            row.sweep_param.clone(),
            row.sweep_value.map(|v| v.to_string()).unwrap_or_default(),
            row.policy.clone(),
            row.mean_coverage.to_string(),
            row.std_coverage.to_string(),
            row.mean_oracle_calls.to_string(),
            row.mean_peak_copies.to_string(),
            row.mean_wall_time_s.to_string(),
            row.exhaustion_count.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn render_json(rows: &[SweepRow]) -> String {
    let rows: Vec<SweepRow> = rows.iter().map(rounded).collect();
    let mut out = serde_json::to_string_pretty(&rows).expect("rows serialize");
    out.push('\n');
    out
}

pub fn emit_report(rows: &[SweepRow], path: &Path, format: ReportFormat) -> Result<(), HarnessError> {
    let text = match format {
        ReportFormat::Csv => render_csv(rows),
        ReportFormat::Json => render_json(rows),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl fmt::Display for SweepRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.sweep_value {
            write!(f, "{}={} ", self.sweep_param, v)?;
        }
        write!(
            f,
            "{}: coverage={:.4} (sd {:.4}) oracle_calls={:.0} peak_copies={:.1}",
            self.policy, self.mean_coverage, self.std_coverage, self.mean_oracle_calls, self.mean_peak_copies
        )
    }
}
