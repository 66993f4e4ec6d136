//! Capacity sweeps over signal energy or detector noise, and their CSV/JSON
//! renderings.
//!
//! A sweep builds every state once, one kernel per distinct
//! `(eta, noise statistics, noise mean)` sized for the largest state, then
//! evaluates the capacity of every combination on a bounded worker pool.
//! Rows are emitted in grid order whatever the completion order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{capacity, information_at_threshold};
use crate::detector::{build_kernel, CountKernel, DetectorModel, NoiseModel, NoiseStatistics};
use crate::error::{Error, Result};
use crate::format::fmt_sig;
use crate::states::{Family, PnesState, DEFAULT_TOL};

pub const CSV_HEADER: &str =
    "family,signal_mean,eta,noise_mean,noise_stat,capacity_bits,optimal_T,tail_mass";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SignalMean,
    NoiseMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSelection {
    Poisson,
    Thermal,
    Both,
}

impl NoiseSelection {
    pub fn statistics(&self) -> Vec<NoiseStatistics> {
        match self {
            NoiseSelection::Poisson => vec![NoiseStatistics::Poisson],
            NoiseSelection::Thermal => vec![NoiseStatistics::Thermal],
            NoiseSelection::Both => NoiseStatistics::ALL.to_vec(),
        }
    }
}

impl FromStr for NoiseSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(NoiseSelection::Poisson),
            "thermal" => Ok(NoiseSelection::Thermal),
            "both" => Ok(NoiseSelection::Both),
            other => Err(Error::Config(format!(
                "unknown noise statistics '{other}' (expected poisson, thermal or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!(
                "unknown output format '{other}' (expected csv or json)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdChoice {
    /// Maximize over all thresholds.
    Auto,
    /// Report the mutual information at this threshold.
    Fixed(usize),
}

impl FromStr for ThresholdChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ThresholdChoice::Auto);
        }
        s.parse::<usize>().map(ThresholdChoice::Fixed).map_err(|_| {
            Error::Config(format!(
                "invalid threshold '{s}' (expected 'auto' or a nonnegative integer)"
            ))
        })
    }
}

/// Parses a grid: a comma-separated list, `lin:start:stop:count` or
/// `log:start:stop:count`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let bad = |why: &str| Error::Config(format!("invalid grid '{spec}': {why}"));
    if let Some(rest) = spec
        .strip_prefix("lin:")
        .or_else(|| spec.strip_prefix("log:"))
    {
        let log = spec.starts_with("log:");
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:count"));
        }
        let start: f64 = parts[0].parse().map_err(|_| bad("start is not a number"))?;
        let stop: f64 = parts[1].parse().map_err(|_| bad("stop is not a number"))?;
        let count: usize = parts[2]
            .parse()
            .map_err(|_| bad("count is not an integer"))?;
        return if log {
            log_grid(start, stop, count)
        } else {
            linear_grid(start, stop, count)
        };
    }
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("'{}' is not a number", t.trim())))
        })
        .collect()
}

pub fn linear_grid(start: f64, stop: f64, count: usize) -> Result<Vec<f64>> {
    match count {
        0 => Err(Error::Config("grid needs at least one point".into())),
        1 => Ok(vec![start]),
        _ => {
            let step = (stop - start) / (count - 1) as f64;
            Ok((0..count)
                .map(|i| {
                    if i == count - 1 {
                        stop
                    } else {
                        start + step * i as f64
                    }
                })
                .collect())
        }
    }
}

pub fn log_grid(start: f64, stop: f64, count: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && stop > 0.0) {
        return Err(Error::Config("log grid bounds must be positive".into()));
    }
    let logs = linear_grid(start.ln(), stop.ln(), count)?;
    let n = logs.len();
    Ok(logs
        .into_iter()
        .enumerate()
        .map(|(i, l)| match i {
            0 => start,
            _ if i == n - 1 => stop,
            _ => l.exp(),
        })
        .collect())
}

/// Detector efficiencies of the energy sweep defaults.
pub const ENERGY_SWEEP_ETAS: [f64; 4] = [0.5, 0.7, 0.9, 1.0];
/// Detector efficiencies of the noise sweep defaults.
pub const NOISE_SWEEP_ETAS: [f64; 3] = [0.5, 0.7, 0.9];
pub const ENERGY_SWEEP_NOISE_MEAN: f64 = 0.2;
pub const NOISE_SWEEP_SIGNAL_MEAN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub families: Vec<Family>,
    pub axis: SweepAxis,
    pub axis_grid: Vec<f64>,
    pub eta_list: Vec<f64>,
    pub noise: NoiseSelection,
    pub fixed_noise_mean: f64,
    pub fixed_signal_mean: f64,
    pub tol: f64,
    pub threshold: ThresholdChoice,
    pub format: OutputFormat,
    /// Worker threads; `None` uses all cores.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl SweepConfig {
    /// Capacity against signal mean: 40 log-spaced points on `[0.25, 10]`,
    /// `eta` in {0.5, 0.7, 0.9, 1}, noise mean 0.2, both statistics.
    pub fn energy_default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            axis: SweepAxis::SignalMean,
            axis_grid: log_grid(0.25, 10.0, 40).expect("static grid"),
            eta_list: ENERGY_SWEEP_ETAS.to_vec(),
            noise: NoiseSelection::Both,
            fixed_noise_mean: ENERGY_SWEEP_NOISE_MEAN,
            fixed_signal_mean: NOISE_SWEEP_SIGNAL_MEAN,
            tol: DEFAULT_TOL,
            threshold: ThresholdChoice::Auto,
            format: OutputFormat::Csv,
            jobs: None,
        }
    }

    /// Capacity against noise mean: 41 points on `[0, 2]`, signal mean 5,
    /// `eta` in {0.5, 0.7, 0.9}, both statistics.
    pub fn noise_default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            axis: SweepAxis::NoiseMean,
            axis_grid: linear_grid(0.0, 2.0, 41).expect("static grid"),
            eta_list: NOISE_SWEEP_ETAS.to_vec(),
            noise: NoiseSelection::Both,
            fixed_noise_mean: ENERGY_SWEEP_NOISE_MEAN,
            fixed_signal_mean: NOISE_SWEEP_SIGNAL_MEAN,
            tol: DEFAULT_TOL,
            threshold: ThresholdChoice::Auto,
            format: OutputFormat::Csv,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.families.is_empty() {
            return cfg("no state family selected (use --state twb|tmc)".into());
        }
        check_increasing("axis grid", &self.axis_grid)?;
        check_increasing("eta list", &self.eta_list)?;
        if let Some(eta) = self.eta_list.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return cfg(format!("eta {eta} is outside [0, 1]"));
        }
        if let Some(m) = self.axis_grid.iter().find(|m| !(**m >= 0.0)) {
            let what = match self.axis {
                SweepAxis::SignalMean => "signal mean",
                SweepAxis::NoiseMean => "noise mean",
            };
            return cfg(format!("{what} {m} in the grid is negative"));
        }
        if !(self.fixed_noise_mean >= 0.0) || !self.fixed_noise_mean.is_finite() {
            return cfg(format!("noise mean {} must be >= 0", self.fixed_noise_mean));
        }
        if !(self.fixed_signal_mean >= 0.0) || !self.fixed_signal_mean.is_finite() {
            return cfg(format!(
                "signal mean {} must be >= 0",
                self.fixed_signal_mean
            ));
        }
        if !(self.tol > 0.0 && self.tol < 1e-2) {
            return cfg(format!("tolerance {} must lie in (0, 0.01)", self.tol));
        }
        if self.jobs == Some(0) {
            return cfg("--jobs must be at least 1".into());
        }
        Ok(())
    }

    /// `(signal mean, noise mean)` for every axis point.
    fn points(&self) -> Vec<(f64, f64)> {
        self.axis_grid
            .iter()
            .map(|&v| match self.axis {
                SweepAxis::SignalMean => (v, self.fixed_noise_mean),
                SweepAxis::NoiseMean => (self.fixed_signal_mean, v),
            })
            .collect()
    }
}

fn check_increasing(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("{name} is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} contains a non-finite value")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family: Family,
    pub signal_mean: f64,
    pub eta: f64,
    pub noise_mean: f64,
    pub noise_stat: NoiseStatistics,
    pub capacity_bits: f64,
    #[serde(rename = "optimal_T")]
    pub optimal_t: usize,
    pub tail_mass: f64,
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.family,
            fmt_sig(self.signal_mean),
            fmt_sig(self.eta),
            fmt_sig(self.noise_mean),
            self.noise_stat,
            fmt_sig(self.capacity_bits),
            self.optimal_t,
            fmt_sig(self.tail_mass)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
}

#[derive(Serialize)]
struct JsonMeta<'a> {
    tool: &'static str,
    version: &'static str,
    tol: f64,
    axis: SweepAxis,
    grid: &'a [f64],
    eta_list: &'a [f64],
    families: &'a [Family],
    noise_stat: NoiseSelection,
    fixed_signal_mean: Option<f64>,
    fixed_noise_mean: Option<f64>,
    threshold: ThresholdChoice,
    log_base: u32,
}

#[derive(Serialize)]
struct JsonOutput<'a> {
    meta: JsonMeta<'a>,
    rows: &'a [SweepRow],
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.to_csv_line());
        }
        out
    }

    pub fn to_json(&self) -> String {
        let c = &self.config;
        let meta = JsonMeta {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            tol: c.tol,
            axis: c.axis,
            grid: &c.axis_grid,
            eta_list: &c.eta_list,
            families: &c.families,
            noise_stat: c.noise,
            fixed_signal_mean: (c.axis == SweepAxis::NoiseMean).then_some(c.fixed_signal_mean),
            fixed_noise_mean: (c.axis == SweepAxis::SignalMean).then_some(c.fixed_noise_mean),
            threshold: c.threshold,
            log_base: 2,
        };
        let mut s = serde_json::to_string_pretty(&JsonOutput {
            meta,
            rows: &self.rows,
        })
        .expect("sweep rows serialize");
        s.push('\n');
        s
    }

    pub fn render(&self) -> String {
        match self.config.format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    /// Rows of one curve, in axis order.
    pub fn curve(&self, family: Family, stat: NoiseStatistics, eta: f64) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.family == family && r.noise_stat == stat && r.eta == eta)
            .collect()
    }
}

/// Sweeps signal energy at fixed noise.
pub fn run_sweep_energy(config: &SweepConfig) -> Result<SweepTable> {
    if config.axis != SweepAxis::SignalMean {
        return Err(Error::Config(
            "energy sweep needs the signal-mean axis".into(),
        ));
    }
    run_sweep(config)
}

/// Sweeps detector noise at fixed signal energy.
pub fn run_sweep_noise(config: &SweepConfig) -> Result<SweepTable> {
    if config.axis != SweepAxis::NoiseMean {
        return Err(Error::Config(
            "noise sweep needs the noise-mean axis".into(),
        ));
    }
    run_sweep(config)
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepTable> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| sweep_inner(config))
}

/// Bit pattern of a float, for use as an exact map key.
fn key(x: f64) -> u64 {
    x.to_bits()
}

fn sweep_inner(config: &SweepConfig) -> Result<SweepTable> {
    let points = config.points();
    let stats = config.noise.statistics();
    // Half the budget to the state so that the state tail plus twice the
    // kernel column tails (each <= tol / 10) stays below tol.
    let state_tol = 0.5 * config.tol;

    let mut signal_means: Vec<f64> = points.iter().map(|p| p.0).collect();
    signal_means.sort_by(f64::total_cmp);
    signal_means.dedup();
    let state_jobs: Vec<(Family, f64)> = config
        .families
        .iter()
        .flat_map(|&f| signal_means.iter().map(move |&m| (f, m)))
        .collect();
    let states: Vec<PnesState> = state_jobs
        .par_iter()
        .map(|&(f, m)| PnesState::with_mean(f, m, state_tol))
        .collect::<Result<_>>()?;
    let state_index: BTreeMap<(Family, u64), usize> = state_jobs
        .iter()
        .enumerate()
        .map(|(i, &(f, m))| ((f, key(m)), i))
        .collect();
    let n_max = states.iter().map(PnesState::n_max).max().unwrap_or(0);

    let mut noise_means: Vec<f64> = points.iter().map(|p| p.1).collect();
    noise_means.sort_by(f64::total_cmp);
    noise_means.dedup();
    let mut kernel_jobs: Vec<(NoiseStatistics, u64, u64)> = Vec::new();
    for &st in &stats {
        for &eta in &config.eta_list {
            for &nm in &noise_means {
                kernel_jobs.push((st, key(eta), key(nm)));
            }
        }
    }
    let kernels: Vec<CountKernel> = kernel_jobs
        .par_iter()
        .map(|&(st, eta, nm)| {
            let det = DetectorModel::new(
                f64::from_bits(eta),
                NoiseModel::new(st, f64::from_bits(nm))?,
            )?;
            build_kernel(&det, n_max, config.tol)
        })
        .collect::<Result<_>>()?;
    let kernel_index: BTreeMap<(NoiseStatistics, u64, u64), usize> = kernel_jobs
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, i))
        .collect();

    // grid order: family, statistics, eta, axis point
    let mut jobs = Vec::new();
    for &family in &config.families {
        for &st in &stats {
            for &eta in &config.eta_list {
                for &(sm, nm) in &points {
                    jobs.push((family, st, eta, sm, nm));
                }
            }
        }
    }

    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(family, st, eta, sm, nm)| {
            let state = &states[state_index[&(family, key(sm))]];
            let kernel = &kernels[kernel_index[&(st, key(eta), key(nm))]];
            let result = match config.threshold {
                ThresholdChoice::Auto => capacity(state, kernel)?,
                ThresholdChoice::Fixed(t) => information_at_threshold(state, kernel, t)?,
            };
            Ok(SweepRow {
                family,
                signal_mean: sm,
                eta,
                noise_mean: nm,
                noise_stat: st,
                capacity_bits: result.capacity,
                optimal_t: result.optimal_threshold,
                tail_mass: result.tail_mass,
            })
        })
        .collect::<Result<_>>()?;

    if let Some(bad) = rows.iter().find(|r| r.tail_mass > config.tol) {
        return Err(Error::TruncationCap {
            cap: n_max,
            residual: bad.tail_mass,
            tol: config.tol,
        });
    }

    Ok(SweepTable {
        config: config.clone(),
        rows,
    })
}
