//! Command-line front end of the `pnes` binary.
//!
//! Settings resolve as built-in defaults, then the `--config` TOML file,
//! then command-line flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::detector::{build_kernel, AmplitudeSign, DetectorModel, NoiseModel, NoiseStatistics};
use crate::error::{Error, Result};
use crate::states::Family;
use crate::sweep::{
    parse_grid, run_sweep, run_sweep_energy, run_sweep_noise, NoiseSelection, OutputFormat,
    SweepAxis, SweepConfig, ThresholdChoice,
};
use crate::validate::{run_validation, ValidationOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "pnes",
    version,
    about = "Capacity of binary channels built on photon-number entangled states with noisy photodetection"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Capacity at given signal mean(s), efficiencies and noise.
    Capacity(SweepArgs),
    /// Capacity against signal mean (defaults: 40 log-spaced means in [0.25, 10],
    /// eta 0.5,0.7,0.9,1, noise mean 0.2, both noise statistics).
    SweepEnergy(SweepArgs),
    /// Capacity against noise mean (defaults: 41 noise means in [0, 2],
    /// signal mean 5, eta 0.5,0.7,0.9, both noise statistics).
    SweepNoise(SweepArgs),
    /// Dump the count kernel K(s|n) as delimited text.
    Kernel(KernelArgs),
    /// Run the numerical self-checks; exits 1 if any fails.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// State families: twb, tmc or a comma list.
    #[arg(long)]
    state: Option<String>,
    /// Signal mean photon number; a grid (list, lin:a:b:n, log:a:b:n) for sweep-energy.
    #[arg(long)]
    mean: Option<String>,
    /// Detector efficiencies, comma separated.
    #[arg(long)]
    eta: Option<String>,
    /// Noise mean photon number; a grid for sweep-noise.
    #[arg(long = "noise-mean")]
    noise_mean: Option<String>,
    /// poisson, thermal or both.
    #[arg(long = "noise-stat")]
    noise_stat: Option<String>,
    /// auto, or a fixed decision threshold.
    #[arg(long)]
    threshold: Option<String>,
    /// Truncation tolerance on discarded probability mass.
    #[arg(long)]
    tol: Option<f64>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with any of the keys above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long = "noise-mean", default_value_t = 0.0)]
    noise_mean: f64,
    /// poisson or thermal.
    #[arg(long = "noise-stat", default_value = "poisson")]
    noise_stat: String,
    /// Largest signal photon number (last column).
    #[arg(long = "n-max", default_value_t = 20)]
    n_max: usize,
    #[arg(long, default_value_t = crate::states::DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Efficiencies in (0, 1), comma separated.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    /// Run the suite against amplitudes with the (-1)^k2 sign removed; the
    /// suite is expected to fail.
    #[arg(long = "mutate-sign", hide = true)]
    mutate_sign: bool,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    state: Option<StringList>,
    mean: Option<NumberList>,
    eta: Option<NumberList>,
    noise_mean: Option<NumberList>,
    noise_stat: Option<String>,
    threshold: Option<ThresholdValue>,
    tol: Option<f64>,
    format: Option<String>,
    jobs: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StringList {
    Many(Vec<String>),
    One(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum NumberList {
    One(f64),
    Many(Vec<f64>),
    Spec(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ThresholdValue {
    Fixed(usize),
    Word(String),
}

impl NumberList {
    fn values(&self) -> Result<Vec<f64>> {
        match self {
            NumberList::One(v) => Ok(vec![*v]),
            NumberList::Many(v) => Ok(v.clone()),
            NumberList::Spec(s) => parse_grid(s),
        }
    }
}

fn parse_families(spec: &str) -> Result<Vec<Family>> {
    let mut out = Vec::new();
    for f in spec.split(',') {
        let f: Family = f.parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    Ok(out)
}

fn single(name: &str, values: Vec<f64>) -> Result<f64> {
    match values.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::Config(format!(
            "{name} takes a single value here, got {}",
            values.len()
        ))),
    }
}

/// Applies one source of settings (file or flags) on top of `cfg`.
struct Overrides {
    families: Option<Vec<Family>>,
    mean: Option<Vec<f64>>,
    eta: Option<Vec<f64>>,
    noise_mean: Option<Vec<f64>>,
    noise: Option<NoiseSelection>,
    threshold: Option<ThresholdChoice>,
    tol: Option<f64>,
    format: Option<OutputFormat>,
    jobs: Option<usize>,
}

impl Overrides {
    fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let f: FileConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Self {
            families: f
                .state
                .map(|s| match s {
                    StringList::One(s) => parse_families(&s),
                    StringList::Many(v) => parse_families(&v.join(",")),
                })
                .transpose()?,
            mean: f.mean.map(|m| m.values()).transpose()?,
            eta: f.eta.map(|m| m.values()).transpose()?,
            noise_mean: f.noise_mean.map(|m| m.values()).transpose()?,
            noise: f.noise_stat.map(|s| s.parse()).transpose()?,
            threshold: f
                .threshold
                .map(|t| match t {
                    ThresholdValue::Fixed(t) => Ok(ThresholdChoice::Fixed(t)),
                    ThresholdValue::Word(w) => w.parse(),
                })
                .transpose()?,
            tol: f.tol,
            format: f.format.map(|s| s.parse()).transpose()?,
            jobs: f.jobs,
        })
    }

    fn from_flags(a: &SweepArgs) -> Result<Self> {
        Ok(Self {
            families: a.state.as_deref().map(parse_families).transpose()?,
            mean: a.mean.as_deref().map(parse_grid).transpose()?,
            eta: a.eta.as_deref().map(parse_grid).transpose()?,
            noise_mean: a.noise_mean.as_deref().map(parse_grid).transpose()?,
            noise: a.noise_stat.as_deref().map(str::parse).transpose()?,
            threshold: a.threshold.as_deref().map(str::parse).transpose()?,
            tol: a.tol,
            format: a.format.as_deref().map(str::parse).transpose()?,
            jobs: a.jobs,
        })
    }

    fn apply(self, cfg: &mut SweepConfig) -> Result<()> {
        if let Some(v) = self.families {
            cfg.families = v;
        }
        if let Some(v) = self.eta {
            cfg.eta_list = v;
        }
        match cfg.axis {
            SweepAxis::SignalMean => {
                if let Some(v) = self.mean {
                    cfg.axis_grid = v;
                }
                if let Some(v) = self.noise_mean {
                    cfg.fixed_noise_mean = single("noise mean", v)?;
                }
            }
            SweepAxis::NoiseMean => {
                if let Some(v) = self.mean {
                    cfg.fixed_signal_mean = single("signal mean", v)?;
                }
                if let Some(v) = self.noise_mean {
                    cfg.axis_grid = v;
                }
            }
        }
        if let Some(v) = self.noise {
            cfg.noise = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        Ok(())
    }
}

fn resolve(base: SweepConfig, args: &SweepArgs) -> Result<SweepConfig> {
    let mut cfg = base;
    if let Some(path) = &args.config {
        Overrides::from_file(path)?.apply(&mut cfg)?;
    }
    Overrides::from_flags(args)?.apply(&mut cfg)?;
    Ok(cfg)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

/// Base settings of the `capacity` command: no grid until `--mean` is given.
fn capacity_base() -> SweepConfig {
    SweepConfig {
        axis_grid: Vec::new(),
        eta_list: vec![1.0],
        noise: NoiseSelection::Poisson,
        fixed_noise_mean: 0.0,
        ..SweepConfig::energy_default()
    }
}

fn run_command(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Capacity(args) => {
            let cfg = resolve(capacity_base(), &args)?;
            if cfg.axis_grid.is_empty() {
                return Err(Error::Config("capacity needs --mean".into()));
            }
            let table = run_sweep(&cfg)?;
            write_output(args.out.as_deref(), &table.render())?;
        }
        Command::SweepEnergy(args) => {
            let cfg = resolve(SweepConfig::energy_default(), &args)?;
            let table = run_sweep_energy(&cfg)?;
            write_output(args.out.as_deref(), &table.render())?;
        }
        Command::SweepNoise(args) => {
            let cfg = resolve(SweepConfig::noise_default(), &args)?;
            let table = run_sweep_noise(&cfg)?;
            write_output(args.out.as_deref(), &table.render())?;
        }
        Command::Kernel(args) => {
            let stat: NoiseStatistics = args.noise_stat.parse()?;
            let det = DetectorModel::new(args.eta, NoiseModel::new(stat, args.noise_mean)?)?;
            let kernel = build_kernel(&det, args.n_max, args.tol)?;
            write_output(args.out.as_deref(), &kernel.to_text())?;
        }
        Command::Validate(args) => {
            let mut opts = ValidationOptions::default();
            if let Some(eta) = &args.eta {
                opts.eta_grid = parse_grid(eta)?;
            }
            if let Some(tol) = args.tol {
                opts.tol = tol;
            }
            if args.mutate_sign {
                opts.sign = AmplitudeSign::Dropped;
            }
            let report = run_validation(&opts)?;
            write_output(None, &format!("{report}\n"))?;
            if !report.passed() {
                return Ok(EXIT_VALIDATION_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run_command(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
