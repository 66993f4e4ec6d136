//! Self-check suite behind the `validate` subcommand.
//!
//! Every check reports its largest observed deviation next to the tolerance
//! it must stay under.

use std::fmt;

use crate::channel::{confusion_matrix, joint_distribution, threshold_upper_bound};
use crate::detector::{
    build_kernel, build_kernel_with, count_prob_cancellation_scale, count_prob_closed,
    count_prob_oracle_with, ln_transfer_amplitude, AmplitudeSign, DetectorModel, KernelMethod,
    NoiseModel, NoiseStatistics,
};
use crate::error::{Error, Result};
use crate::format::fmt_sig_digits;
use crate::numerics::{log_binomial, CompensatedSum};
use crate::states::{Family, PnesState};

/// Efficiencies used when none are given.
pub const DEFAULT_ETA_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 0.99];

/// Count probabilities below this fraction of the pre-cancellation scale
/// `(sum |A|)^2` are compared in absolute terms against that scale: exact
/// interference zeros have no meaningful relative error.
pub const INTERFERENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub eta_grid: Vec<f64>,
    /// Largest `n`, `p`, `s` in the closed-form comparison.
    pub max_index: usize,
    /// Largest input photon number per port in the unitarity checks.
    pub unitarity_max: usize,
    pub tol: f64,
    /// Amplitude sign used by the reference routes; `Dropped` must fail.
    pub sign: AmplitudeSign,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            eta_grid: DEFAULT_ETA_GRID.to_vec(),
            max_index: 12,
            unitarity_max: 10,
            tol: 1e-10,
            sign: AmplitudeSign::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Where the largest deviation occurred.
    pub worst_case: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:>14} {:>10}  result  worst case",
            "check", "max deviation", "tolerance"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<28} {:>14} {:>10}  {:<6}  {}",
                c.name,
                fmt_sig_digits(c.max_deviation, 4),
                fmt_sig_digits(c.tolerance, 4),
                if c.passed() { "PASS" } else { "FAIL" },
                c.worst_case
            )?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        if failed == 0 {
            write!(f, "all {} checks passed", self.checks.len())
        } else {
            write!(f, "{failed} of {} checks FAILED", self.checks.len())
        }
    }
}

/// Tracks the largest deviation and where it happened.
struct Worst {
    value: f64,
    at: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: 0.0,
            at: String::from("-"),
        }
    }

    fn update(&mut self, value: f64, at: impl FnOnce() -> String) {
        // NaN counts as the worst possible deviation
        if value.is_nan() || value > self.value {
            self.value = if value.is_nan() { f64::INFINITY } else { value };
            self.at = at();
        }
    }

    fn finish(self, name: &'static str, tolerance: f64) -> CheckResult {
        CheckResult {
            name,
            max_deviation: self.value,
            tolerance,
            worst_case: self.at,
        }
    }
}

pub fn run_validation(opts: &ValidationOptions) -> Result<ValidationReport> {
    if opts.eta_grid.is_empty() {
        return Err(Error::Config("validation eta grid is empty".into()));
    }
    if let Some(eta) = opts.eta_grid.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::Config(format!(
            "validation eta {eta} must lie strictly inside (0, 1)"
        )));
    }
    let checks = vec![
        oracle_equivalence(opts)?,
        support(opts)?,
        unitarity_oracle(opts)?,
        unitarity_amplitudes(opts)?,
        kernel_perfect_detector()?,
        kernel_blind_detector()?,
        kernel_binomial_loss(opts)?,
        kernel_normalization(opts)?,
        kernel_methods_agree(opts)?,
        state_normalization()?,
        confusion_normalization()?,
    ];
    Ok(ValidationReport { checks })
}

fn oracle_equivalence(opts: &ValidationOptions) -> Result<CheckResult> {
    let m = opts.max_index;
    let mut worst = Worst::new();
    for &eta in &opts.eta_grid {
        for n in 0..=m {
            for p in 0..=m {
                for s in 0..=m.min(n + p) {
                    let closed = count_prob_closed(n, p, s, eta)?;
                    let oracle = count_prob_oracle_with(n, p, s, eta, opts.sign)?;
                    let scale = count_prob_cancellation_scale(n, p, s, eta)?;
                    let rel =
                        (closed - oracle).abs() / oracle.abs().max(INTERFERENCE_FLOOR * scale);
                    worst.update(rel, || format!("n={n} p={p} s={s} eta={eta}"));
                }
            }
        }
    }
    Ok(worst.finish("oracle equivalence (rel)", opts.tol))
}

fn support(opts: &ValidationOptions) -> Result<CheckResult> {
    let m = opts.max_index;
    let mut worst = Worst::new();
    for &eta in &opts.eta_grid {
        for n in 0..=m {
            for p in 0..=m {
                for s in n + p + 1..=n + p + 2 {
                    let v = count_prob_closed(n, p, s, eta)?
                        .abs()
                        .max(count_prob_oracle_with(n, p, s, eta, opts.sign)?.abs());
                    worst.update(v, || format!("n={n} p={p} s={s} eta={eta}"));
                }
            }
        }
    }
    Ok(worst.finish("support s <= n + p", 0.0))
}

fn unitarity_oracle(opts: &ValidationOptions) -> Result<CheckResult> {
    let m = opts.unitarity_max;
    let mut worst = Worst::new();
    for &eta in &opts.eta_grid {
        for n1 in 0..=m {
            for n2 in 0..=m {
                let mut total = CompensatedSum::new();
                for s in 0..=n1 + n2 {
                    total.add(count_prob_oracle_with(n1, n2, s, eta, opts.sign)?);
                }
                worst.update((total.value() - 1.0).abs(), || {
                    format!("n1={n1} n2={n2} eta={eta}")
                });
            }
        }
    }
    Ok(worst.finish("unitarity (oracle)", opts.tol))
}

fn unitarity_amplitudes(opts: &ValidationOptions) -> Result<CheckResult> {
    let m = opts.unitarity_max;
    let mut worst = Worst::new();
    for &eta in &opts.eta_grid {
        for n1 in 0..=m {
            for n2 in 0..=m {
                let mut total = CompensatedSum::new();
                for s in 0..=n1 + n2 {
                    let mut amp = CompensatedSum::new();
                    for k1 in s.saturating_sub(n2)..=s.min(n1) {
                        let a = ln_transfer_amplitude(n1, n2, k1, s - k1, eta)?;
                        let sign = match opts.sign {
                            AmplitudeSign::Standard => a.sign,
                            AmplitudeSign::Dropped => 1.0,
                        };
                        amp.add(sign * a.ln_abs.exp());
                    }
                    total.add(amp.value().powi(2));
                }
                worst.update((total.value() - 1.0).abs(), || {
                    format!("n1={n1} n2={n2} eta={eta}")
                });
            }
        }
    }
    Ok(worst.finish("unitarity (amplitudes)", opts.tol))
}

fn kernel_perfect_detector() -> Result<CheckResult> {
    let mut worst = Worst::new();
    for noise in [NoiseModel::thermal(0.5)?, NoiseModel::poisson(2.0)?] {
        let k = build_kernel(&DetectorModel::new(1.0, noise)?, 30, 1e-10)?;
        for n in 0..=k.n_max() {
            for s in 0..=k.s_max() {
                let expected = if s == n { 1.0 } else { 0.0 };
                worst.update((k.get(s, n) - expected).abs(), || {
                    format!("s={s} n={n} noise={noise}")
                });
            }
        }
    }
    Ok(worst.finish("kernel eta=1 is identity", 0.0))
}

fn kernel_blind_detector() -> Result<CheckResult> {
    let mut worst = Worst::new();
    for noise in [NoiseModel::thermal(0.5)?, NoiseModel::poisson(2.0)?] {
        let k = build_kernel(&DetectorModel::new(0.0, noise)?, 30, 1e-10)?;
        for n in 0..=k.n_max() {
            for s in 0..=k.s_max() {
                worst.update((k.get(s, n) - noise.prob(s)).abs(), || {
                    format!("s={s} n={n} noise={noise}")
                });
            }
        }
    }
    Ok(worst.finish("kernel eta=0 is noise", 1e-15))
}

fn kernel_binomial_loss(opts: &ValidationOptions) -> Result<CheckResult> {
    let mut worst = Worst::new();
    for eta in [0.3, 0.5, 0.7, 0.9] {
        let k = build_kernel(&DetectorModel::new(eta, NoiseModel::vacuum())?, 40, 1e-10)?;
        for n in 0..=k.n_max() {
            for s in 0..=k.s_max() {
                let expected = if s > n {
                    0.0
                } else {
                    (log_binomial(n, s)? + s as f64 * eta.ln() + (n - s) as f64 * (1.0 - eta).ln())
                        .exp()
                };
                worst.update((k.get(s, n) - expected).abs(), || {
                    format!("s={s} n={n} eta={eta}")
                });
            }
        }
    }
    Ok(worst.finish("kernel N=0 is binomial", opts.tol))
}

fn kernel_normalization(opts: &ValidationOptions) -> Result<CheckResult> {
    let mut worst = Worst::new();
    for &eta in &opts.eta_grid {
        for stat in NoiseStatistics::ALL {
            for mean in [0.2, 2.0] {
                let noise = NoiseModel::new(stat, mean)?;
                let k = build_kernel(&DetectorModel::new(eta, noise)?, 120, 1e-10)?;
                for n in 0..=k.n_max() {
                    let dev = (k.column_sum(n) + k.column_tail()[n] - 1.0).abs();
                    worst.update(dev, || format!("n={n} eta={eta} noise={noise}"));
                }
            }
        }
    }
    Ok(worst.finish("kernel column normalization", opts.tol))
}

fn kernel_methods_agree(opts: &ValidationOptions) -> Result<CheckResult> {
    let mut worst = Worst::new();
    for &eta in &opts.eta_grid {
        let det = DetectorModel::new(eta, NoiseModel::thermal(0.5)?)?;
        let ladder = build_kernel_with(&det, 12, 1e-10, KernelMethod::Ladder)?;
        let closed = build_kernel_with(&det, 12, 1e-10, KernelMethod::ClosedForm)?;
        for n in 0..=ladder.n_max() {
            for s in 0..=ladder.s_max() {
                worst.update((ladder.get(s, n) - closed.get(s, n)).abs(), || {
                    format!("s={s} n={n} eta={eta}")
                });
            }
        }
    }
    Ok(worst.finish("kernel ladder vs closed form", opts.tol))
}

fn state_normalization() -> Result<CheckResult> {
    let mut worst = Worst::new();
    for family in Family::ALL {
        for mean in [0.5, 1.0, 5.0, 10.0] {
            let st = PnesState::with_mean(family, mean, 1e-10)?;
            let dev = (st.weights().total_mass() + st.tail_mass() - 1.0).abs();
            worst.update(dev, || format!("{family} mean={mean}"));
        }
    }
    Ok(worst.finish("state normalization", 1e-12))
}

fn confusion_normalization() -> Result<CheckResult> {
    let mut worst = Worst::new();
    let tol = 1e-10;
    for family in Family::ALL {
        let st = PnesState::with_mean(family, 5.0, tol / 2.0)?;
        for stat in NoiseStatistics::ALL {
            for eta in [0.5, 0.9, 1.0] {
                let det = DetectorModel::new(eta, NoiseModel::new(stat, 0.2)?)?;
                let k = build_kernel(&det, st.n_max(), tol)?;
                let joint = joint_distribution(&st, &k)?;
                for t in 0..=threshold_upper_bound(&joint, tol) + 2 {
                    let cm = confusion_matrix(&joint, t);
                    let dev = (cm.total() - 1.0).abs().max((cm.p01 - cm.p10).abs());
                    worst.update(dev, || format!("{family} eta={eta} {stat} T={t}"));
                }
            }
        }
    }
    Ok(worst.finish("confusion normalization", 1e-9))
}
