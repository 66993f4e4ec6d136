//! Per-mode photon-number distributions of the twin-beam (TWB) and two-mode
//! coherently-correlated (TMC) states.
//!
//! Both families are Schmidt-diagonal in the Fock basis, so a single
//! photon-number distribution describes either mode, and the joint
//! distribution is concentrated on the diagonal `|n, n>`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bessel_i, bessel_i_ratio, BesselOrder, CompensatedSum};

/// Hard cap on the photon-number cutoff.
pub const N_MAX_CAP: usize = 4096;

/// Default truncation tolerance on the discarded tail mass.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Twin beam, Fock amplitudes `sqrt(1 - x^2) x^n`.
    Twb,
    /// Two-mode coherently correlated (pair-coherent), amplitudes
    /// `lambda^n / n! / sqrt(I0(2 lambda))`.
    Tmc,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Twb, Family::Tmc];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Twb => "twb",
            Family::Tmc => "tmc",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "twb" => Ok(Family::Twb),
            "tmc" => Ok(Family::Tmc),
            other => Err(Error::Config(format!(
                "unknown state family '{other}' (expected twb or tmc)"
            ))),
        }
    }
}

/// Truncated probability vector over photon numbers. The mass beyond the
/// cutoff is kept in `tail_mass` and never folded back into `probs`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
    tail_mass: f64,
}

impl PhotonNumberDistribution {
    pub fn new(probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("empty photon-number distribution".into()));
        }
        if let Some(&bad) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::param(
                "probability",
                bad,
                "must be finite and nonnegative",
            ));
        }
        if !(tail_mass >= 0.0) {
            return Err(Error::param("tail_mass", tail_mass, "must be nonnegative"));
        }
        Ok(Self { probs, tail_mass })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.probs
            .iter()
            .copied()
            .collect::<CompensatedSum>()
            .value()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .collect::<CompensatedSum>()
            .value()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| {
                let d = n as f64 - mu;
                d * d * p
            })
            .collect::<CompensatedSum>()
            .value()
    }

    /// `P(n <= t)` over the retained weights.
    pub fn cdf(&self, t: usize) -> f64 {
        let end = (t + 1).min(self.probs.len());
        self.probs[..end]
            .iter()
            .copied()
            .collect::<CompensatedSum>()
            .value()
    }
}

/// A photon-number entangled state reduced to what the channel model needs:
/// its family, parameter, and the common per-mode photon-number weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PnesState {
    family: Family,
    parameter: f64,
    weights: PhotonNumberDistribution,
}

impl PnesState {
    /// See [`build_state`].
    pub fn new(family: Family, parameter: f64, tol: f64) -> Result<Self> {
        build_state(family, parameter, tol)
    }

    /// State whose per-mode mean photon number is `mean`.
    pub fn with_mean(family: Family, mean: f64, tol: f64) -> Result<Self> {
        build_state(family, parameter_from_mean(family, mean)?, tol)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `x` for TWB, `lambda` for TMC.
    pub fn parameter(&self) -> f64 {
        self.parameter
    }

    pub fn weights(&self) -> &PhotonNumberDistribution {
        &self.weights
    }

    pub fn n_max(&self) -> usize {
        self.weights.n_max()
    }

    pub fn tail_mass(&self) -> f64 {
        self.weights.tail_mass()
    }

    pub fn mean_photon_number(&self) -> f64 {
        mean_photon_number(self)
    }

    pub fn fano_factor(&self) -> Result<f64> {
        fano_factor(self)
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::param("tol", tol, "must lie in (0, 1)"));
    }
    Ok(())
}

/// Builds the state with the smallest photon-number cutoff whose discarded
/// tail mass is below `tol`.
pub fn build_state(family: Family, parameter: f64, tol: f64) -> Result<PnesState> {
    check_tol(tol)?;
    if !(parameter >= 0.0) || !parameter.is_finite() {
        return Err(Error::param(
            "state parameter",
            parameter,
            "must be finite and >= 0",
        ));
    }
    let weights = match family {
        Family::Twb => twb_weights(parameter, tol)?,
        Family::Tmc => tmc_weights(parameter, tol)?,
    };
    Ok(PnesState {
        family,
        parameter,
        weights,
    })
}

fn twb_weights(x: f64, tol: f64) -> Result<PhotonNumberDistribution> {
    if x >= 1.0 {
        return Err(Error::param(
            "TWB x",
            x,
            "must be < 1 for a normalizable state",
        ));
    }
    if x == 0.0 {
        return PhotonNumberDistribution::new(vec![1.0], 0.0);
    }
    // tail beyond n_max is x^(2(n_max+1)) exactly
    let ln_ratio = 2.0 * x.ln();
    let tail = |n_max: usize| ((n_max + 1) as f64 * ln_ratio).exp();
    let mut n_max = ((tol.ln() / ln_ratio).ceil() as usize).saturating_sub(1);
    while n_max > 0 && tail(n_max - 1) < tol {
        n_max -= 1;
    }
    while tail(n_max) >= tol {
        n_max += 1;
    }
    if n_max > N_MAX_CAP {
        return Err(Error::TruncationCap {
            cap: N_MAX_CAP,
            residual: tail(N_MAX_CAP),
            tol,
        });
    }
    let ln_w0 = (-x * x).ln_1p();
    let probs = (0..=n_max)
        .map(|n| (ln_w0 + n as f64 * ln_ratio).exp())
        .collect();
    PhotonNumberDistribution::new(probs, tail(n_max))
}

fn tmc_weights(lambda: f64, tol: f64) -> Result<PhotonNumberDistribution> {
    if lambda == 0.0 {
        return PhotonNumberDistribution::new(vec![1.0], 0.0);
    }
    let ln_i0 = bessel_i(BesselOrder::Zero, 2.0 * lambda)?.ln();
    let ln_l2 = 2.0 * lambda.ln();

    // Generate well past the cutoff so the tail is an explicit sum.
    let mut ln_w = Vec::new();
    let mut ln_fact = CompensatedSum::new();
    let mut n = 0usize;
    loop {
        if n > 0 {
            ln_fact.add((n as f64).ln());
        }
        let lw = n as f64 * ln_l2 - 2.0 * ln_fact.value() - ln_i0;
        ln_w.push(lw);
        let ratio = lambda * lambda / ((n + 1) as f64).powi(2);
        // geometric bound on everything after n
        if ratio < 0.5 && lw.exp() * ratio / (1.0 - ratio) < tol * 1e-12 {
            break;
        }
        n += 1;
        if n > 2 * N_MAX_CAP {
            return Err(Error::TruncationCap {
                cap: N_MAX_CAP,
                residual: lw.exp(),
                tol,
            });
        }
    }
    let weights: Vec<f64> = ln_w.iter().map(|lw| lw.exp()).collect();

    // suffix[n] = sum_{m >= n} w_m
    let mut suffix = vec![0.0; weights.len() + 1];
    let mut acc = CompensatedSum::new();
    for i in (0..weights.len()).rev() {
        acc.add(weights[i]);
        suffix[i] = acc.value();
    }
    let n_max = (0..weights.len())
        .find(|&m| suffix[m + 1] < tol)
        .unwrap_or(weights.len() - 1);
    if n_max > N_MAX_CAP {
        return Err(Error::TruncationCap {
            cap: N_MAX_CAP,
            residual: suffix[N_MAX_CAP + 1],
            tol,
        });
    }
    PhotonNumberDistribution::new(weights[..=n_max].to_vec(), suffix[n_max + 1])
}

/// `sum_n n w_n` over the retained weights.
pub fn mean_photon_number(state: &PnesState) -> f64 {
    state.weights.mean()
}

/// Closed-form per-mode mean: `x^2 / (1 - x^2)` for TWB and
/// `lambda I1(2 lambda) / I0(2 lambda)` for TMC.
pub fn analytic_mean(family: Family, parameter: f64) -> Result<f64> {
    match family {
        Family::Twb => {
            if !(0.0..1.0).contains(&parameter) {
                return Err(Error::param("TWB x", parameter, "must lie in [0, 1)"));
            }
            let x2 = parameter * parameter;
            Ok(x2 / (1.0 - x2))
        }
        Family::Tmc => {
            if !(parameter >= 0.0) {
                return Err(Error::param("TMC lambda", parameter, "must be >= 0"));
            }
            Ok(parameter * bessel_i_ratio(2.0 * parameter)?)
        }
    }
}

/// Inverts [`analytic_mean`].
pub fn parameter_from_mean(family: Family, target_mean: f64) -> Result<f64> {
    if !(target_mean >= 0.0) || !target_mean.is_finite() {
        return Err(Error::param(
            "mean photon number",
            target_mean,
            "must be finite and >= 0",
        ));
    }
    if target_mean == 0.0 {
        return Ok(0.0);
    }
    match family {
        Family::Twb => Ok((target_mean / (1.0 + target_mean)).sqrt()),
        Family::Tmc => tmc_lambda_from_mean(target_mean),
    }
}

fn tmc_lambda_from_mean(m: f64) -> Result<f64> {
    let f = |lambda: f64| analytic_mean(Family::Tmc, lambda);
    let lambda_limit = 0.5 * crate::numerics::BESSEL_ARG_MAX;
    let mut lo = 0.0;
    let mut hi = 1.0f64;
    while f(hi)? < m {
        lo = hi;
        hi *= 2.0;
        if hi > lambda_limit {
            hi = lambda_limit;
            if f(hi)? < m {
                return Err(Error::param(
                    "mean photon number",
                    m,
                    "TMC parameter would exceed the Bessel overflow guard",
                ));
            }
            break;
        }
    }
    // mean(lambda) is increasing; plain bisection to full precision
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid)?;
        if v == m {
            return Ok(mid);
        }
        if v < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f(lo)?, f(hi)?);
    Ok(if (flo - m).abs() <= (fhi - m).abs() {
        lo
    } else {
        hi
    })
}

/// Variance-to-mean ratio of the per-mode photon number.
pub fn fano_factor(state: &PnesState) -> Result<f64> {
    let mu = state.weights.mean();
    if mu <= 0.0 {
        return Err(Error::ZeroMean);
    }
    Ok(state.weights.variance() / mu)
}
