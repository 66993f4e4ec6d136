//! Noisy photodetector: an ideal counter behind a beam splitter of
//! transmittivity `eta`, whose second port carries a dark-count noise mode.
//!
//! The beam splitter maps creation operators as
//! `a1' -> cos(phi) a1' + sin(phi) a2'` and `a2' -> -sin(phi) a1' + cos(phi) a2'`
//! with `eta = cos^2(phi)`; the detector monitors output mode 1.
//!
//! Three routes compute the probability of `s` counts from `n` signal photons
//! and `p` noise photons:
//!
//! * [`count_prob_oracle`]: squares the coherent sum of transfer amplitudes,
//!   in double-double arithmetic. This is the reference.
//! * [`count_prob_closed`]: the terminating-hypergeometric closed form.
//! * the ladder recursion used by [`build_kernel`], which grows whole blocks
//!   of the unitary one photon at a time and therefore never suffers the
//!   cancellation that limits the other two routes at large photon numbers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_sig;
use crate::numerics::double_double::{sum_scaled, DoubleDouble, ScaledDoubleDouble};
use crate::numerics::{hyp2f1_terminating_scaled, CompensatedSum, LogFactorialTable};

/// Hard cap on the noise photon-number cutoff.
pub const NOISE_P_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseStatistics {
    Poisson,
    Thermal,
}

impl NoiseStatistics {
    pub const ALL: [NoiseStatistics; 2] = [NoiseStatistics::Poisson, NoiseStatistics::Thermal];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseStatistics::Poisson => "poisson",
            NoiseStatistics::Thermal => "thermal",
        }
    }
}

impl fmt::Display for NoiseStatistics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseStatistics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(NoiseStatistics::Poisson),
            "thermal" => Ok(NoiseStatistics::Thermal),
            other => Err(Error::Config(format!(
                "unknown noise statistics '{other}' (expected poisson or thermal)"
            ))),
        }
    }
}

/// Photon-number mixture entering the detector's noise port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    statistics: NoiseStatistics,
    mean: f64,
}

/// Noise distribution cut at `p_max`, with the exact mass beyond it.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedNoise {
    pub probs: Vec<f64>,
    pub tail_mass: f64,
}

impl TruncatedNoise {
    pub fn p_max(&self) -> usize {
        self.probs.len() - 1
    }
}

impl NoiseModel {
    pub fn new(statistics: NoiseStatistics, mean: f64) -> Result<Self> {
        if !(mean >= 0.0) || !mean.is_finite() {
            return Err(Error::param("noise mean", mean, "must be finite and >= 0"));
        }
        Ok(Self { statistics, mean })
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        Self::new(NoiseStatistics::Poisson, mean)
    }

    pub fn thermal(mean: f64) -> Result<Self> {
        Self::new(NoiseStatistics::Thermal, mean)
    }

    pub fn vacuum() -> Self {
        Self {
            statistics: NoiseStatistics::Poisson,
            mean: 0.0,
        }
    }

    pub fn statistics(&self) -> NoiseStatistics {
        self.statistics
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `nu_p`.
    pub fn prob(&self, p: usize) -> f64 {
        let n = self.mean;
        if n == 0.0 {
            return if p == 0 { 1.0 } else { 0.0 };
        }
        let pf = p as f64;
        match self.statistics {
            NoiseStatistics::Poisson => {
                let table = LogFactorialTable::shared();
                let lf = table
                    .covering(p)
                    .ln_factorial(p)
                    .expect("covering table holds p");
                (-n + pf * n.ln() - lf).exp()
            }
            NoiseStatistics::Thermal => (pf * (n / (n + 1.0)).ln()).exp() / (n + 1.0),
        }
    }

    /// Smallest cutoff whose retained mass reaches `1 - tol / 10`.
    pub fn truncate(&self, tol: f64) -> Result<TruncatedNoise> {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::param("tol", tol, "must lie in (0, 1)"));
        }
        if self.mean == 0.0 {
            return Ok(TruncatedNoise {
                probs: vec![1.0],
                tail_mass: 0.0,
            });
        }
        let target = 1.0 - tol / 10.0;
        let mut probs = Vec::new();
        let mut acc = CompensatedSum::new();
        loop {
            let p = probs.len();
            let v = self.prob(p);
            probs.push(v);
            acc.add(v);
            if acc.value() >= target {
                break;
            }
            if p >= NOISE_P_CAP {
                return Err(Error::TruncationCap {
                    cap: NOISE_P_CAP,
                    residual: 1.0 - acc.value(),
                    tol,
                });
            }
        }
        let p_max = probs.len() - 1;
        let tail_mass = match self.statistics {
            NoiseStatistics::Thermal => {
                ((p_max + 1) as f64 * (self.mean / (self.mean + 1.0)).ln()).exp()
            }
            NoiseStatistics::Poisson => {
                // terms past the cutoff decay faster than geometrically
                let mut tail = CompensatedSum::new();
                let mut p = p_max + 1;
                loop {
                    let v = self.prob(p);
                    tail.add(v);
                    if v == 0.0 || (p as f64 > self.mean && v < tail.value() * 1e-17) {
                        break;
                    }
                    p += 1;
                }
                tail.value()
            }
        };
        Ok(TruncatedNoise { probs, tail_mass })
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(N={})", self.statistics, self.mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    eta: f64,
    noise: NoiseModel,
}

impl DetectorModel {
    pub fn new(eta: f64, noise: NoiseModel) -> Result<Self> {
        check_eta(eta)?;
        Ok(Self { eta, noise })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param(
            "eta",
            eta,
            "quantum efficiency must lie in [0, 1]",
        ));
    }
    Ok(())
}

/// Sign convention of the `(-1)^k2` factor in the transfer amplitude.
///
/// `Dropped` exists only to demonstrate that the validation suite detects a
/// corrupted amplitude; it is never used for physics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmplitudeSign {
    #[default]
    Standard,
    Dropped,
}

impl AmplitudeSign {
    fn factor(self, k2: usize) -> f64 {
        match self {
            AmplitudeSign::Standard if k2 % 2 == 1 => -1.0,
            _ => 1.0,
        }
    }
}

/// Signed value stored as `sign * exp(ln_abs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub sign: f64,
    pub ln_abs: f64,
}

impl SignedLog {
    pub fn value(self) -> f64 {
        self.sign * self.ln_abs.exp()
    }
}

fn check_indices(n1: usize, n2: usize, k1: usize, k2: usize) -> Result<()> {
    if k1 > n1 || k2 > n2 {
        return Err(Error::InvalidIndex(format!(
            "transfer amplitude needs k1 <= n1 and k2 <= n2, got n=({n1},{n2}) k=({k1},{k2})"
        )));
    }
    Ok(())
}

/// `ln |A|` and sign of the transfer amplitude `A^{n1 n2}_{k1 k2}` taking
/// `|n1, n2>` to `|k1 + k2, n1 + n2 - k1 - k2>`.
pub fn ln_transfer_amplitude(
    n1: usize,
    n2: usize,
    k1: usize,
    k2: usize,
    eta: f64,
) -> Result<SignedLog> {
    check_indices(n1, n2, k1, k2)?;
    check_eta(eta)?;
    let total = n1 + n2;
    let table = LogFactorialTable::shared();
    let table = table.covering(total);
    let s = k1 + k2;
    let ln_fact = 0.5
        * (table.ln_factorial(s)? + table.ln_factorial(total - s)?
            - table.ln_factorial(n1)?
            - table.ln_factorial(n2)?);
    let sin_pow = n1 - k1 + k2;
    let cos_pow = n2 + k1 - k2;
    // x^0 = 1 even when x = 0
    let ln_pow = |base_sq: f64, k: usize| {
        if k == 0 {
            0.0
        } else {
            0.5 * k as f64 * base_sq.ln()
        }
    };
    let ln_abs = ln_fact
        + table.ln_binomial(n1, k1)?
        + table.ln_binomial(n2, k2)?
        + ln_pow(1.0 - eta, sin_pow)
        + ln_pow(eta, cos_pow);
    Ok(SignedLog {
        sign: AmplitudeSign::Standard.factor(k2),
        ln_abs,
    })
}

/// Transfer amplitude `A^{n1 n2}_{k1 k2}` as a plain float.
pub fn transfer_amplitude(n1: usize, n2: usize, k1: usize, k2: usize, eta: f64) -> Result<f64> {
    ln_transfer_amplitude(n1, n2, k1, k2, eta).map(SignedLog::value)
}

fn dd_binomial(n: usize, k: usize) -> ScaledDoubleDouble {
    let k = k.min(n - k);
    let mut acc = ScaledDoubleDouble::ONE;
    for i in 1..=k {
        acc = acc * ScaledDoubleDouble::from_u64((n - k + i) as u64)
            / ScaledDoubleDouble::from_u64(i as u64);
    }
    acc
}

/// Coherent amplitude `<s, n+p-s| U |n, p>` summed term by term from the
/// transfer amplitudes in double-double arithmetic.
fn oracle_amplitude(
    n: usize,
    p: usize,
    s: usize,
    eta: f64,
    sign: AmplitudeSign,
) -> ScaledDoubleDouble {
    let total = n + p;
    if s > total {
        return ScaledDoubleDouble::ZERO;
    }
    let eta_dd = DoubleDouble::new(eta);
    let sin_phi = ScaledDoubleDouble::new(DoubleDouble::ONE - eta_dd).sqrt();
    let cos_phi = ScaledDoubleDouble::new(eta_dd).sqrt();
    // sqrt(s! (total-s)! / (n! p!)) = sqrt(C(total, n) / C(total, s))
    let norm = (dd_binomial(total, n) / dd_binomial(total, s)).sqrt();

    let k_lo = s.saturating_sub(p);
    let k_hi = s.min(n);
    let mut terms = Vec::with_capacity(k_hi + 1 - k_lo.min(k_hi + 1));
    for k1 in k_lo..=k_hi {
        let k2 = s - k1;
        let mut t = norm
            * dd_binomial(n, k1)
            * dd_binomial(p, k2)
            * sin_phi.powi((n - k1 + k2) as u32)
            * cos_phi.powi((p + k1 - k2) as u32);
        if sign.factor(k2) < 0.0 {
            t = t.neg();
        }
        terms.push(t);
    }
    sum_scaled(&terms)
}

/// Probability of `s` counts when `n` signal and `p` noise photons meet at
/// the beam splitter: the squared coherent sum of transfer amplitudes
/// `A^{n p}_{k, s-k}`, zero outside the support `s <= n + p`.
pub fn count_prob_oracle(n: usize, p: usize, s: usize, eta: f64) -> Result<f64> {
    count_prob_oracle_with(n, p, s, eta, AmplitudeSign::Standard)
}

/// [`count_prob_oracle`] with an explicit amplitude sign convention.
pub fn count_prob_oracle_with(
    n: usize,
    p: usize,
    s: usize,
    eta: f64,
    sign: AmplitudeSign,
) -> Result<f64> {
    check_eta(eta)?;
    let a = oracle_amplitude(n, p, s, eta, sign);
    Ok((a * a).to_f64())
}

/// `(sum_k |A^{n p}_{k, s-k}|)^2`: the size of the coherent sum before
/// cancellation. Interference zeros of the count probability can only be
/// resolved relative to this scale.
pub fn count_prob_cancellation_scale(n: usize, p: usize, s: usize, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    if s > n + p {
        return Ok(0.0);
    }
    let mut acc = CompensatedSum::new();
    for k1 in s.saturating_sub(p)..=s.min(n) {
        acc.add(ln_transfer_amplitude(n, p, k1, s - k1, eta)?.ln_abs.exp());
    }
    Ok(acc.value().powi(2))
}

/// Closed form of the count probability via a terminating `2F1` at
/// `z = -eta / (1 - eta)`.
///
/// For `p >= s`:
/// `((1-eta)/eta)^s (1-eta)^n eta^p C(n+p-s, p-s) C(p, s) 2F1(-n, -s; 1+p-s; z)^2`.
///
/// For `p < s` the denominator parameter `1+p-s` is a nonpositive integer and
/// the series above is undefined; the sum is re-indexed from its first
/// nonzero term instead, giving
/// `C(s, p) C(n, s-p) (1-eta)^(n+2p-s) eta^(s-p) 2F1(-(n+p-s), -p; 1+s-p; z)^2`.
pub fn count_prob_closed(n: usize, p: usize, s: usize, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    if eta == 0.0 || eta == 1.0 {
        return Err(Error::EndpointEta(eta));
    }
    if s > n + p {
        return Ok(0.0);
    }
    let table = LogFactorialTable::shared();
    let table = table.covering(n + p);
    let ln_t = (-eta).ln_1p();
    let ln_e = eta.ln();
    let z = -eta / (1.0 - eta);
    let (ln_prefactor, series) = if p >= s {
        let ln_pre = (n + s) as f64 * ln_t
            + (p - s) as f64 * ln_e
            + table.ln_binomial(n + p - s, p - s)?
            + table.ln_binomial(p, s)?;
        let f = hyp2f1_terminating_scaled(-(n as i64), -(s as i64), (1 + p - s) as f64, z)?;
        (ln_pre, f)
    } else {
        let ln_pre = table.ln_binomial(s, p)?
            + table.ln_binomial(n, s - p)?
            + (n + 2 * p - s) as f64 * ln_t
            + (s - p) as f64 * ln_e;
        let f =
            hyp2f1_terminating_scaled(-((n + p - s) as i64), -(p as i64), (1 + s - p) as f64, z)?;
        (ln_pre, f)
    };
    if series.mantissa == 0.0 {
        return Ok(0.0);
    }
    let ln_scale = ln_prefactor + 2.0 * f64::from(series.exponent) * std::f64::consts::LN_2;
    Ok(ln_scale.exp() * series.mantissa * series.mantissa)
}

/// Which route fills the kernel entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelMethod {
    /// Photon-by-photon recursion over blocks of the beam-splitter unitary.
    #[default]
    Ladder,
    /// Sum of [`count_prob_closed`] cells; accurate only while the
    /// hypergeometric series is well conditioned (moderate `n`, `p`).
    ClosedForm,
}

/// Conditional count distribution `K(s | n)` of one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct CountKernel {
    /// Row-major, `(s_max + 1) x (n_max + 1)`.
    k: Vec<f64>,
    s_max: usize,
    n_max: usize,
    p_max: usize,
    detector: DetectorModel,
    tol: f64,
    column_tail: Vec<f64>,
}

impl CountKernel {
    pub fn get(&self, s: usize, n: usize) -> f64 {
        if s > self.s_max || n > self.n_max {
            0.0
        } else {
            self.k[s * (self.n_max + 1) + n]
        }
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..=self.s_max).map(|s| self.get(s, n)).collect()
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Noise photon-number cutoff used while building.
    pub fn p_max(&self) -> usize {
        self.p_max
    }

    pub fn eta(&self) -> f64 {
        self.detector.eta
    }

    pub fn noise(&self) -> NoiseModel {
        self.detector.noise
    }

    pub fn detector(&self) -> DetectorModel {
        self.detector
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Probability mass of column `n` that falls outside the stored rows.
    pub fn column_tail(&self) -> &[f64] {
        &self.column_tail
    }

    /// Largest count reachable from `n` signal photons.
    pub fn support_end(&self, n: usize) -> usize {
        if self.detector.eta == 1.0 {
            n
        } else if self.detector.eta == 0.0 {
            self.p_max
        } else {
            n + self.p_max
        }
        .min(self.s_max)
    }

    pub fn column_sum(&self, n: usize) -> f64 {
        (0..=self.s_max)
            .map(|s| self.get(s, n))
            .collect::<CompensatedSum>()
            .value()
    }

    /// Delimited-text dump: two `#` header lines, a column header, then one
    /// row per count `s` with the entries for `n = 0..=n_max`.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let noise = self.detector.noise;
        writeln!(
            w,
            "# count kernel K(s|n): rows s = 0..={}, columns n = 0..={}",
            self.s_max, self.n_max
        )?;
        writeln!(
            w,
            "# eta={} noise_stat={} noise_mean={} tol={} p_max={}",
            fmt_sig(self.detector.eta),
            noise.statistics,
            fmt_sig(noise.mean),
            fmt_sig(self.tol),
            self.p_max
        )?;
        write!(w, "s")?;
        for n in 0..=self.n_max {
            write!(w, ",n{n}")?;
        }
        writeln!(w)?;
        for s in 0..=self.s_max {
            write!(w, "{s}")?;
            for n in 0..=self.n_max {
                write!(w, ",{}", fmt_sig(self.get(s, n)))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("kernel dump is ASCII")
    }
}

/// Builds `K(s|n)` for `n = 0..=n_max` with the ladder recursion.
pub fn build_kernel(detector: &DetectorModel, n_max: usize, tol: f64) -> Result<CountKernel> {
    build_kernel_with(detector, n_max, tol, KernelMethod::Ladder)
}

pub fn build_kernel_with(
    detector: &DetectorModel,
    n_max: usize,
    tol: f64,
    method: KernelMethod,
) -> Result<CountKernel> {
    let noise = detector.noise.truncate(tol)?;
    let p_max = noise.p_max();
    let eta = detector.eta;

    if eta == 1.0 {
        // the noise port is routed entirely to the unmonitored output
        let mut k = vec![0.0; (n_max + 1) * (n_max + 1)];
        for n in 0..=n_max {
            k[n * (n_max + 1) + n] = 1.0;
        }
        return Ok(CountKernel {
            k,
            s_max: n_max,
            n_max,
            p_max,
            detector: *detector,
            tol,
            column_tail: vec![0.0; n_max + 1],
        });
    }
    if eta == 0.0 {
        let mut k = vec![0.0; (p_max + 1) * (n_max + 1)];
        for (s, nu) in noise.probs.iter().enumerate() {
            for n in 0..=n_max {
                k[s * (n_max + 1) + n] = *nu;
            }
        }
        return Ok(CountKernel {
            k,
            s_max: p_max,
            n_max,
            p_max,
            detector: *detector,
            tol,
            column_tail: vec![noise.tail_mass; n_max + 1],
        });
    }

    let s_max = n_max + p_max;
    let columns: Vec<Vec<f64>> = match method {
        KernelMethod::Ladder => ladder_columns(n_max, &noise.probs, eta),
        KernelMethod::ClosedForm => (0..=n_max)
            .into_par_iter()
            .map(|n| closed_form_column(n, &noise.probs, eta))
            .collect::<Result<_>>()?,
    };

    let mut k = vec![0.0; (s_max + 1) * (n_max + 1)];
    for (n, col) in columns.iter().enumerate() {
        for (s, v) in col.iter().enumerate() {
            k[s * (n_max + 1) + n] = *v;
        }
    }
    Ok(CountKernel {
        k,
        s_max,
        n_max,
        p_max,
        detector: *detector,
        tol,
        column_tail: vec![noise.tail_mass; n_max + 1],
    })
}

fn closed_form_column(n: usize, nu: &[f64], eta: f64) -> Result<Vec<f64>> {
    let p_max = nu.len() - 1;
    let mut col = vec![CompensatedSum::new(); n + p_max + 1];
    for (p, &weight) in nu.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        for (s, acc) in col.iter_mut().enumerate().take(n + p + 1) {
            acc.add(weight * count_prob_closed(n, p, s, eta)?);
        }
    }
    Ok(col.iter().map(CompensatedSum::value).collect())
}

/// Block `M[s][n] = <s, N-s| U |n, N-n>` of the beam-splitter unitary at
/// fixed total photon number `N`, stored row-major.
///
/// Block `N` follows from block `N - 1` through
/// `N |n, N-n> = sqrt(n) a1' |n-1, N-n> + sqrt(N-n) a2' |n, N-n-1>`,
/// with `a1'`, `a2'` replaced by their images under `U`. The map is a
/// near-isometry on errors, so accumulated rounding grows only like
/// `sqrt(N)`.
fn next_unitary_block(prev: &[f64], total: usize, cos_phi: f64, sin_phi: f64) -> Vec<f64> {
    let dim = total + 1;
    let pdim = total;
    let at = |s: usize, n: usize| -> f64 {
        if s < pdim && n < pdim {
            prev[s * pdim + n]
        } else {
            0.0
        }
    };
    let nf = total as f64;
    let fill_row = |s: usize, row: &mut [f64]| {
        let rs = (s as f64).sqrt();
        let rrest = ((total - s) as f64).sqrt();
        for (n, out) in row.iter_mut().enumerate() {
            let mut v = 0.0;
            if n > 0 {
                // image of a1' on column n-1 of the previous block
                let lower = if s > 0 {
                    cos_phi * rs * at(s - 1, n - 1)
                } else {
                    0.0
                };
                v += (n as f64).sqrt() * (lower + sin_phi * rrest * at(s, n - 1));
            }
            if n < total {
                // image of a2' on column n of the previous block
                let lower = if s > 0 {
                    -sin_phi * rs * at(s - 1, n)
                } else {
                    0.0
                };
                v += ((total - n) as f64).sqrt() * (lower + cos_phi * rrest * at(s, n));
            }
            *out = v / nf;
        }
    };
    let mut block = vec![0.0; dim * dim];
    if dim >= 64 {
        block
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(s, row)| fill_row(s, row));
    } else {
        block
            .chunks_mut(dim)
            .enumerate()
            .for_each(|(s, row)| fill_row(s, row));
    }
    block
}

/// Kernel columns `0..=n_max` from the unitary blocks: column `n` collects
/// `nu_p |<s, n+p-s| U |n, p>|^2` in increasing `p`.
fn ladder_columns(n_max: usize, nu: &[f64], eta: f64) -> Vec<Vec<f64>> {
    let p_max = nu.len() - 1;
    let cos_phi = eta.sqrt();
    let sin_phi = (1.0 - eta).sqrt();
    let mut cols: Vec<Vec<CompensatedSum>> = (0..=n_max)
        .map(|n| vec![CompensatedSum::new(); n + p_max + 1])
        .collect();
    let mut block = vec![1.0];
    for total in 0..=n_max + p_max {
        if total > 0 {
            block = next_unitary_block(&block, total, cos_phi, sin_phi);
        }
        let dim = total + 1;
        for n in total.saturating_sub(p_max)..=total.min(n_max) {
            let weight = nu[total - n];
            if weight == 0.0 {
                continue;
            }
            for (s, acc) in cols[n].iter_mut().enumerate().take(dim) {
                let a = block[s * dim + n];
                acc.add(weight * a * a);
            }
        }
    }
    cols.into_iter()
        .map(|c| c.iter().map(CompensatedSum::value).collect())
        .collect()
}
