//! Special functions and combinatorics shared by the state, detector and
//! channel models.
//!
//! Everything here is a pure function over immutable data. The shared
//! log-factorial table is built once on first use.

pub mod double_double;

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Default size of the shared log-factorial table.
///
/// Matches the photon-number truncation cap of the state model so that any
/// admissible state can be handled without resizing.
pub const DEFAULT_TABLE_SIZE: usize = crate::states::N_MAX_CAP;

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        s.extend(iter);
        s
    }
}

/// `ln(k!)` for `k` in `0..len`.
#[derive(Debug, Clone)]
pub struct LogFactorialTable {
    values: Vec<f64>,
}

impl LogFactorialTable {
    /// Builds the table for `k = 0..=k_max`.
    pub fn new(k_max: usize) -> Self {
        let mut values = Vec::with_capacity(k_max + 1);
        let mut acc = CompensatedSum::new();
        values.push(0.0);
        for k in 1..=k_max {
            acc.add((k as f64).ln());
            values.push(acc.value());
        }
        Self { values }
    }

    /// Process-wide table of [`DEFAULT_TABLE_SIZE`] entries.
    pub fn shared() -> &'static LogFactorialTable {
        static TABLE: OnceLock<LogFactorialTable> = OnceLock::new();
        TABLE.get_or_init(|| LogFactorialTable::new(DEFAULT_TABLE_SIZE))
    }

    /// Returns `self` if it covers `k_max`, otherwise a freshly built table.
    pub fn covering(&self, k_max: usize) -> std::borrow::Cow<'_, LogFactorialTable> {
        if k_max <= self.k_max() {
            std::borrow::Cow::Borrowed(self)
        } else {
            std::borrow::Cow::Owned(LogFactorialTable::new(k_max))
        }
    }

    pub fn k_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ln_factorial(&self, k: usize) -> Result<f64> {
        self.values.get(k).copied().ok_or(Error::TableTooSmall {
            requested: k,
            capacity: self.values.len(),
        })
    }

    /// `ln C(n, k)`.
    pub fn ln_binomial(&self, n: usize, k: usize) -> Result<f64> {
        if k > n {
            return Err(Error::InvalidBinomial { n, k });
        }
        Ok(self.ln_factorial(n)? - self.ln_factorial(k)? - self.ln_factorial(n - k)?)
    }
}

/// `ln C(n, k)` from the shared table.
pub fn log_binomial(n: usize, k: usize) -> Result<f64> {
    LogFactorialTable::shared().ln_binomial(n, k)
}

const RESCALE_EXP: i32 = 500;

/// A terminating series value written as `mantissa * 2^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledValue {
    pub mantissa: f64,
    pub exponent: i32,
}

impl ScaledValue {
    pub fn to_f64(self) -> f64 {
        let mut v = self.mantissa;
        let mut e = self.exponent;
        while e != 0 && v != 0.0 && v.is_finite() {
            let step = e.clamp(-1000, 1000);
            v *= 2f64.powi(step);
            e -= step;
        }
        v
    }

    /// `ln |value|`, finite even when the value itself is out of range.
    pub fn ln_abs(self) -> f64 {
        self.mantissa.abs().ln() + f64::from(self.exponent) * std::f64::consts::LN_2
    }
}

fn check_terminating(a: i64, b: i64, c: f64) -> Result<usize> {
    if a > 0 || b > 0 {
        return Err(Error::NonTerminatingSeries { a, b });
    }
    let terms = a.unsigned_abs().min(b.unsigned_abs()) as usize;
    // (c)_k vanishes once c + j = 0 for some j < terms
    for j in 0..terms {
        if c + j as f64 == 0.0 {
            return Err(Error::DegenerateDenominator { c, index: j + 1 });
        }
    }
    Ok(terms)
}

/// Terminating Gauss series `2F1(a, b; c; z)` with `a, b` nonpositive
/// integers, returned with a separate binary exponent so that large `|z|`
/// cannot overflow the intermediate terms.
pub fn hyp2f1_terminating_scaled(a: i64, b: i64, c: f64, z: f64) -> Result<ScaledValue> {
    let terms = check_terminating(a, b, c)?;
    let (a, b) = (a as f64, b as f64);

    let mut scaled_terms: Vec<(f64, i32)> = Vec::with_capacity(terms + 1);
    let mut t = 1.0f64;
    let mut e = 0i32;
    scaled_terms.push((t, e));
    for k in 0..terms {
        let kf = k as f64;
        t *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * z;
        if t == 0.0 {
            break;
        }
        let (_, te) = frexp_exponent(t);
        if te > RESCALE_EXP {
            t *= 2f64.powi(-RESCALE_EXP);
            e += RESCALE_EXP;
        } else if te < -RESCALE_EXP {
            t *= 2f64.powi(RESCALE_EXP);
            e -= RESCALE_EXP;
        }
        scaled_terms.push((t, e));
    }

    let reference = scaled_terms.iter().map(|&(_, e)| e).max().unwrap_or(0);
    let sum: CompensatedSum = scaled_terms
        .iter()
        .filter_map(|&(t, e)| {
            let shift = e - reference;
            (shift >= -1000).then(|| t * 2f64.powi(shift))
        })
        .collect();
    Ok(ScaledValue {
        mantissa: sum.value(),
        exponent: reference,
    })
}

fn frexp_exponent(x: f64) -> (f64, i32) {
    let raw = ((x.to_bits() >> 52) & 0x7ff) as i32;
    (x, raw - 1023)
}

/// Terminating Gauss series `2F1(a, b; c; z)` for nonpositive integers `a`
/// and `b`. The result is an exact polynomial in `z`, summed with
/// compensation since the terms alternate for `z < 0`.
pub fn hyp2f1_terminating(a: i64, b: i64, c: f64, z: f64) -> Result<f64> {
    hyp2f1_terminating_scaled(a, b, c, z).map(ScaledValue::to_f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselOrder {
    Zero,
    One,
}

/// Largest argument accepted by [`bessel_i`]; `I0(700)` is about `1.5e302`.
pub const BESSEL_ARG_MAX: f64 = 700.0;

/// Modified Bessel function of the first kind, orders 0 and 1, from the
/// ascending series `sum_k (x/2)^(2k+v) / (k! (k+v)!)`.
///
/// All terms are positive so plain summation is stable; the relative error is
/// a few ulps times the number of terms.
pub fn bessel_i(order: BesselOrder, x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::NegativeArgument(x));
    }
    if x > BESSEL_ARG_MAX {
        return Err(Error::BesselOverflow(x));
    }
    let v = match order {
        BesselOrder::Zero => 0.0,
        BesselOrder::One => 1.0,
    };
    let half = 0.5 * x;
    let q = half * half;
    let mut term = if v == 0.0 { 1.0 } else { half };
    let mut sum = CompensatedSum::new();
    let mut k = 0.0;
    loop {
        sum.add(term);
        k += 1.0;
        term *= q / (k * (k + v));
        if term <= sum.value() * 1e-17 || term == 0.0 {
            sum.add(term);
            break;
        }
    }
    Ok(sum.value())
}

/// `I1(x) / I0(x)`.
pub fn bessel_i_ratio(x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(bessel_i(BesselOrder::One, x)? / bessel_i(BesselOrder::Zero, x)?)
}
