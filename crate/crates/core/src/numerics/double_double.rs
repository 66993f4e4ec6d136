//! Double-double arithmetic (roughly 106-bit significand) with a separate
//! binary exponent, so that products of large binomials and tiny powers can be
//! formed without overflow or underflow.
//!
//! Only the handful of operations needed by the beam-splitter amplitude
//! reference route are provided.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

/// Exact power of two for exponents in the normal range.
#[inline]
fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::ZERO;
        }
        let q = self.hi.sqrt();
        let y = Self::new(q);
        let r = self - y * y;
        y + Self::new(r.hi / (2.0 * q))
    }

    /// Multiplication by `2^k`; exact as long as both parts stay normal.
    fn ldexp(self, k: i32) -> Self {
        let mut out = self;
        let mut k = k;
        while k != 0 {
            let step = k.clamp(-1000, 1000);
            let f = pow2(step);
            out = Self {
                hi: out.hi * f,
                lo: out.lo * f,
            };
            k -= step;
        }
        out
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        Self::new(x)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * Self::new(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Self::new(q2);
        let q3 = r.hi / rhs.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::new(q3)
    }
}

/// `mantissa * 2^exponent`, with the mantissa kept in `[1, 2)` (or zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledDoubleDouble {
    mantissa: DoubleDouble,
    exponent: i64,
}

impl ScaledDoubleDouble {
    pub const ZERO: Self = Self {
        mantissa: DoubleDouble::ZERO,
        exponent: 0,
    };
    pub const ONE: Self = Self {
        mantissa: DoubleDouble::ONE,
        exponent: 0,
    };

    pub fn new(x: DoubleDouble) -> Self {
        Self {
            mantissa: x,
            exponent: 0,
        }
        .normalized()
    }

    pub fn from_f64(x: f64) -> Self {
        Self::new(DoubleDouble::new(x))
    }

    pub fn from_u64(x: u64) -> Self {
        Self::from_f64(x as f64)
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.hi == 0.0
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    fn normalized(self) -> Self {
        let hi = self.mantissa.hi;
        if hi == 0.0 || !hi.is_finite() {
            return Self {
                mantissa: if hi == 0.0 {
                    DoubleDouble::ZERO
                } else {
                    self.mantissa
                },
                exponent: 0,
            };
        }
        let raw = ((hi.to_bits() >> 52) & 0x7ff) as i32;
        // Subnormal leading parts only arise from from_f64 on tiny inputs.
        let e = if raw == 0 {
            hi.abs().log2().floor() as i32
        } else {
            raw - 1023
        };
        Self {
            mantissa: self.mantissa.ldexp(-e),
            exponent: self.exponent + i64::from(e),
        }
    }

    pub fn sqrt(self) -> Self {
        if self.is_zero() {
            return Self::ZERO;
        }
        let (m, e) = if self.exponent % 2 != 0 {
            (self.mantissa * DoubleDouble::new(2.0), self.exponent - 1)
        } else {
            (self.mantissa, self.exponent)
        };
        Self {
            mantissa: m.sqrt(),
            exponent: e / 2,
        }
        .normalized()
    }

    pub fn powi(self, n: u32) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    /// Value as a double-double relative to `2^reference`.
    pub fn relative_to(self, reference: i64) -> DoubleDouble {
        let shift = self.exponent - reference;
        if self.is_zero() || shift < -1060 {
            return DoubleDouble::ZERO;
        }
        self.mantissa.ldexp(shift as i32)
    }

    pub fn to_f64(self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        if self.exponent > 1023 {
            return f64::INFINITY.copysign(self.mantissa.hi);
        }
        if self.exponent < -1074 {
            return 0.0;
        }
        let m = self.mantissa.to_f64();
        // split to avoid underflowing the intermediate factor
        let e = self.exponent as i32;
        if e >= -1022 {
            m * pow2(e)
        } else {
            m * pow2(-1022) * pow2(e + 1022)
        }
    }

    pub fn neg(self) -> Self {
        Self {
            mantissa: -self.mantissa,
            exponent: self.exponent,
        }
    }
}

impl Mul for ScaledDoubleDouble {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::ZERO;
        }
        Self {
            mantissa: self.mantissa * rhs.mantissa,
            exponent: self.exponent + rhs.exponent,
        }
        .normalized()
    }
}

impl Div for ScaledDoubleDouble {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        if self.is_zero() {
            return Self::ZERO;
        }
        Self {
            mantissa: self.mantissa / rhs.mantissa,
            exponent: self.exponent - rhs.exponent,
        }
        .normalized()
    }
}

/// Sums scaled values exactly enough for cancellation-heavy alternating sums:
/// every addend is brought to the largest exponent and accumulated in
/// double-double.
pub fn sum_scaled(values: &[ScaledDoubleDouble]) -> ScaledDoubleDouble {
    let Some(reference) = values
        .iter()
        .filter(|v| !v.is_zero())
        .map(|v| v.exponent)
        .max_by(|a, b| a.cmp(b))
    else {
        return ScaledDoubleDouble::ZERO;
    };
    let mut acc = DoubleDouble::ZERO;
    for v in values {
        acc = acc + v.relative_to(reference);
    }
    ScaledDoubleDouble {
        mantissa: acc,
        exponent: reference,
    }
    .normalized()
}
