//! Exact arithmetic in the quadratic field Q(√2) and controlled conversion
//! to certified finite-precision values for logarithms and reporting.
//!
//! Every length and gap in a construction lives in Q(√2), so field
//! operations, comparisons and signs are exact. Anything that genuinely
//! leaves the field (logarithms, fractional powers) is returned as an
//! [`ApproxScalar`] carrying an explicit error bound.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Mutex;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum NumericError {
    #[error("division by zero scalar")]
    DivisionByZero,
    #[error("logarithm of a nonpositive value")]
    LogNonpositive,
    #[error("precision must be at least 16 bits, got {0}")]
    PrecisionTooLow(u32),
    #[error("certified interval for a divisor straddles zero")]
    UncertainDivisor,
    #[error("root of a negative certified value")]
    RootOfNegative,
}

/// An element `rational_part + sqrt2_part * sqrt(2)` of Q(√2).
///
/// Both coordinates are reduced big rationals, so equality, ordering and
/// signs are decidable without any rounding.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ExactScalar {
    rational_part: BigRational,
    sqrt2_part: BigRational,
}

impl ExactScalar {
    pub fn zero() -> Self {
        Self {
            rational_part: BigRational::zero(),
            sqrt2_part: BigRational::zero(),
        }
    }

    pub fn one() -> Self {
        Self {
            rational_part: BigRational::one(),
            sqrt2_part: BigRational::zero(),
        }
    }

    /// The generator √2 itself.
    pub fn sqrt2() -> Self {
        Self {
            rational_part: BigRational::zero(),
            sqrt2_part: BigRational::one(),
        }
    }

    pub fn from_int(v: i64) -> Self {
        Self::from_big_rational(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn from_bigint(v: BigInt) -> Self {
        Self::from_big_rational(BigRational::from_integer(v))
    }

    pub fn from_biguint(v: &BigUint) -> Self {
        Self::from_bigint(BigInt::from(v.clone()))
    }

    /// Rational `num/den`. Panics if `den == 0`.
    pub fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_big_rational(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_big_rational(r: BigRational) -> Self {
        Self {
            rational_part: r,
            sqrt2_part: BigRational::zero(),
        }
    }

    pub fn from_parts(rational_part: BigRational, sqrt2_part: BigRational) -> Self {
        Self {
            rational_part,
            sqrt2_part,
        }
    }

    pub fn rational_part(&self) -> &BigRational {
        &self.rational_part
    }

    pub fn sqrt2_part(&self) -> &BigRational {
        &self.sqrt2_part
    }

    pub fn is_zero(&self) -> bool {
        self.rational_part.is_zero() && self.sqrt2_part.is_zero()
    }

    pub fn is_rational(&self) -> bool {
        self.sqrt2_part.is_zero()
    }

    /// Exact rational value, if the √2 coordinate vanishes.
    pub fn as_rational(&self) -> Option<&BigRational> {
        self.is_rational().then_some(&self.rational_part)
    }

    /// Exact sign. When the two coordinates disagree in sign, the winner is
    /// decided by comparing `rational_part²` against `2·sqrt2_part²` in
    /// integer arithmetic.
    pub fn sign(&self) -> Ordering {
        let sa = rational_sign(&self.rational_part);
        let sb = rational_sign(&self.sqrt2_part);
        match (sa, sb) {
            (Ordering::Equal, s) | (s, Ordering::Equal) => s,
            (a, b) if a == b => a,
            (a, b) => {
                let a2 = &self.rational_part * &self.rational_part;
                let b2 = &self.sqrt2_part * &self.sqrt2_part * BigRational::from_integer(2.into());
                match a2.cmp(&b2) {
                    Ordering::Greater => a,
                    Ordering::Less => b,
                    // a² = 2b² with both nonzero would make √2 rational.
                    Ordering::Equal => unreachable!("sqrt(2) is irrational"),
                }
            }
        }
    }

    pub fn is_positive(&self) -> bool {
        self.sign() == Ordering::Greater
    }

    pub fn is_negative(&self) -> bool {
        self.sign() == Ordering::Less
    }

    pub fn abs(&self) -> Self {
        if self.is_negative() {
            -self
        } else {
            self.clone()
        }
    }

    /// Exact multiplicative inverse via the conjugate:
    /// `1/(a + b√2) = (a − b√2)/(a² − 2b²)`.
    pub fn recip(&self) -> Result<Self, NumericError> {
        if self.is_zero() {
            return Err(NumericError::DivisionByZero);
        }
        let two = BigRational::from_integer(2.into());
        let norm = &self.rational_part * &self.rational_part
            - &self.sqrt2_part * &self.sqrt2_part * two;
        // norm = 0 with a nonzero element would make √2 rational.
        debug_assert!(!norm.is_zero());
        Ok(Self {
            rational_part: &self.rational_part / &norm,
            sqrt2_part: -(&self.sqrt2_part / &norm),
        })
    }

    pub fn checked_div(&self, rhs: &Self) -> Result<Self, NumericError> {
        Ok(self * &rhs.recip()?)
    }

    /// Integer power; negative exponents require a nonzero base.
    pub fn pow(&self, exp: i64) -> Result<Self, NumericError> {
        if exp < 0 {
            return self.recip()?.pow(-exp);
        }
        let mut acc = Self::one();
        let mut base = self.clone();
        let mut e = exp as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Ok(acc)
    }

    /// Exact floor. For irrational values the candidate from a coarse
    /// approximation is verified exactly and nudged if needed.
    pub fn floor(&self) -> BigInt {
        if self.is_rational() {
            return self.rational_part.floor().to_integer();
        }
        let approx = self.to_approx(96);
        let mut candidate = approx.value().floor().to_integer();
        loop {
            let lo = Self::from_bigint(candidate.clone());
            if self < &lo {
                candidate -= 1;
                continue;
            }
            let hi = Self::from_bigint(&candidate + 1);
            if self >= &hi {
                candidate += 1;
                continue;
            }
            return candidate;
        }
    }

    /// Exact square root inside Q(√2), when one exists.
    pub fn sqrt_exact(&self) -> Option<Self> {
        match self.sign() {
            Ordering::Less => return None,
            Ordering::Equal => return Some(Self::zero()),
            Ordering::Greater => {}
        }
        // (a + b√2)² = a² + 2b² + 2ab√2.
        if self.sqrt2_part.is_zero() {
            let y = &self.rational_part;
            // Pure-rational root: a² = y.
            if let Some(a) = rational_sqrt(y) {
                return Some(Self::from_big_rational(a));
            }
            // Pure-√2 root: 2b² = y.
            let half = BigRational::new(BigInt::one(), 2.into());
            if let Some(b) = rational_sqrt(&(y * &half)) {
                return Some(Self::from_parts(BigRational::zero(), b));
            }
            return None;
        }
        // Mixed root: solve a² + 2b² = y1, 2ab = y2. Then a² is a root of
        // t² − y1·t + y2²/2 = 0.
        let y1 = &self.rational_part;
        let y2 = &self.sqrt2_part;
        let half = BigRational::new(BigInt::one(), 2.into());
        let disc = y1 * y1 - y2 * y2 * BigRational::from_integer(2.into());
        let disc_root = rational_sqrt(&disc)?;
        for root in [(y1 + &disc_root) * &half, (y1 - &disc_root) * &half] {
            if root.is_negative() {
                continue;
            }
            if let Some(a) = rational_sqrt(&root) {
                if a.is_zero() {
                    continue;
                }
                let b = y2 * &half / &a;
                let cand = Self::from_parts(a, b);
                if &(&cand * &cand) == self && cand.is_positive() {
                    return Some(cand);
                }
                let neg = -&cand;
                if &(&neg * &neg) == self && neg.is_positive() {
                    return Some(neg);
                }
            }
        }
        None
    }

    /// Exact `v`-th root inside Q(√2), when one exists. Handles rational
    /// radicands, pure √2 multiples, and (for powers of two) iterated
    /// square roots.
    pub fn nth_root_exact(&self, v: u32) -> Option<Self> {
        assert!(v >= 1);
        if v == 1 {
            return Some(self.clone());
        }
        if self.is_negative() {
            return None;
        }
        if v % 2 == 0 {
            return self.sqrt_exact()?.nth_root_exact(v / 2).or_else(|| {
                // Even root that is not an iterated square root of an exact
                // square does not exist in the field.
                None
            });
        }
        if self.is_zero() {
            return Some(Self::zero());
        }
        if self.sqrt2_part.is_zero() {
            if let Some(r) = rational_nth_root(&self.rational_part, v) {
                return Some(Self::from_big_rational(r));
            }
            return None;
        }
        if self.rational_part.is_zero() {
            // (b·√2)^v = b^v · 2^((v−1)/2) · √2 for odd v.
            let shift = BigRational::from_integer(BigInt::from(2).pow((v - 1) / 2));
            let b_pow = &self.sqrt2_part / shift;
            if let Some(b) = rational_nth_root(&b_pow, v) {
                return Some(Self::from_parts(BigRational::zero(), b));
            }
        }
        None
    }

    /// Exact rational power `x^(u/v)` inside Q(√2), when representable.
    pub fn pow_rational_exact(&self, u: i64, v: u32) -> Option<Self> {
        let base = self.pow(u).ok()?;
        base.nth_root_exact(v)
    }

    /// Certified conversion: the result interval always contains the true
    /// value and its width is below `2^(1−precision_bits)` relative to it.
    pub fn to_approx(&self, precision_bits: u32) -> ApproxScalar {
        let prec = precision_bits.max(16);
        if self.is_zero() {
            return ApproxScalar::exact_rational(BigRational::zero(), prec);
        }
        if self.is_rational() {
            let mut a = ApproxScalar::exact_rational(self.rational_part.clone(), prec);
            a.quantize();
            return a;
        }
        let mut extra = 8u32;
        loop {
            let n = prec + extra + bit_magnitude(&self.sqrt2_part).max(0) as u32;
            let (s2, s2err) = sqrt2_enclosure(n);
            let value = &self.rational_part + &self.sqrt2_part * &s2;
            let err = self.sqrt2_part.abs() * s2err;
            let mut a = ApproxScalar {
                value,
                error_bound: err,
                prec,
            };
            a.quantize();
            // Relative-precision check: err ≤ 2^(1−prec)·|value| with the
            // quantization already folded in.
            let target = pow2_rational(1 - prec as i64) * a.value.abs();
            if !a.error_bound.is_zero() && a.error_bound > target {
                extra = extra.saturating_mul(2).max(16);
                if extra > (1 << 24) {
                    return a; // pathological; return best effort
                }
                continue;
            }
            return a;
        }
    }

    /// Certified natural logarithm; requires a positive value.
    pub fn ln(&self, precision_bits: u32) -> Result<ApproxScalar, NumericError> {
        ln_exact_scalar(self, precision_bits)
    }

    /// Certified base-2 logarithm.
    pub fn log2(&self, precision_bits: u32) -> Result<ApproxScalar, NumericError> {
        let wp = precision_bits + 16;
        let nat = self.ln(wp)?;
        let l2 = ln2(wp);
        let mut r = nat.div(&l2)?;
        r.prec = precision_bits;
        r.quantize();
        Ok(r)
    }

    pub fn to_f64(&self) -> f64 {
        self.to_approx(64).to_f64()
    }

    /// Decimal rendering with `sig` significant digits, derived from a
    /// certified binary approximation wide enough to pin those digits.
    pub fn decimal(&self, sig: usize) -> String {
        let bits = (sig as u32) * 4 + 32;
        decimal_string(self.to_approx(bits).value(), sig)
    }
}

fn rational_sign(r: &BigRational) -> Ordering {
    if r.is_zero() {
        Ordering::Equal
    } else if r.is_positive() {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

/// Exact square root of a nonnegative rational, if rational.
fn rational_sqrt(r: &BigRational) -> Option<BigRational> {
    if r.is_negative() {
        return None;
    }
    if r.is_zero() {
        return Some(BigRational::zero());
    }
    let num = r.numer().magnitude();
    let den = r.denom().magnitude();
    let sn = num.sqrt();
    let sd = den.sqrt();
    if &(&sn * &sn) == num && &(&sd * &sd) == den {
        Some(BigRational::new(sn.into(), sd.into()))
    } else {
        None
    }
}

/// Exact v-th root of a rational, if rational. Handles signs for odd v.
fn rational_nth_root(r: &BigRational, v: u32) -> Option<BigRational> {
    if r.is_zero() {
        return Some(BigRational::zero());
    }
    if r.is_negative() && v % 2 == 0 {
        return None;
    }
    let num = r.numer().magnitude();
    let den = r.denom().magnitude();
    let rn = num.nth_root(v);
    let rd = den.nth_root(v);
    if rn.pow(v) == *num && rd.pow(v) == *den {
        let mut root = BigRational::new(rn.into(), rd.into());
        if r.is_negative() {
            root = -root;
        }
        Some(root)
    } else {
        None
    }
}

impl fmt::Debug for ExactScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}*sqrt2", self.rational_part, self.sqrt2_part)
    }
}

impl fmt::Display for ExactScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sqrt2_part.is_zero() {
            write!(f, "{}", self.rational_part)
        } else if self.rational_part.is_zero() {
            write!(f, "{}*sqrt2", self.sqrt2_part)
        } else {
            write!(f, "{} + {}*sqrt2", self.rational_part, self.sqrt2_part)
        }
    }
}

impl PartialOrd for ExactScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExactScalar {
    fn cmp(&self, other: &Self) -> Ordering {
        (self - other).sign()
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for ExactScalar {
            type Output = ExactScalar;
            fn $method(self, rhs: ExactScalar) -> ExactScalar {
                (&self).$method(&rhs)
            }
        }
        impl<'a> $trait<&'a ExactScalar> for ExactScalar {
            type Output = ExactScalar;
            fn $method(self, rhs: &'a ExactScalar) -> ExactScalar {
                (&self).$method(rhs)
            }
        }
        impl<'a> $trait<ExactScalar> for &'a ExactScalar {
            type Output = ExactScalar;
            fn $method(self, rhs: ExactScalar) -> ExactScalar {
                self.$method(&rhs)
            }
        }
    };
}

impl<'a, 'b> Add<&'b ExactScalar> for &'a ExactScalar {
    type Output = ExactScalar;
    fn add(self, rhs: &'b ExactScalar) -> ExactScalar {
        ExactScalar {
            rational_part: &self.rational_part + &rhs.rational_part,
            sqrt2_part: &self.sqrt2_part + &rhs.sqrt2_part,
        }
    }
}
forward_binop!(Add, add);

impl<'a, 'b> Sub<&'b ExactScalar> for &'a ExactScalar {
    type Output = ExactScalar;
    fn sub(self, rhs: &'b ExactScalar) -> ExactScalar {
        ExactScalar {
            rational_part: &self.rational_part - &rhs.rational_part,
            sqrt2_part: &self.sqrt2_part - &rhs.sqrt2_part,
        }
    }
}
forward_binop!(Sub, sub);

impl<'a, 'b> Mul<&'b ExactScalar> for &'a ExactScalar {
    type Output = ExactScalar;
    fn mul(self, rhs: &'b ExactScalar) -> ExactScalar {
        let two = BigRational::from_integer(2.into());
        ExactScalar {
            rational_part: &self.rational_part * &rhs.rational_part
                + (&self.sqrt2_part * &rhs.sqrt2_part) * two,
            sqrt2_part: &self.rational_part * &rhs.sqrt2_part
                + &self.sqrt2_part * &rhs.rational_part,
        }
    }
}
forward_binop!(Mul, mul);

impl<'a, 'b> Div<&'b ExactScalar> for &'a ExactScalar {
    type Output = ExactScalar;
    /// Panics on a zero divisor; use [`ExactScalar::checked_div`] for the
    /// fallible form.
    fn div(self, rhs: &'b ExactScalar) -> ExactScalar {
        self.checked_div(rhs).expect("exact division by zero")
    }
}
forward_binop!(Div, div);

impl Neg for &ExactScalar {
    type Output = ExactScalar;
    fn neg(self) -> ExactScalar {
        ExactScalar {
            rational_part: -&self.rational_part,
            sqrt2_part: -&self.sqrt2_part,
        }
    }
}

impl Neg for ExactScalar {
    type Output = ExactScalar;
    fn neg(self) -> ExactScalar {
        -&self
    }
}

impl serde::Serialize for ExactScalar {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = ser.serialize_struct("ExactScalar", 2)?;
        s.serialize_field("rat", &format!("{}", self.rational_part))?;
        s.serialize_field("sqrt2", &format!("{}", self.sqrt2_part))?;
        s.end()
    }
}

impl<'de> serde::Deserialize<'de> for ExactScalar {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        struct Raw {
            rat: String,
            sqrt2: String,
        }
        let raw = Raw::deserialize(de)?;
        let parse = |s: &str| -> Result<BigRational, String> {
            s.parse::<BigRational>().map_err(|e| format!("{e}: {s}"))
        };
        Ok(ExactScalar::from_parts(
            parse(&raw.rat).map_err(serde::de::Error::custom)?,
            parse(&raw.sqrt2).map_err(serde::de::Error::custom)?,
        ))
    }
}

/// A certified value: the true quantity lies in
/// `[value − error_bound, value + error_bound]`.
#[derive(Clone, Debug)]
pub struct ApproxScalar {
    value: BigRational,
    error_bound: BigRational,
    prec: u32,
}

impl ApproxScalar {
    pub fn exact_rational(value: BigRational, prec: u32) -> Self {
        Self {
            value,
            error_bound: BigRational::zero(),
            prec,
        }
    }

    pub fn from_parts(value: BigRational, error_bound: BigRational, prec: u32) -> Self {
        assert!(!error_bound.is_negative());
        Self {
            value,
            error_bound,
            prec,
        }
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    pub fn error_bound(&self) -> &BigRational {
        &self.error_bound
    }

    pub fn precision_bits(&self) -> u32 {
        self.prec
    }

    pub fn lower(&self) -> BigRational {
        &self.value - &self.error_bound
    }

    pub fn upper(&self) -> BigRational {
        &self.value + &self.error_bound
    }

    pub fn is_exact(&self) -> bool {
        self.error_bound.is_zero()
    }

    /// True when the whole interval sits strictly below `other`'s interval.
    pub fn certainly_lt(&self, other: &Self) -> bool {
        self.upper() < other.lower()
    }

    pub fn certainly_le(&self, other: &Self) -> bool {
        self.upper() <= other.lower()
    }

    /// True when the interval certainly contains the exact rational `r`.
    pub fn contains_rational(&self, r: &BigRational) -> bool {
        &self.lower() <= r && r <= &self.upper()
    }

    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }

    /// Snap the value to roughly `prec + 32` significant bits and fold the
    /// rounding slack into the error bound, keeping rationals compact.
    fn quantize(&mut self) {
        let keep = self.prec as i64 + 32;
        let mag = bit_magnitude(&self.value);
        let shift = keep - mag;
        if rational_bits(&self.value) <= 2 * keep as u64 + 64 {
            self.round_error();
            return;
        }
        let rounded = round_to_shift(&self.value, shift);
        let slack = (&self.value - &rounded).abs();
        self.value = rounded;
        self.error_bound += slack;
        self.round_error();
    }

    /// Round the error bound itself up to a short dyadic, so it never grows
    /// into a big rational.
    fn round_error(&mut self) {
        if self.error_bound.is_zero() {
            return;
        }
        if rational_bits(&self.error_bound) <= 128 {
            return;
        }
        let mag = bit_magnitude(&self.error_bound);
        let shift = 64 - mag;
        let scaled = &self.error_bound * pow2_rational(shift);
        let up = scaled.ceil();
        self.error_bound = up * pow2_rational(-shift);
    }

    pub fn neg(&self) -> Self {
        Self {
            value: -&self.value,
            error_bound: self.error_bound.clone(),
            prec: self.prec,
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let mut r = Self {
            value: &self.value + &rhs.value,
            error_bound: &self.error_bound + &rhs.error_bound,
            prec: self.prec.min(rhs.prec),
        };
        r.quantize();
        r
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let err = self.value.abs() * &rhs.error_bound
            + rhs.value.abs() * &self.error_bound
            + &self.error_bound * &rhs.error_bound;
        let mut r = Self {
            value: &self.value * &rhs.value,
            error_bound: err,
            prec: self.prec.min(rhs.prec),
        };
        r.quantize();
        r
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        let mut r = Self {
            value: &self.value * c,
            error_bound: &self.error_bound * c.abs(),
            prec: self.prec,
        };
        r.quantize();
        r
    }

    pub fn recip(&self) -> Result<Self, NumericError> {
        let lo = self.lower();
        let hi = self.upper();
        if (lo.is_negative() || lo.is_zero()) && (!hi.is_negative() || hi.is_zero()) {
            return Err(NumericError::UncertainDivisor);
        }
        if lo.is_negative() != hi.is_negative() {
            return Err(NumericError::UncertainDivisor);
        }
        let m = lo.abs().min(hi.abs());
        if m.is_zero() {
            return Err(NumericError::UncertainDivisor);
        }
        let err = &self.error_bound / (self.value.abs() * &m);
        let mut r = Self {
            value: self.value.recip(),
            error_bound: err,
            prec: self.prec,
        };
        r.quantize();
        Ok(r)
    }

    pub fn div(&self, rhs: &Self) -> Result<Self, NumericError> {
        Ok(self.mul(&rhs.recip()?))
    }

    pub fn abs(&self) -> Self {
        Self {
            value: self.value.abs(),
            error_bound: self.error_bound.clone(),
            prec: self.prec,
        }
    }

    pub fn pow_i(&self, exp: u64) -> Self {
        let mut acc = Self::exact_rational(BigRational::one(), self.prec);
        let mut base = self.clone();
        let mut e = exp;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// Certified `v`-th root of a certainly-positive interval.
    pub fn nth_root(&self, v: u32) -> Result<Self, NumericError> {
        assert!(v >= 1);
        if v == 1 {
            return Ok(self.clone());
        }
        let lo = self.lower();
        let hi = self.upper();
        if lo.is_negative() {
            return Err(NumericError::RootOfNegative);
        }
        let bits = self.prec + 16;
        let (rlo, _) = rational_nth_root_enclosure(&lo, v, bits);
        let (_, rhi) = rational_nth_root_enclosure(&hi, v, bits);
        let half = BigRational::new(BigInt::one(), 2.into());
        let mid = (&rlo + &rhi) * &half;
        let rad = (&rhi - &rlo) * &half;
        let mut r = Self {
            value: mid,
            error_bound: rad,
            prec: self.prec,
        };
        r.quantize();
        Ok(r)
    }

    /// Certified rational power `x^(u/v)` of a certainly-positive interval.
    pub fn pow_rational(&self, u: i64, v: u32) -> Result<Self, NumericError> {
        let base = if u < 0 {
            self.recip()?.pow_i((-u) as u64)
        } else {
            self.pow_i(u as u64)
        };
        base.nth_root(v)
    }

    /// Decimal rendering of the central value.
    pub fn decimal(&self, sig: usize) -> String {
        decimal_string(&self.value, sig)
    }
}

impl serde::Serialize for ApproxScalar {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = ser.serialize_struct("ApproxScalar", 2)?;
        s.serialize_field("value", &self.decimal(30))?;
        s.serialize_field("error_bound", &decimal_string(&self.error_bound, 3))?;
        s.end()
    }
}

/// Bit-length magnitude estimate: `floor(log2 |r|)` within ±1.
fn bit_magnitude(r: &BigRational) -> i64 {
    if r.is_zero() {
        return 0;
    }
    r.numer().magnitude().bits() as i64 - r.denom().magnitude().bits() as i64
}

fn rational_bits(r: &BigRational) -> u64 {
    r.numer().magnitude().bits() + r.denom().magnitude().bits()
}

pub(crate) fn pow2_rational(e: i64) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(BigInt::one() << e as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-e) as usize)
    }
}

/// Round `r` to the grid `2^(−shift)·Z` (nearest, ties toward zero).
fn round_to_shift(r: &BigRational, shift: i64) -> BigRational {
    let scaled = r * pow2_rational(shift);
    let rounded = scaled.round();
    rounded * pow2_rational(-shift)
}

/// Certified enclosure of √2 with error at most `2^(−bits)`.
fn sqrt2_enclosure(bits: u32) -> (BigRational, BigRational) {
    let two_scaled = BigUint::from(2u32) << (2 * bits as usize);
    let s = two_scaled.sqrt();
    // s ≤ √2·2^bits < s+1
    let value = BigRational::new(BigInt::from(s), BigInt::one() << bits as usize);
    (value, pow2_rational(-(bits as i64)))
}

/// Enclosure `[lo, hi]` of `r^(1/v)` for nonnegative rational `r`, with
/// width about `2^(1−bits)`.
fn rational_nth_root_enclosure(r: &BigRational, v: u32, bits: u32) -> (BigRational, BigRational) {
    if r.is_zero() {
        return (BigRational::zero(), BigRational::zero());
    }
    debug_assert!(r.is_positive());
    let s = bits as usize;
    // z = floor(num·2^{v·s}/den) gives z^(1/v) ∈ [x^(1/v)·2^s − 1, x^(1/v)·2^s].
    let num = r.numer().magnitude() << (v as usize * s);
    let den = r.denom().magnitude();
    let z = num.div_floor(den);
    let root = z.nth_root(v);
    let lo = BigRational::new(BigInt::from(root.clone()), BigInt::one() << s);
    let hi = BigRational::new(BigInt::from(root + BigUint::from(2u32)), BigInt::one() << s);
    (lo, hi)
}

/// Certified natural logarithm of 2, memoized per precision.
pub fn ln2(precision_bits: u32) -> ApproxScalar {
    static CACHE: Mutex<Option<HashMap<u32, (BigRational, BigRational)>>> = Mutex::new(None);
    let mut guard = CACHE.lock().unwrap();
    let map = guard.get_or_insert_with(HashMap::new);
    if let Some((v, e)) = map.get(&precision_bits) {
        return ApproxScalar::from_parts(v.clone(), e.clone(), precision_bits);
    }
    // ln 2 = 2·atanh(1/3).
    let third = BigRational::new(BigInt::one(), 3.into());
    let a = atanh_series(
        &ApproxScalar::exact_rational(third, precision_bits + 16),
        precision_bits + 16,
    );
    let mut r = a.scale(&BigRational::from_integer(2.into()));
    r.prec = precision_bits;
    r.quantize();
    map.insert(precision_bits, (r.value.clone(), r.error_bound.clone()));
    r
}

/// atanh(t) = Σ t^(2i+1)/(2i+1) for |t| ≤ 1/3 + slack, with the series
/// remainder added to the certified error.
fn atanh_series(t: &ApproxScalar, wp: u32) -> ApproxScalar {
    let t_hi = t.upper().abs().max(t.lower().abs());
    debug_assert!(t_hi < BigRational::new(2.into(), 5.into()));
    // Terms decay at least by t² ≤ 0.16 per step; bound the count from wp.
    let steps = (wp as usize) / 2 + 8;
    let t2 = t.mul(t);
    let mut term = t.clone();
    let mut acc = t.clone();
    for i in 1..=steps {
        term = term.mul(&t2);
        let denom = BigRational::from_integer(BigInt::from(2 * i as i64 + 1));
        acc = acc.add(&term.scale(&denom.recip()));
    }
    // Remainder after the last kept term: Σ_{i>steps} t^(2i+1)/(2i+1)
    // ≤ t_hi^(2·steps+3) / ((2·steps+3)(1−t_hi²)).
    let mut rem_num = BigRational::one();
    let mut base = &t_hi * &t_hi;
    let mut e = steps as u64 + 1;
    let mut acc_pow = BigRational::one();
    while e > 0 {
        if e & 1 == 1 {
            acc_pow *= &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    rem_num *= acc_pow; // t_hi^(2·steps+2)
    rem_num *= &t_hi; // t_hi^(2·steps+3)
    let one_minus = BigRational::one() - &t_hi * &t_hi;
    let remainder = rem_num / (BigRational::from_integer(BigInt::from(2 * steps as i64 + 3)) * one_minus);
    let mut out = acc;
    out.error_bound += remainder;
    out.round_error();
    out
}

/// Natural logarithm of a positive exact scalar with certified error:
/// reduce to `x = m·2^e` with `m ∈ [1,2)`, then `ln m = 2·atanh((m−1)/(m+1))`.
fn ln_exact_scalar(x: &ExactScalar, precision_bits: u32) -> Result<ApproxScalar, NumericError> {
    if precision_bits < 16 {
        return Err(NumericError::PrecisionTooLow(precision_bits));
    }
    if !x.is_positive() {
        return Err(NumericError::LogNonpositive);
    }
    let wp = precision_bits + 32;
    let e = binary_exponent(x);
    let m = x
        .checked_div(&ExactScalar::from_big_rational(pow2_rational(e)))
        .expect("power of two is nonzero");
    debug_assert!(m >= ExactScalar::one() && m < ExactScalar::from_int(2));
    let num = &m - &ExactScalar::one();
    let den = &m + &ExactScalar::one();
    let t = num.checked_div(&den).expect("m + 1 > 0");
    let t_approx = t.to_approx(wp);
    let a = atanh_series(&t_approx, wp);
    let mut out = a.scale(&BigRational::from_integer(2.into()));
    if e != 0 {
        let l2 = ln2(wp);
        out = out.add(&l2.scale(&BigRational::from_integer(BigInt::from(e))));
    }
    out.prec = precision_bits;
    out.quantize();
    Ok(out)
}

/// Largest `e` with `2^e ≤ x`, found from a coarse estimate and verified by
/// exact comparisons.
fn binary_exponent(x: &ExactScalar) -> i64 {
    debug_assert!(x.is_positive());
    let mut e = if x.is_rational() {
        bit_magnitude(x.rational_part())
    } else {
        let approx = x.to_approx(32);
        bit_magnitude(approx.value())
    };
    loop {
        let lo = ExactScalar::from_big_rational(pow2_rational(e));
        if x < &lo {
            e -= 1;
            continue;
        }
        let hi = ExactScalar::from_big_rational(pow2_rational(e + 1));
        if x >= &hi {
            e += 1;
            continue;
        }
        return e;
    }
}

/// Decimal string with `sig` significant digits (scientific form when far
/// from unit scale), deterministic for a given rational.
pub fn decimal_string(r: &BigRational, sig: usize) -> String {
    if r.is_zero() {
        return "0".to_string();
    }
    let neg = r.is_negative();
    let x = r.abs();
    // Decimal exponent: largest d with 10^d ≤ x.
    let mut d: i64 = (bit_magnitude(&x) as f64 * 0.30103) as i64;
    let ten = BigRational::from_integer(10.into());
    let pow10 = |k: i64| -> BigRational {
        let mag = BigInt::from(10u32).pow(k.unsigned_abs() as u32);
        if k >= 0 {
            BigRational::from_integer(mag)
        } else {
            BigRational::new(BigInt::one(), mag)
        }
    };
    while x < pow10(d) {
        d -= 1;
    }
    while x >= pow10(d + 1) {
        d += 1;
    }
    // Round x / 10^(d−sig+1) to an integer of `sig` digits.
    let scaled = &x * pow10(-(d - sig as i64 + 1));
    let mut digits = scaled.round().to_integer();
    let cap = BigInt::from(10u32).pow(sig as u32);
    let mut d_adj = d;
    if digits >= cap {
        digits /= BigInt::from(10u32);
        d_adj += 1;
    }
    let ds = digits.to_string();
    let mut s = String::new();
    if neg {
        s.push('-');
    }
    if (-4..sig as i64).contains(&d_adj) {
        if d_adj >= 0 {
            let point = (d_adj + 1) as usize;
            s.push_str(&ds[..point.min(ds.len())]);
            if point < ds.len() {
                s.push('.');
                s.push_str(&ds[point..]);
            }
        } else {
            s.push_str("0.");
            for _ in 0..(-d_adj - 1) {
                s.push('0');
            }
            s.push_str(&ds);
        }
        let _ = &ten;
        trim_zeros(&mut s);
    } else {
        s.push_str(&ds[..1]);
        if ds.len() > 1 {
            s.push('.');
            s.push_str(&ds[1..]);
        }
        trim_zeros(&mut s);
        s.push('e');
        s.push_str(&d_adj.to_string());
    }
    s
}

fn trim_zeros(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn es(r: i64, q: i64, s: i64, t: i64) -> ExactScalar {
        ExactScalar::from_parts(
            BigRational::new(r.into(), q.into()),
            BigRational::new(s.into(), t.into()),
        )
    }

    #[test]
    fn reciprocal_of_one_plus_sqrt2() {
        let x = es(1, 1, 1, 1);
        let r = x.recip().unwrap();
        assert_eq!(r, es(-1, 1, 1, 1));
        assert_eq!(&r * &x, ExactScalar::one());
    }

    #[test]
    fn reciprocal_of_four_plus_sqrt2() {
        let x = es(4, 1, 1, 1);
        let r = x.recip().unwrap();
        assert_eq!(r, es(2, 7, -1, 14));
        // Independent big-rational check that (2/7 − (1/14)√2)(4 + √2) = 1:
        // (a + b√2)(c + d√2) = ac + 2bd + (ad + bc)√2 evaluated directly.
        let (a, b) = (
            BigRational::new(2.into(), 7.into()),
            BigRational::new((-1).into(), 14.into()),
        );
        let (c, d) = (
            BigRational::from_integer(4.into()),
            BigRational::from_integer(1.into()),
        );
        let rat = &a * &c + BigRational::from_integer(2.into()) * &b * &d;
        let irr = &a * &d + &b * &c;
        assert_eq!(rat, BigRational::one());
        assert!(irr.is_zero());
    }

    #[test]
    fn reciprocal_of_twelve() {
        // 8 + 4 = 8 + 2·(√2)² arises as a level denominator; it is rational.
        let x = ExactScalar::from_int(12);
        let r = x.recip().unwrap();
        assert_eq!(r, ExactScalar::from_ratio(1, 12));
        assert_eq!(&r * &ExactScalar::from_int(12), ExactScalar::one());
    }

    #[test]
    fn ordering_examples() {
        assert!(ExactScalar::one() < ExactScalar::sqrt2());
        let seven = ExactScalar::from_int(7);
        let five_rt = &ExactScalar::from_int(5) * &ExactScalar::sqrt2();
        assert!(seven < five_rt); // 49 < 50
        let x = es(3, 2, -5, 7);
        assert_eq!(x.cmp(&x), Ordering::Equal);
    }

    #[test]
    fn floor_of_irrational() {
        let x = es(0, 1, 1, 1); // √2
        assert_eq!(x.floor(), BigInt::from(1));
        let y = es(-1, 1, -1, 1); // −1 − √2 ≈ −2.41
        assert_eq!(y.floor(), BigInt::from(-3));
        let z = es(10, 1, 0, 1);
        assert_eq!(z.floor(), BigInt::from(10));
    }

    #[test]
    fn to_approx_half_is_exact() {
        let a = ExactScalar::from_ratio(1, 2).to_approx(64);
        assert_eq!(a.value(), &BigRational::new(1.into(), 2.into()));
        assert!(a.error_bound().is_zero());
    }

    #[test]
    fn to_approx_sqrt2_matches_integer_sqrt_oracle() {
        // Oracle: isqrt(2·4^40)/2^40 approximates √2 within 2^−40.
        let scaled = BigUint::from(2u32) << 80;
        let s = scaled.sqrt();
        let oracle = BigRational::new(BigInt::from(s), BigInt::one() << 40);
        let a = ExactScalar::sqrt2().to_approx(64);
        let diff = (a.value() - &oracle).abs();
        assert!(diff < pow2_rational(-38));
        // And the stated relative bound.
        let rel = a.error_bound() / a.value();
        assert!(rel <= pow2_rational(-63));
    }

    #[test]
    fn to_approx_conjugate_value() {
        // (4 − √2)/14 ≈ 0.18470
        let x = es(4, 14, -1, 14);
        let a = x.to_approx(64);
        let f = a.to_f64();
        assert!((f - 0.184_701_888_7).abs() < 1e-9);
    }

    #[test]
    fn ln_of_one_is_zero() {
        let a = ExactScalar::one().ln(64).unwrap();
        assert!(a.value().is_zero());
        assert!(a.error_bound().is_zero() || a.error_bound() < &pow2_rational(-60));
    }

    // 50-digit references for ln 3 and ln 2, used as independent oracles.
    const LN3: &str = "1.0986122886681096913952452369225257046474905578227";
    const LN2: &str = "0.69314718055994530941723212145817656807550013436026";

    fn parse_decimal(s: &str) -> BigRational {
        let (int_part, frac_part) = s.split_once('.').unwrap();
        let digits: String = format!("{int_part}{frac_part}");
        let num: BigInt = digits.parse().unwrap();
        let den = BigInt::from(10u32).pow(frac_part.len() as u32);
        BigRational::new(num, den)
    }

    #[test]
    fn ln_one_third_matches_tabulated() {
        let a = ExactScalar::from_ratio(1, 3).ln(96).unwrap();
        let oracle = -parse_decimal(LN3);
        let diff = (a.value() - &oracle).abs();
        assert!(diff <= a.error_bound() + pow2_rational(-90));
        assert!(a.error_bound() < &pow2_rational(-80));
    }

    #[test]
    fn ln2_matches_tabulated() {
        let a = ln2(128);
        let oracle = parse_decimal(LN2);
        assert!((a.value() - &oracle).abs() <= a.error_bound() + pow2_rational(-120));
    }

    #[test]
    fn ln_of_four_plus_sqrt2() {
        let x = es(4, 1, 1, 1);
        let a = x.ln(128).unwrap();
        let f = a.to_f64();
        assert!((f - 1.688_994_561_2).abs() < 1e-9, "got {f}");
    }

    #[test]
    fn log_rejects_nonpositive() {
        assert!(matches!(
            ExactScalar::zero().ln(64),
            Err(NumericError::LogNonpositive)
        ));
        assert!(matches!(
            es(-1, 1, 0, 1).ln(64),
            Err(NumericError::LogNonpositive)
        ));
    }

    #[test]
    fn exact_sqrt_cases() {
        // √(1/2) = (1/2)√2
        let r = ExactScalar::from_ratio(1, 2).sqrt_exact().unwrap();
        assert_eq!(r, es(0, 1, 1, 2));
        // √(9/4) = 3/2
        let r = ExactScalar::from_ratio(9, 4).sqrt_exact().unwrap();
        assert_eq!(r, ExactScalar::from_ratio(3, 2));
        // √(3 + 2√2) = 1 + √2
        let x = es(3, 1, 2, 1);
        assert_eq!(x.sqrt_exact().unwrap(), es(1, 1, 1, 1));
        // √3 has no representation in the field.
        assert!(ExactScalar::from_int(3).sqrt_exact().is_none());
    }

    #[test]
    fn exact_rational_powers() {
        // (1/32)^(4/5) = ((1/32)^(1/5))^4 = (1/2)^4 = 1/16
        let x = ExactScalar::from_ratio(1, 32);
        assert_eq!(
            x.pow_rational_exact(4, 5).unwrap(),
            ExactScalar::from_ratio(1, 16)
        );
        assert!(ExactScalar::from_ratio(1, 3).pow_rational_exact(1, 2).is_none());
    }

    #[test]
    fn certified_nth_root_contains_truth() {
        let x = ApproxScalar::exact_rational(BigRational::from_integer(2.into()), 96);
        let r = x.nth_root(2).unwrap();
        let s2 = ExactScalar::sqrt2().to_approx(160);
        assert!((r.value() - s2.value()).abs() <= r.error_bound() + s2.error_bound());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(decimal_string(&BigRational::new(1.into(), 3.into()), 5), "0.33333");
        assert_eq!(decimal_string(&BigRational::from_integer(1200.into()), 3), "1200");
        assert_eq!(
            decimal_string(&BigRational::new(1.into(), 40000.into()), 4),
            "0.000025"
        );
    }

    fn arb_scalar() -> impl Strategy<Value = ExactScalar> {
        (
            -50i64..50,
            1i64..20,
            -50i64..50,
            1i64..20,
        )
            .prop_map(|(a, b, c, d)| es(a, b, c, d))
    }

    proptest! {
        #[test]
        fn field_axioms(x in arb_scalar(), y in arb_scalar(), z in arb_scalar()) {
            prop_assert_eq!(&(&x + &y) + &z, &x + &(&y + &z));
            prop_assert_eq!(&x * &(&y + &z), &(&x * &y) + &(&x * &z));
            prop_assert_eq!(&(&x * &y) * &z, &x * &(&y * &z));
            if !x.is_zero() {
                prop_assert_eq!(&x * &x.recip().unwrap(), ExactScalar::one());
            }
        }

        #[test]
        fn cmp_agrees_with_disjoint_approx(x in arb_scalar(), y in arb_scalar()) {
            let ax = x.to_approx(80);
            let ay = y.to_approx(80);
            if ax.certainly_lt(&ay) {
                prop_assert!(x < y);
            } else if ay.certainly_lt(&ax) {
                prop_assert!(y < x);
            }
        }

        #[test]
        fn interval_arithmetic_sound(x in arb_scalar(), y in arb_scalar()) {
            // Composite expression evaluated both exactly and in certified
            // arithmetic; the interval must contain the exact value.
            let exact = &(&x * &y) + &(&x - &y);
            let ax = x.to_approx(64);
            let ay = y.to_approx(64);
            let approx = ax.mul(&ay).add(&ax.sub(&ay));
            let diff = exact - ExactScalar::from_big_rational(approx.value().clone());
            prop_assert!(diff.abs() <= ExactScalar::from_big_rational(approx.error_bound().clone()));
        }

        #[test]
        fn ln_product_rule(x in 1i64..60, y in 1i64..60) {
            let a = ExactScalar::from_int(x).ln(96).unwrap();
            let b = ExactScalar::from_int(y).ln(96).unwrap();
            let ab = ExactScalar::from_int(x * y).ln(96).unwrap();
            let sum = a.add(&b);
            let diff = (sum.value() - ab.value()).abs();
            prop_assert!(diff <= sum.error_bound() + ab.error_bound());
        }
    }
}
