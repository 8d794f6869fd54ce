//! Arbitrary-precision arithmetic context, decimal-string I/O and stage presets.
//!
//! Every numeric routine in the crate receives a [`Context`] (or a
//! [`PrecisionConfig`], which carries one) instead of picking a precision on
//! its own. Values are MPFR floats; all persistence goes through decimal
//! strings so files are portable bit-for-bit.

use std::fmt;
use std::str::FromStr;

use rug::float::Special;
use rug::ops::PowAssign;
use rug::{Assign, Float};
use thiserror::Error;

/// Arbitrary-precision real number used throughout the crate.
pub type Real = Float;

/// Smallest decimal precision any pipeline stage may run at.
pub const MIN_DIGITS: u32 = 16;

/// Smallest admissible Taylor order.
pub const MIN_ORDER: usize = 4;

const GUARD_BITS: u32 = 8;

/// Approximate Taylor-order-per-digit ratio of the full-scale presets
/// (154/134, 220/192, 264/231 all sit near 1.15).
pub const ORDER_PER_DIGIT: f64 = 1.15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrecisionError {
    #[error("decimal precision {0} is below the minimum of {MIN_DIGITS} digits")]
    DigitsTooSmall(u32),
    #[error("taylor order {0} is below the minimum of {MIN_ORDER}")]
    OrderTooSmall(usize),
    #[error("malformed decimal at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("invalid precision config: {0}")]
    InvalidConfig(String),
}

/// Immutable arithmetic context: a decimal precision and the binary mantissa
/// width derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Context {
    digits: u32,
    bits: u32,
}

/// Mantissa bits needed to carry `digits` decimal digits, without guard bits.
pub fn bits_for_digits(digits: u32) -> u32 {
    (f64::from(digits) * std::f64::consts::LOG2_10).ceil() as u32
}

impl Context {
    pub fn new(digits: u32) -> Result<Self, PrecisionError> {
        if digits < MIN_DIGITS {
            return Err(PrecisionError::DigitsTooSmall(digits));
        }
        Ok(Self {
            digits,
            bits: bits_for_digits(digits) + GUARD_BITS,
        })
    }

    pub fn digits(&self) -> u32 {
        self.digits
    }

    /// Mantissa width in bits, guard bits included.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn real<T>(&self, value: T) -> Real
    where
        Float: Assign<T>,
    {
        Float::with_val(self.bits, value)
    }

    pub fn zero(&self) -> Real {
        Float::new(self.bits)
    }

    pub fn one(&self) -> Real {
        self.real(1)
    }

    pub fn infinity(&self) -> Real {
        Float::with_val(self.bits, Special::Infinity)
    }

    /// `10^exp` at this precision.
    pub fn pow10(&self, exp: i32) -> Real {
        let mut x = self.real(10);
        x.pow_assign(exp);
        x
    }

    /// Re-round `x` into this context.
    pub fn convert(&self, x: &Real) -> Real {
        Float::with_val(self.bits, x)
    }

    pub fn parse(&self, text: &str) -> Result<Real, PrecisionError> {
        parse_decimal(text, self)
    }
}

pub fn make_context(decimal_digits: u32) -> Result<Context, PrecisionError> {
    Context::new(decimal_digits)
}

/// Checks `[+-]?digits[.digits][(e|E)[+-]?digits]` and returns the offending
/// character position otherwise.
fn validate_decimal(text: &str) -> Result<(), PrecisionError> {
    let err = |position: usize, message: &str| PrecisionError::Parse {
        position,
        message: message.to_string(),
    };
    let bytes = text.as_bytes();
    if bytes.is_empty() {
        return Err(err(0, "empty input"));
    }
    let mut i = 0;
    if matches!(bytes[0], b'+' | b'-') {
        i += 1;
    }
    let mut mantissa_digits = 0;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
        mantissa_digits += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
            mantissa_digits += 1;
        }
    }
    if mantissa_digits == 0 {
        return Err(err(i, "expected a digit"));
    }
    if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
        i += 1;
        if i < bytes.len() && matches!(bytes[i], b'+' | b'-') {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(err(i, "expected exponent digits"));
        }
    }
    if i != bytes.len() {
        return Err(err(i, "unexpected character"));
    }
    Ok(())
}

/// Parses a signed decimal string (optional exponent) at the context precision.
pub fn parse_decimal(text: &str, ctx: &Context) -> Result<Real, PrecisionError> {
    let text = text.trim();
    validate_decimal(text)?;
    let parsed = Float::parse(text).map_err(|e| PrecisionError::Parse {
        position: 0,
        message: e.to_string(),
    })?;
    Ok(Float::with_val(ctx.bits, parsed))
}

/// Formats `x` correctly rounded to `digits` significant decimal digits.
///
/// Moderate magnitudes are written positionally (`-2.5000`, `0.3333`), very
/// large or very small ones as `d.ddd…e±X`. Non-finite values come out as
/// `inf`, `-inf` or `nan`.
pub fn format_decimal(x: &Real, digits: usize) -> String {
    let digits = digits.max(1);
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x.is_sign_negative() { "-inf" } else { "inf" }.into();
    }
    if x.is_zero() {
        let mut s = String::from("0");
        if digits > 1 {
            s.push('.');
            s.extend(std::iter::repeat_n('0', digits - 1));
        }
        return s;
    }
    let (negative, mantissa, exp) = x.to_sign_string_exp(10, Some(digits));
    // value = 0.mantissa * 10^exp
    let exp = exp.unwrap_or(0);
    let mut out = String::with_capacity(digits + 8);
    if negative {
        out.push('-');
    }
    let n = mantissa.len() as i32;
    if (-8..=n).contains(&exp) {
        if exp <= 0 {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp) as usize));
            out.push_str(&mantissa);
        } else {
            let (int_part, frac_part) = mantissa.split_at(exp as usize);
            out.push_str(int_part);
            if !frac_part.is_empty() {
                out.push('.');
                out.push_str(frac_part);
            }
        }
    } else {
        let (lead, rest) = mantissa.split_at(1);
        out.push_str(lead);
        if !rest.is_empty() {
            out.push('.');
            out.push_str(rest);
        }
        out.push('e');
        out.push_str(&(exp - 1).to_string());
    }
    out
}

/// Like [`format_decimal`] but drops trailing fractional zeros; used for grid
/// coordinates, which are short exact decimals.
pub fn format_trimmed(x: &Real, digits: usize) -> String {
    let s = format_decimal(x, digits);
    if s.contains('e') || !s.contains('.') {
        return s;
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if trimmed == "-0" {
        "0".into()
    } else {
        trimmed.to_string()
    }
}

/// `floor(-log10(|x|))` clamped to `[0, cap]`; zero maps to `cap`.
pub fn neg_log10_floor(x: &Real, cap: u32) -> u32 {
    if x.is_zero() {
        return cap;
    }
    if !x.is_finite() {
        return 0;
    }
    let (m, e) = x.to_f64_exp();
    let log10 = (m.abs().log2() + f64::from(e)) * std::f64::consts::LOG10_2;
    let v = (-log10).floor();
    if v <= 0.0 {
        0
    } else {
        (v as u32).min(cap)
    }
}

/// log10 of |x| as an f64, for magnitude comparisons far outside f64 range.
pub fn log10_abs(x: &Real) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let (m, e) = x.to_f64_exp();
    (m.abs().log2() + f64::from(e)) * std::f64::consts::LOG10_2
}

/// Working precision and Taylor settings for one pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionConfig {
    pub decimal_digits: u32,
    pub taylor_order: usize,
    /// Residual-norm tolerance of the stage, as a decimal string.
    pub convergence_tol: String,
    /// Fraction of the estimated admissible step actually taken, in (0,1).
    pub step_safety: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Any pairwise distance below this aborts integration as a collision.
    pub collision_distance: f64,
}

impl PrecisionConfig {
    pub const DEFAULT_STEP_SAFETY: f64 = 0.5;
    pub const DEFAULT_H_MIN: f64 = 1e-8;
    pub const DEFAULT_H_MAX: f64 = 1.0;
    pub const DEFAULT_COLLISION_DISTANCE: f64 = 1e-6;

    /// Config with the default step controls and a residual tolerance of
    /// half the working digits.
    pub fn new(decimal_digits: u32, taylor_order: usize) -> Result<Self, PrecisionError> {
        let cfg = Self {
            decimal_digits,
            taylor_order,
            convergence_tol: format!("1e-{}", decimal_digits / 2),
            step_safety: Self::DEFAULT_STEP_SAFETY,
            h_min: Self::DEFAULT_H_MIN,
            h_max: Self::DEFAULT_H_MAX,
            collision_distance: Self::DEFAULT_COLLISION_DISTANCE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tol(mut self, tol: &str) -> Result<Self, PrecisionError> {
        self.convergence_tol = tol.to_string();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), PrecisionError> {
        if self.decimal_digits < MIN_DIGITS {
            return Err(PrecisionError::DigitsTooSmall(self.decimal_digits));
        }
        if self.taylor_order < MIN_ORDER {
            return Err(PrecisionError::OrderTooSmall(self.taylor_order));
        }
        if !(self.step_safety > 0.0 && self.step_safety < 1.0) {
            return Err(PrecisionError::InvalidConfig(format!(
                "step_safety {} not in (0,1)",
                self.step_safety
            )));
        }
        if !(self.h_min > 0.0 && self.h_min < self.h_max) {
            return Err(PrecisionError::InvalidConfig(format!(
                "need 0 < h_min ({}) < h_max ({})",
                self.h_min, self.h_max
            )));
        }
        if !(self.collision_distance >= 0.0) {
            return Err(PrecisionError::InvalidConfig(
                "collision_distance must be non-negative".into(),
            ));
        }
        validate_decimal(self.convergence_tol.trim())?;
        Ok(())
    }

    pub fn context(&self) -> Context {
        Context::new(self.decimal_digits).expect("validated config")
    }

    /// The residual tolerance as a number.
    pub fn tolerance(&self) -> Real {
        self.context()
            .parse(&self.convergence_tol)
            .expect("validated config")
    }

    /// Local truncation target of the step-size rule, `10^(-digits+4)`.
    pub fn step_tolerance_log10(&self) -> f64 {
        -f64::from(self.decimal_digits) + 4.0
    }
}

/// Taylor order matching the full-scale order/digit ratio. Informational:
/// presets copy the full-scale pairs verbatim instead of using this.
pub fn suggested_order(decimal_digits: u32) -> usize {
    (f64::from(decimal_digits) * ORDER_PER_DIGIT).ceil() as usize
}

/// Named precision presets: the three full-scale stage settings plus a
/// proportionally scaled desk ladder for workstation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Grid scan and modified-Newton correction: 134 digits, order 154.
    FullSearch,
    /// Classical Newton refinement: 192 digits, order 220.
    FullRefine,
    /// Independent verification: 231 digits, order 264.
    FullVerify,
    DeskScan,
    DeskCorrect,
    DeskRefine,
    DeskVerify,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::FullSearch,
        Preset::FullRefine,
        Preset::FullVerify,
        Preset::DeskScan,
        Preset::DeskCorrect,
        Preset::DeskRefine,
        Preset::DeskVerify,
    ];

    /// `(digits, order, residual tolerance)`.
    pub fn parameters(self) -> (u32, usize, &'static str) {
        match self {
            Preset::FullSearch => (134, 154, "1e-60"),
            Preset::FullRefine => (192, 220, "1e-160"),
            Preset::FullVerify => (231, 264, "1e-200"),
            Preset::DeskScan => (32, 40, "1e-20"),
            Preset::DeskCorrect => (64, 80, "1e-30"),
            Preset::DeskRefine => (96, 110, "1e-85"),
            Preset::DeskVerify => (128, 150, "1e-110"),
        }
    }

    pub fn config(self) -> PrecisionConfig {
        let (digits, order, tol) = self.parameters();
        PrecisionConfig::new(digits, order)
            .and_then(|c| c.with_tol(tol))
            .expect("presets are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::FullSearch => "full-search",
            Preset::FullRefine => "full-refine",
            Preset::FullVerify => "full-verify",
            Preset::DeskScan => "desk-scan",
            Preset::DeskCorrect => "desk-correct",
            Preset::DeskRefine => "desk-refine",
            Preset::DeskVerify => "desk-verify",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = PrecisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PrecisionError::InvalidConfig(format!("unknown preset '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn context_bits() {
        let ctx = make_context(134).unwrap();
        assert!(ctx.bits() >= 446);
        assert_eq!(ctx.bits(), 446 + GUARD_BITS);
        assert!(make_context(16).is_ok());
        assert_eq!(make_context(8), Err(PrecisionError::DigitsTooSmall(8)));
    }

    #[test]
    fn parse_exact_values() {
        let ctx = make_context(134).unwrap();
        let x = parse_decimal("-2.5", &ctx).unwrap();
        assert_eq!(x, -2.5);
        let y = parse_decimal("0.00048828125", &ctx).unwrap();
        assert_eq!(y, ctx.real(1) / 2048u32);
        let big = parse_decimal("1e500", &ctx).unwrap();
        assert!((log10_abs(&big) - 500.0).abs() < 1e-9);
    }

    #[test]
    fn parse_errors_carry_position() {
        let ctx = make_context(32).unwrap();
        match parse_decimal("1.2x3", &ctx) {
            Err(PrecisionError::Parse { position, .. }) => assert_eq!(position, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_decimal("-", &ctx) {
            Err(PrecisionError::Parse { position, .. }) => assert_eq!(position, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_decimal("1e", &ctx).is_err());
        assert!(parse_decimal("", &ctx).is_err());
        assert!(parse_decimal(".5", &ctx).is_ok());
    }

    #[test]
    fn format_examples() {
        let ctx = make_context(134).unwrap();
        assert_eq!(format_decimal(&ctx.real(-2.5), 5), "-2.5000");
        let third = ctx.one() / 3u32;
        assert_eq!(format_decimal(&third, 10), "0.3333333333");
        assert_eq!(format_decimal(&(ctx.real(1) / 2048u32), 5), "0.00048828");
        assert_eq!(format_decimal(&ctx.zero(), 3), "0.00");
        assert_eq!(format_decimal(&ctx.infinity(), 3), "inf");
        assert_eq!(format_decimal(&ctx.pow10(500), 3), "1.00e500");
        assert_eq!(format_decimal(&ctx.pow10(-40), 2), "1.0e-40");
        assert_eq!(format_decimal(&ctx.real(123.5), 4), "123.5");
        assert_eq!(format_decimal(&ctx.real(99.96), 3), "100");
        assert_eq!(format_trimmed(&ctx.real(0.3125), 30), "0.3125");
        assert_eq!(format_trimmed(&ctx.real(2), 30), "2");
    }

    #[test]
    fn format_parse_format_is_idempotent_at_150_digits() {
        let ctx = make_context(160).unwrap();
        let x = ctx.real(2).sqrt() / 7u32;
        let a = format_decimal(&x, 150);
        let b = format_decimal(&ctx.parse(&a).unwrap(), 150);
        assert_eq!(a, b);
    }

    #[test]
    fn neg_log10_examples() {
        let ctx = make_context(64).unwrap();
        assert_eq!(neg_log10_floor(&ctx.pow10(-20), 100), 20);
        assert_eq!(neg_log10_floor(&(ctx.pow10(-20) * 3u32), 100), 19);
        assert_eq!(neg_log10_floor(&ctx.zero(), 100), 100);
        assert_eq!(neg_log10_floor(&ctx.real(5), 100), 0);
    }

    #[test]
    fn presets_match_reference_pairs() {
        assert_eq!(Preset::FullSearch.parameters().0, 134);
        assert_eq!(Preset::FullSearch.parameters().1, 154);
        assert_eq!(Preset::FullRefine.parameters().0, 192);
        assert_eq!(Preset::FullRefine.parameters().1, 220);
        assert_eq!(Preset::FullVerify.parameters().0, 231);
        assert_eq!(Preset::FullVerify.parameters().1, 264);
        for p in Preset::ALL {
            p.config().validate().unwrap();
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert_eq!(suggested_order(134), 155);
    }

    #[test]
    fn config_validation() {
        assert!(PrecisionConfig::new(15, 20).is_err());
        assert!(PrecisionConfig::new(32, 3).is_err());
        let mut c = PrecisionConfig::new(32, 40).unwrap();
        c.step_safety = 1.0;
        assert!(c.validate().is_err());
        assert!(PrecisionConfig::new(32, 40).unwrap().with_tol("1e-x").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_at_d_digits(mant in any::<i64>(), exp in -60i32..60, d in 16usize..120) {
            let ctx = make_context(d as u32).unwrap();
            let x = ctx.real(mant) * ctx.pow10(exp) / 7u32;
            let s = format_decimal(&x, d);
            let y = ctx.parse(&s).unwrap();
            prop_assert_eq!(format_decimal(&y, d), s);
            if !x.is_zero() {
                let rel = Float::with_val(ctx.bits(), &x - &y).abs() / x.clone().abs();
                prop_assert!(rel <= ctx.pow10(-(d as i32) + 1));
            }
        }

        #[test]
        fn context_monotonicity(a in 1u32..1000, b in 1u32..1000, lo in 16u32..60) {
            // Pure computation at two precisions agrees to the lower one.
            let f = |ctx: &Context| {
                let x = ctx.real(a) / ctx.real(b);
                (x.clone() * &x + ctx.one()).sqrt() / 3u32
            };
            let c_lo = make_context(lo).unwrap();
            let c_hi = make_context(lo + 40).unwrap();
            let y_lo = c_hi.convert(&f(&c_lo));
            let y_hi = f(&c_hi);
            let rel = (y_hi.clone() - &y_lo).abs() / y_hi.abs();
            prop_assert!(rel < c_hi.pow10(-(lo as i32) + 2));
        }
    }
}
