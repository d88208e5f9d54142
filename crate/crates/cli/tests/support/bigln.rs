//! Fixed-point natural logarithm at 60 decimal digits, built on `BigInt`.
//!
//! Serves as an independent reference for Shannon-index values: floats enter
//! exactly (every f64 is a binary rational), ln comes from the atanh series
//! `ln m = 2·atanh((m−1)/(m+1))` after range reduction `x = m·2^−k`, and
//! `ln 2 = 2·atanh(1/3)`. Nothing here shares code with the crate under
//! test.

use num_bigint::BigInt;

/// Working precision: values are integers scaled by 10^60.
const SCALE_POW: u32 = 60;

fn scale() -> BigInt {
    BigInt::from(10u32).pow(SCALE_POW)
}

fn fixed_mul(a: &BigInt, b: &BigInt) -> BigInt {
    (a * b) / scale()
}

fn fixed_div(a: &BigInt, b: &BigInt) -> BigInt {
    (a * scale()) / b
}

/// Exact conversion: decompose the float into mantissa·2^exp and rescale.
/// Truncation below 10^-60 only occurs when 2^-exp outruns the 2^60 factor
/// inside 10^60.
fn f64_to_fixed(x: f64) -> BigInt {
    assert!(x.is_finite() && x >= 0.0, "fixed-point input {x}");
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if exp_bits == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    let scaled = BigInt::from(mantissa) * scale();
    if exp >= 0 {
        scaled << (exp as usize)
    } else {
        scaled >> ((-exp) as usize)
    }
}

/// atanh(t) = Σ t^(2j+1)/(2j+1), for |t| well inside (−1, 1).
fn atanh_fixed(t: &BigInt) -> BigInt {
    let t2 = fixed_mul(t, t);
    let mut term = t.clone();
    let mut sum = BigInt::from(0);
    let mut odd = BigInt::from(1);
    let zero = BigInt::from(0);
    while term != zero {
        sum += &term / &odd;
        term = fixed_mul(&term, &t2);
        odd += 2;
    }
    sum
}

/// ln(2) · 10^60.
pub fn ln2_fixed() -> BigInt {
    let third = fixed_div(&(BigInt::from(1) * scale()), &(BigInt::from(3) * scale()));
    atanh_fixed(&third) * 2
}

/// ln(p) · 10^60 for p in (0, 1].
pub fn ln_fixed(p: f64) -> BigInt {
    assert!(p > 0.0 && p <= 1.0, "ln oracle domain is (0,1], got {p}");
    let mut m = f64_to_fixed(p);
    let lower = scale() * 2 / 3;
    let mut k = 0u32;
    while m < lower {
        m <<= 1;
        k += 1;
    }
    // m/10^60 is now in [2/3, 4/3); the series argument stays within ±1/5.
    let t = fixed_div(&(&m - scale()), &(&m + scale()));
    atanh_fixed(&t) * 2 - ln2_fixed() * k
}

/// −Σ p ln p evaluated at 60 digits and rounded once into an f64.
pub fn entropy_oracle(probs: &[f64]) -> f64 {
    let mut total = BigInt::from(0);
    for &p in probs {
        if p > 0.0 {
            total -= fixed_mul(&f64_to_fixed(p), &ln_fixed(p));
        }
    }
    // The float parser rounds arbitrarily long decimals correctly.
    format!("{total}e-{SCALE_POW}")
        .parse()
        .expect("decimal parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln2_matches_the_published_digits() {
        // 0.693147180559945309417232121458176568075500134360255254120680...
        let text = ln2_fixed().to_string();
        assert!(
            text.starts_with("693147180559945309417232121458176568075500134360"),
            "{text}"
        );
        assert_eq!(text.len(), 60);
    }

    #[test]
    fn exact_logarithms_come_out_exact() {
        assert_eq!(ln_fixed(1.0), BigInt::from(0));
        assert_eq!(ln_fixed(0.5), -ln2_fixed());
        assert_eq!(ln_fixed(0.25), -ln2_fixed() * 2);
    }

    #[test]
    fn oracle_reproduces_closed_form_entropies() {
        let ln2 = std::f64::consts::LN_2;
        assert!((entropy_oracle(&[0.5, 0.5]) - ln2).abs() < 1e-15);
        assert!((entropy_oracle(&[0.25; 4]) - 2.0 * ln2).abs() < 1e-15);
        assert_eq!(entropy_oracle(&[1.0, 0.0]), 0.0);
    }
}
