//! Text formatting shared by the CSV writers.

/// `%.12g`: twelve significant digits, trailing zeros removed, exponent
/// notation outside `1e-4 ≤ |x| < 1e12`.
pub fn g12(x: f64) -> String {
    fmt_g(x, 12)
}

/// `%.<precision>g` as in C.
pub fn fmt_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_c_printf() {
        assert_eq!(g12(0.1), "0.1");
        assert_eq!(g12(1.0 / 3.0), "0.333333333333");
        assert_eq!(g12(-2.5e-7), "-2.5e-07");
        assert_eq!(g12(123456789012345.0), "1.23456789012e+14");
        assert_eq!(g12(100.0), "100");
        assert_eq!(g12(0.0), "0");
        assert_eq!(g12(1e-5), "1e-05");
        assert_eq!(g12(0.0001234), "0.0001234");
        assert_eq!(g12(999999999999.5), "1e+12");
    }
}
