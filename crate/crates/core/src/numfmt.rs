//! Float formatting for the CSV interchange files: 6 significant digits,
//! trailing zeros trimmed, scientific notation outside a sane range
//! (the usual `%.6g` behavior).

pub fn g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(s)
    } else {
        let s = format!("{x:.5e}");
        // Rust prints `1.23450e2`; normalize the mantissa.
        match s.split_once('e') {
            Some((mant, e)) => format!("{}e{}", trim_zeros(mant.to_string()), e),
            None => s,
        }
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_six_significant_digits() {
        assert_eq!(g6(0.0), "0");
        assert_eq!(g6(1.0), "1");
        assert_eq!(g6(0.5), "0.5");
        assert_eq!(g6(1.0 / 3.0), "0.333333");
        assert_eq!(g6(123456.0), "123456");
        assert_eq!(g6(-2.5), "-2.5");
        assert_eq!(g6(0.000012345678), "1.23457e-5");
        assert_eq!(g6(1234567.0), "1.23457e6");
        assert_eq!(g6(95.25743), "95.2574");
    }
}
