//! Significant-digit float formatting for report and CSV output.

/// Format with `digits` significant digits, plain decimal where reasonable
/// and scientific otherwise, trailing zeros trimmed.
pub(crate) fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if exp < -4 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits.saturating_sub(1), x);
        trim_mantissa(&s)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        trim_decimal(&s)
    }
}

/// Twelve significant digits, matching the precision of the reported
/// benchmark tables.
pub(crate) fn sig12(x: f64) -> String {
    sig(x, 12)
}

fn trim_decimal(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

fn trim_mantissa(s: &str) -> String {
    match s.split_once('e') {
        Some((mantissa, exp)) => format!("{}e{}", trim_decimal(mantissa), exp),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_table_style_values() {
        assert_eq!(sig12(0.00273912837108), "0.00273912837108");
        assert_eq!(sig12(0.0409921405159), "0.0409921405159");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(1.0), "1");
        assert_eq!(sig12(-2.5), "-2.5");
    }

    #[test]
    fn switches_to_scientific_for_extremes() {
        assert_eq!(sig12(1.5e-7), "1.5e-7");
        assert!(sig12(6.7e13).contains('e') || sig12(6.7e13) == "67000000000000");
        assert_eq!(sig(123.456, 4), "123.5");
    }
}
