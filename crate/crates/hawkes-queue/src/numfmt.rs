//! Numeric formatting shared by the CSV and report writers.

/// Formats `x` with `sig` significant digits, switching between plain and
/// scientific notation the way `%g` does and trimming trailing zeros. All CSV
/// output uses 12 significant digits so files round-trip through `f64` parsing
/// with no visible noise.
pub fn format_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1, "need at least one significant digit");
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // Render once in scientific form to learn the post-rounding exponent.
    let sci = format!("{:.*e}", sig - 1, x);
    let exp10: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if -4 <= exp10 && exp10 < sig as i32 {
        let decimals = (sig as i32 - 1 - exp10).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        let trimmed = if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.')
        } else {
            &fixed
        };
        trimmed.to_string()
    } else {
        let (mantissa, exp_part) = sci.split_at(sci.find('e').unwrap());
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}{exp_part}")
    }
}
