//! Number formatting shared by the CSV writers.

/// Formats a time with 9 significant digits; `∞` becomes an empty field.
pub fn format_time(t: f64) -> String {
    if !t.is_finite() {
        return String::new();
    }
    format_sig(t, 9)
}

/// `%g`-style formatting with `digits` significant digits and no trailing
/// zeros.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..(digits as i32)).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(&s)
    } else {
        let s = format!("{:.*e}", digits - 1, v);
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        format!("{}e{}", trim_zeros(mantissa), e)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
