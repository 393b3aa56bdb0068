//! CSV helpers with C-style `%.12e` number formatting.

/// Formats like C's `printf("%.12e", x)`: `1.234567890123e-03`.
pub fn fmt_e12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Appends one row: floats in `%.12e`, then integer columns.
pub fn push_row(out: &mut String, floats: &[f64], ints: &[u64]) {
    let mut first = true;
    for x in floats {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&fmt_e12(*x));
    }
    for i in ints {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&i.to_string());
    }
    out.push('\n');
}
