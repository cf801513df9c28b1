// Fixed-format writers shared by the JSON and CSV emitters.

use std::fmt::Write;

/// Fixed notation with six digits after the decimal point.
pub(crate) fn real(x: f64) -> String {
    if x.is_finite() {
        // Avoid "-0.000000" for tiny negatives so outputs stay diffable.
        let s = format!("{x:.6}");
        if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
            s[1..].to_string()
        } else {
            s
        }
    } else {
        "null".to_string()
    }
}

/// Six significant digits in scientific notation, for values that span
/// many orders of magnitude (optimizer traces).
pub(crate) fn sci(x: f64) -> String {
    format!("{x:.5e}")
}

pub(crate) fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
