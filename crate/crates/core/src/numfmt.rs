//! Number formatting for reports: 12 significant digits.

/// `x` rounded to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Shortest text for `x` rounded to 12 significant digits; `inf`, `-inf` and
/// `nan` for non-finite values.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{:?}", sig12(x))
}

/// JSON number rounded to 12 significant digits, `null` when non-finite.
pub fn json12(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(sig12(x))
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}
