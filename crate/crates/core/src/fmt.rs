//! Shared numeric formatting for text outputs.

/// Decimal with 17 significant digits; round-trips any f64.
pub(crate) fn f64_17(v: f64) -> String {
    format!("{v:.16e}")
}
