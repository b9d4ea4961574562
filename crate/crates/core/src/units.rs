//! dB and linear-scale conversions. Every power ratio in the crate goes
//! through this pair so the two directions never drift apart.

/// Power ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear power ratio to dB.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// PSD in dBm/Hz to mW/Hz.
pub fn dbm_hz_to_mw_hz(dbm_hz: f64) -> f64 {
    db_to_linear(dbm_hz)
}
