//! Prints the coupling slope that matches the fitted dominance line at 30 MHz
//! for a ten-pair, 300 m binder.

use xtalk_core::channel::{
    calibrate_k_mean_slope, WernerParams, BINDER_GAMMA1, BINDER_GAMMA2,
};

fn main() -> xtalk_core::Result<()> {
    let freq = 30e6;
    let target = BINDER_GAMMA1 + BINDER_GAMMA2 * freq;
    let slope = calibrate_k_mean_slope(&WernerParams::reference_binder(), freq, target, 200_000, 1)?;
    println!("target r at {freq:.3e} Hz: {target:.4}");
    println!("k_mean_slope = {slope:.4e}");
    Ok(())
}
