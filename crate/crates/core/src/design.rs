//! Word-length design: the smallest number of quantizer bits whose loss
//! bound meets a target.
//!
//! Every design function starts from a closed-form estimate, rounds it up,
//! then walks against the bound itself: up while the bound misses the
//! target, down while one bit fewer still meets it. The returned word length
//! therefore always satisfies its bound.

use std::f64::consts::{LN_2, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_main_per_tone, bound_relative, v, BoundInputs, WernerBoundParams};
use crate::error::{Error, Result};

/// Longest word length the design search will consider.
pub const MAX_BITS: u32 = 52;

/// `A 2^-2d + B 2^-d <= T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBudget {
    pub a: f64,
    pub b: f64,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSolution {
    /// Sufficient word length.
    pub d: f64,
    /// Exact root: the inequality holds with equality at `d0`.
    pub d0: f64,
    /// True when `T <= B^2 / 4A` (the linear term dominates).
    pub linear_regime: bool,
}

/// Closed-form sufficient `d`: `log2(1.25 B / T)` when `T <= B^2 / 4A`,
/// otherwise `0.5 log2(6.25 A / T)`.
pub fn solve_quadratic_budget(q: &QuadraticBudget) -> Result<QuadraticSolution> {
    let QuadraticBudget { a, b, t } = *q;
    if !(a > 0.0 && b > 0.0 && t > 0.0) || !(a.is_finite() && b.is_finite() && t.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "quadratic budget needs positive finite A, B, T (got {a}, {b}, {t})"
        )));
    }
    let linear_regime = t <= b * b / (4.0 * a);
    let d = if linear_regime {
        (1.25 * b / t).log2()
    } else {
        0.5 * (6.25 * a / t).log2()
    };
    // Positive root z0 of A z^2 + B z - T, in the cancellation-free form.
    let z0 = 2.0 * t / (b + (b * b + 4.0 * a * t).sqrt());
    Ok(QuadraticSolution {
        d,
        d0: -z0.log2(),
        linear_regime,
    })
}

fn check_target(x: f64, name: &str) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

/// Integer search around `start`: smallest `d >= min_bits` with `ok(d)`.
fn settle(start: u32, min_bits: u32, ok: impl Fn(u32) -> Result<bool>) -> Result<u32> {
    let mut d = start.clamp(min_bits, MAX_BITS);
    while !ok(d)? {
        if d >= MAX_BITS {
            return Err(Error::TargetUnreachable { max_bits: MAX_BITS });
        }
        d += 1;
    }
    while d > min_bits && ok(d - 1)? {
        d -= 1;
    }
    Ok(d)
}

fn ceil_bits(x: f64) -> u32 {
    if x.is_nan() || x <= 0.0 {
        0
    } else {
        x.ceil().min(MAX_BITS as f64) as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneDesign {
    pub bits: u32,
    /// Closed-form real-valued estimate.
    pub d_real: f64,
    /// Exact root of the quadratic the estimate is built on.
    pub d0: f64,
    /// Smallest word length for which the main bound is finite.
    pub floor_bits: u32,
    /// The estimate fell below `floor_bits` and was raised.
    pub raised_to_floor: bool,
    /// Main bound at `bits`.
    pub bound: f64,
}

/// Fewest bits whose main per-tone bound is at most `t` bit/s/Hz.
pub fn bits_for_tone_loss(inputs: &BoundInputs, t: f64) -> Result<ToneDesign> {
    inputs.validate()?;
    check_target(t, "tone loss target")?;
    let vf = v(inputs.r);
    let one_r = 1.0 + inputs.r;
    let u = 2.0 * (inputs.p.saturating_sub(1)) as f64 * one_r * one_r * inputs.snr * inputs.rho;
    let b = (t + 1.0).exp2() * vf;
    let tl = t * LN_2;
    // 2^t - 1
    let big_t = tl.exp_m1();
    let d_real = if u == 0.0 || big_t <= b * b / (4.0 * u) {
        (1.25 * b / tl).log2()
    } else {
        0.5 * (6.25 * u / tl).log2()
    };
    let d0 = if u > 0.0 {
        solve_quadratic_budget(&QuadraticBudget { a: u, b, t: big_t })?.d0
    } else {
        (b / big_t).log2()
    };

    // Smallest d with v 2^-d < 1, where the bound becomes finite.
    let floor_bits = (vf.log2().floor() + 1.0).max(1.0) as u32;
    let start = ceil_bits(d_real);
    let raised_to_floor = start < floor_bits;
    if raised_to_floor {
        log::info!("word length estimate {d_real:.3} raised to the admissible floor of {floor_bits} bits");
    }
    let bits = settle(start, floor_bits, |d| Ok(bound_main_per_tone(inputs, d)? <= t))?;
    Ok(ToneDesign {
        bits,
        d_real,
        d0,
        floor_bits,
        raised_to_floor,
        bound: bound_main_per_tone(inputs, bits)?,
    })
}

/// The relative-loss bound only applies once `2^(1.5 - d) <= 1/2`.
pub const MIN_RELATIVE_BITS: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeDesign {
    pub bits: u32,
    pub d_real: f64,
    pub d0: f64,
    pub floor: f64,
    pub zeta: f64,
    /// Relative bound at `bits`.
    pub bound: f64,
}

/// Fewest bits whose relative band-loss bound is at most `tau`.
pub fn bits_for_relative_loss(params: &WernerBoundParams, tau: f64) -> Result<RelativeDesign> {
    params.validate()?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParams(format!("relative target must lie in (0, 1], got {tau}")));
    }
    let c = params.floor()?;
    let zeta = params.xi_ell() / c;
    let d_real = if zeta == 0.0 || tau <= 32.0 / (zeta * c * c) {
        (12.0 * SQRT_2 / (c * tau)).log2()
    } else {
        0.5 * (6.25 * zeta / tau).log2()
    };
    let d0 = if zeta > 0.0 {
        solve_quadratic_budget(&QuadraticBudget { a: zeta, b: 8.0 * SQRT_2 / c, t: tau })?.d0
    } else {
        (8.0 * SQRT_2 / (c * tau)).log2()
    };
    let bits = settle(ceil_bits(d_real), MIN_RELATIVE_BITS, |d| Ok(bound_relative(params, d)? <= tau))?;
    Ok(RelativeDesign {
        bits,
        d_real,
        d0,
        floor: c,
        zeta,
        bound: bound_relative(params, bits)?,
    })
}

/// One loop length of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub length_m: f64,
    pub alpha_ell: f64,
    pub gamma2: f64,
    pub rho_ell: f64,
    pub xi_ell: f64,
    /// Design result or the error message for this length.
    pub outcome: std::result::Result<RelativeDesign, String>,
}

/// Scales `template`, taken at `reference_m`, to another loop length:
/// `alpha * length` grows linearly, `gamma2` with the square root of length.
pub fn params_at_length(template: &WernerBoundParams, reference_m: f64, length_m: f64) -> WernerBoundParams {
    let ratio = length_m / reference_m;
    WernerBoundParams {
        alpha_ell: template.alpha_ell * ratio,
        gamma2: template.gamma2 * ratio.sqrt(),
        ..template.clone()
    }
}

pub fn sweep_bits_vs_loop_length(
    lengths: &[f64],
    template: &WernerBoundParams,
    reference_m: f64,
    tau: f64,
) -> Result<Vec<SweepRow>> {
    if lengths.is_empty() {
        return Err(Error::InvalidParams("sweep needs at least one loop length".into()));
    }
    if !(reference_m > 0.0 && reference_m.is_finite()) {
        return Err(Error::InvalidParams(format!("reference length must be positive, got {reference_m}")));
    }
    Ok(lengths
        .par_iter()
        .map(|&length_m| {
            let params = params_at_length(template, reference_m, length_m);
            let outcome = if length_m > 0.0 && length_m.is_finite() {
                bits_for_relative_loss(&params, tau).map_err(|e| e.to_string())
            } else {
                Err(format!("loop length must be positive, got {length_m}"))
            };
            SweepRow {
                length_m,
                alpha_ell: params.alpha_ell,
                gamma2: params.gamma2,
                rho_ell: params.rho_ell(),
                xi_ell: params.xi_ell(),
                outcome,
            }
        })
        .collect())
}
