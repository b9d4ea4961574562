//! Closed-form upper bounds on the quantization rate loss.
//!
//! Per tone, with `z = 2^-d`, `gamma = 2 rho (p - 1) (1 + r)^2 z^2` and
//! `v = sqrt(2) (1 + r)`:
//!
//! ```text
//! L <= log2(1 + gamma SNR) - 2 log2(1 - v z)        (needs d >= 1/2 + log2(1 + r))
//! ```
//!
//! `rho = max_j P_j / P_i` is 1 for equal PSDs. The Werner-model bounds
//! describe a whole band `[0, B]` whose SNR falls as `snr0 * exp(-alpha sqrt(f))`
//! and whose row dominance stays under `gamma1 + gamma2 f`.

use std::f64::consts::{LN_2, LOG2_E, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::channel::{RowDominanceFit, ToneGrid, BINDER_ALPHA_ELL, BINDER_GAMMA1, BINDER_GAMMA2};
use crate::error::{Error, Result};
use crate::rate::{log2_1p, LinkBudget};
use crate::units::db_to_linear;

/// Inputs of the per-tone bounds for one user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub p: usize,
    /// Row dominance at the tone (or the band maximum).
    pub r: f64,
    /// Linear SNR of the user at the tone.
    pub snr: f64,
    /// `max_j P_j / P_i`.
    pub rho: f64,
    /// `max_{j != i} P_j / P_i`.
    pub m: f64,
    /// `max_j |Delta_ij|` over the user's row.
    pub t: f64,
}

impl BoundInputs {
    /// Equal PSDs, no measured `Delta`.
    pub fn spsd(p: usize, r: f64, snr: f64) -> Self {
        Self {
            p,
            r,
            snr,
            rho: 1.0,
            m: 1.0,
            t: 0.0,
        }
    }

    pub fn with_t(self, t: f64) -> Self {
        Self { t, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let values = [self.r, self.snr, self.rho, self.m, self.t];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("bound inputs must be finite".into()));
        }
        if self.p < 1 || self.r < 0.0 || self.snr < 0.0 || self.rho < 1.0 || self.m < 0.0 || self.t < 0.0 {
            return Err(Error::InvalidParams(format!(
                "bound inputs out of range: p = {}, r = {}, snr = {}, rho = {}, m = {}, t = {}",
                self.p, self.r, self.snr, self.rho, self.m, self.t
            )));
        }
        Ok(())
    }
}

fn others(p: usize) -> f64 {
    p.saturating_sub(1) as f64
}

/// `log2((1 + (p - 1) M t^2 SNR) / (1 - t)^2)` for a measured row maximum `t`.
pub fn bound_general_per_tone(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let t = inputs.t;
    if t >= 1.0 {
        return Err(Error::BoundInapplicable(format!("row maximum |Delta| = {t} is not below 1")));
    }
    Ok(log2_1p(others(inputs.p) * inputs.m * t * t * inputs.snr) - 2.0 * log2_1p(-t))
}

/// Smallest integer word length meeting `d >= 1/2 + log2(1 + r)`.
pub fn min_bits_main(r: f64) -> u32 {
    (0.5 + (1.0 + r).log2()).ceil().max(0.0) as u32
}

fn check_main_precondition(r: f64, d: u32) -> Result<()> {
    if (d as f64) < 0.5 + (1.0 + r).log2() {
        return Err(Error::BitDepthTooSmall {
            requested: d,
            min_bits: min_bits_main(r),
        });
    }
    Ok(())
}

/// `2 rho (p - 1) (1 + r)^2 2^-2d`.
pub fn gamma(p: usize, r: f64, rho: f64, d: u32) -> f64 {
    let one_r = 1.0 + r;
    2.0 * rho * others(p) * one_r * one_r * (-2.0 * d as f64).exp2()
}

/// `sqrt(2) (1 + r)`.
pub fn v(r: f64) -> f64 {
    SQRT_2 * (1.0 + r)
}

fn edge_term(r: f64, d: u32) -> f64 {
    -2.0 * log2_1p(-v(r) * (-(d as f64)).exp2())
}

/// Main per-tone bound with PSD dynamic range `inputs.rho`.
pub fn bound_main_per_tone(inputs: &BoundInputs, d: u32) -> Result<f64> {
    inputs.validate()?;
    check_main_precondition(inputs.r, d)?;
    let g = gamma(inputs.p, inputs.r, inputs.rho, d);
    Ok(log2_1p(g * inputs.snr) + edge_term(inputs.r, d))
}

/// Main per-tone bound for equal PSDs.
pub fn bound_main_spsd(p: usize, r: f64, snr: f64, d: u32) -> Result<f64> {
    bound_main_per_tone(&BoundInputs::spsd(p, r, snr), d)
}

/// Band version of the main bound, rectangle rule over `grid`.
/// `snr[k]` is the user's SNR at tone `k`.
pub fn bound_main_band(p: usize, r_max: f64, rho: f64, snr: &[f64], grid: &ToneGrid, d: u32) -> Result<f64> {
    if snr.len() != grid.count() {
        return Err(Error::InvalidParams(format!(
            "{} SNR values for a {}-tone grid",
            snr.len(),
            grid.count()
        )));
    }
    BoundInputs { p, r: r_max, snr: 0.0, rho, m: rho, t: 0.0 }.validate()?;
    if snr.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidParams("SNR values must be finite and nonnegative".into()));
    }
    check_main_precondition(r_max, d)?;
    let g = gamma(p, r_max, rho, d);
    let spacing = grid.spacing();
    let integral: f64 = snr.iter().map(|s| spacing * log2_1p(g * s)).sum();
    Ok(integral + grid.bandwidth() * edge_term(r_max, d))
}

/// `2^(3.5 - d) + log2(1 + 8 rho (p - 1) SNR 2^-2d)`, valid for `r <= 1` and
/// `v 2^-d <= 1/2`.
pub fn bound_simplified_per_tone(inputs: &BoundInputs, d: u32) -> Result<f64> {
    inputs.validate()?;
    let z = (-(d as f64)).exp2();
    if inputs.r > 1.0 {
        return Err(Error::BoundInapplicable(format!("row dominance {} exceeds 1", inputs.r)));
    }
    if v(inputs.r) * z > 0.5 {
        return Err(Error::BoundInapplicable(format!(
            "v 2^-d = {} exceeds 1/2 at d = {d}",
            v(inputs.r) * z
        )));
    }
    Ok((3.5 - d as f64).exp2() + log2_1p(8.0 * inputs.rho * others(inputs.p) * inputs.snr * z * z))
}

/// Limit of `bound_main_band(d) * 2^d` as `d` grows: `2 sqrt(2) (1 + r_max) B / ln 2`.
pub fn bound_asymptotic_coefficient(r_max: f64, band: f64) -> f64 {
    2.0 * SQRT_2 * (1.0 + r_max) * band / LN_2
}

/// Werner-model band parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WernerBoundParams {
    /// SNR decay exponent: `SNR(f) = snr0 * exp(-alpha_ell * sqrt(f))`.
    pub alpha_ell: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub p: usize,
    /// `P / sigma^2` at 0 Hz, linear.
    pub snr0: f64,
    /// Linear Shannon gap.
    pub gap: f64,
    /// Band edge `B` in Hz.
    pub band: f64,
}

impl WernerBoundParams {
    /// Fitted binder parameters with -60/-140 dBm/Hz, a 10.7 dB gap and a
    /// 30 MHz band.
    pub fn reference() -> Self {
        Self {
            alpha_ell: BINDER_ALPHA_ELL,
            gamma1: BINDER_GAMMA1,
            gamma2: BINDER_GAMMA2,
            p: 10,
            snr0: db_to_linear(80.0),
            gap: db_to_linear(10.7),
            band: 30e6,
        }
    }

    /// Negative fitted coefficients are raised to zero, which only lifts the
    /// dominance line.
    pub fn from_fit(alpha_ell: f64, fit: &RowDominanceFit, p: usize, snr0: f64, gap: f64, band: f64) -> Self {
        if fit.gamma1 < -1e-9 || fit.gamma2 < 0.0 {
            log::warn!(
                "fitted row-dominance line ({:.3e}, {:.3e}) has a negative coefficient; clamped to zero",
                fit.gamma1,
                fit.gamma2
            );
        }
        Self {
            alpha_ell,
            gamma1: fit.gamma1.max(0.0),
            gamma2: fit.gamma2.max(0.0),
            p,
            snr0,
            gap,
            band,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values = [self.alpha_ell, self.gamma1, self.gamma2, self.snr0, self.gap, self.band];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("Werner bound parameters must be finite".into()));
        }
        if self.alpha_ell <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "alpha * length must be positive, got {}",
                self.alpha_ell
            )));
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 || self.snr0 < 0.0 || self.gap < 1.0 || self.band <= 0.0 || self.p < 2 {
            return Err(Error::InvalidParams(
                "need gamma1, gamma2, snr0 >= 0, gap >= 1, band > 0 and p >= 2".into(),
            ));
        }
        Ok(())
    }

    /// `(1 + g1)^2 + 12 (1 + g1) g2 / a^2 + 240 (g2 / a^2)^2` with `a = alpha_ell`.
    pub fn rho_ell(&self) -> f64 {
        let s = self.gamma2 / (self.alpha_ell * self.alpha_ell);
        let one_g = 1.0 + self.gamma1;
        one_g * one_g + 12.0 * one_g * s + 240.0 * s * s
    }

    /// `(4 / ln 2) (p - 1) snr0 rho_ell / (alpha_ell^2 B)`.
    pub fn xi_ell(&self) -> f64 {
        4.0 / LN_2 * others(self.p) * self.snr0 * self.rho_ell() / (self.alpha_ell * self.alpha_ell * self.band)
    }

    /// Spectral-efficiency floor `c`, which must be positive.
    pub fn floor(&self) -> Result<f64> {
        spectral_floor(self.snr0, self.gap, self.alpha_ell, self.band)
    }

    /// `xi_ell / c`.
    pub fn zeta_ell(&self) -> Result<f64> {
        Ok(self.xi_ell() / self.floor()?)
    }
}

/// Band-average loss bound `xi_ell 2^-2d + 2^(3.5 - d)`.
pub fn bound_werner_decay(params: &WernerBoundParams, d: u32) -> Result<f64> {
    params.validate()?;
    let z = (-(d as f64)).exp2();
    Ok(params.xi_ell() * z * z + 8.0 * SQRT_2 * z)
}

/// `(1/3) log2(snr0 / gap) + (2/3) log2(snr0 e^(-alpha sqrt B) / gap)`.
pub fn spectral_floor(snr0: f64, gap: f64, alpha_ell: f64, band: f64) -> Result<f64> {
    let c = spectral_floor_unchecked(snr0, gap, alpha_ell, band);
    if !(c > 0.0) {
        return Err(Error::FloorNonpositive { c });
    }
    Ok(c)
}

fn spectral_floor_unchecked(snr0: f64, gap: f64, alpha_ell: f64, band: f64) -> f64 {
    let edge = snr0 * (-alpha_ell * band.sqrt()).exp();
    (snr0 / gap).log2() / 3.0 + 2.0 * (edge / gap).log2() / 3.0
}

/// Same floor written through the decay rate: `log2(snr0 / gap) - (2/3) alpha sqrt(B) log2(e)`.
pub fn spectral_floor_decay_form(snr0: f64, gap: f64, alpha_ell: f64, band: f64) -> f64 {
    (snr0 / gap).log2() - 2.0 / 3.0 * alpha_ell * band.sqrt() * LOG2_E
}

/// Floor for one user of a budget: `snr0` is the user's PSD at the first tone
/// over the noise PSD, the band is the grid's total bandwidth.
pub fn spectral_efficiency_floor(budget: &LinkBudget, alpha_ell: f64, user: usize) -> Result<f64> {
    budget.validate()?;
    let snr0 = budget.psd_mw(user, budget.grid.f_start())? / budget.noise_mw();
    spectral_floor(snr0, budget.gap(), alpha_ell, budget.grid.bandwidth())
}

/// Relative band loss bound `zeta_ell 2^-2d + 2^(3.5 - d) / c`.
pub fn bound_relative(params: &WernerBoundParams, d: u32) -> Result<f64> {
    params.validate()?;
    let c = params.floor()?;
    let zeta = params.xi_ell() / c;
    let z = (-(d as f64)).exp2();
    Ok(zeta * z * z + 8.0 * SQRT_2 * z / c)
}

/// Maximum of `(a + b x)^2 snr0 e^(-alpha sqrt x)` over `[0, band]`.
pub fn j_peak(a: f64, b: f64, alpha: f64, band: f64, snr0: f64) -> f64 {
    // In s = sqrt(x) the log-derivative vanishes where alpha b s^2 - 4 b s + alpha a = 0.
    let g = |s: f64| {
        let w = a + b * s * s;
        w * w * snr0 * (-alpha * s).exp()
    };
    let s_max = band.sqrt();
    let mut best = g(0.0).max(g(s_max));
    if b == 0.0 {
        let s = golden_section_max(g, 0.0, s_max);
        return best.max(g(s));
    }
    let disc = 4.0 * b * b - alpha * alpha * a * b;
    if disc >= 0.0 {
        let root = disc.sqrt();
        for s in [(2.0 * b - root) / (alpha * b), (2.0 * b + root) / (alpha * b)] {
            if (0.0..=s_max).contains(&s) {
                best = best.max(g(s));
            }
        }
    }
    best
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Upper bound on `J(mu) = (1/B) int_0^B log2(1 + mu (a + b x)^2 snr0 e^(-alpha sqrt x)) dx`.
pub fn j_integral_bound(a: f64, b: f64, alpha: f64, band: f64, snr0: f64, mu: f64) -> Result<f64> {
    let values = [a, b, alpha, band, snr0, mu];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("J-integral parameters must be finite".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidParams(format!("alpha must be positive, got {alpha}")));
    }
    if a < 1.0 || b < 0.0 || mu < 0.0 || band <= 0.0 || snr0 < 0.0 {
        return Err(Error::InvalidParams(
            "need a >= 1, b >= 0, mu >= 0, band > 0 and snr0 >= 0".into(),
        ));
    }
    let a2 = alpha * alpha;
    let s = b / a2;
    let root_b = band.sqrt();
    let edge = snr0 * (-alpha * root_b).exp();
    let weight = (alpha * root_b).exp() / (a2 * band) * (2.0 * a * a + 24.0 * a * s + 240.0 * s * s);
    let integral_form = weight * log2_1p(mu * edge);
    let peak_form = log2_1p(j_peak(a, b, alpha, band, snr0) * mu);
    Ok(integral_form.min(peak_form))
}
