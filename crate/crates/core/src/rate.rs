//! Shannon-gap rates and the exact rate loss caused by a perturbation `Delta`.
//!
//! Per user `i` and tone, with `eSNR = SNR_i / gap`:
//!
//! ```text
//! a = sum_{j != i} (P_j / P_i) |Delta_ij|^2 SNR_i
//! q = |1 + Delta_ii|^2 / (a + 1)
//! k = eSNR / (eSNR + 1)
//! L = -log2(1 - k (1 - q))
//! ```
//!
//! `a` and `q` do not involve the gap. A negative `L` (when `q > 1`) is a
//! rate gain and is reported as is.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelEnsemble, ChannelSnapshot, ToneGrid};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::units::{db_to_linear, dbm_hz_to_mw_hz};

/// `log2(1 + x)`, accurate for small `x`.
pub fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / LN_2
}

/// Transmit PSD in dBm/Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdProfile {
    /// Same flat PSD for every user.
    Flat(f64),
    /// Flat PSD per user.
    PerUser(Vec<f64>),
    /// `table[user][tone]`.
    Table(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub psd: PsdProfile,
    pub noise_psd_dbm_hz: f64,
    pub gamma_gap_db: f64,
    pub grid: ToneGrid,
}

impl LinkBudget {
    pub fn flat(psd_dbm_hz: f64, noise_psd_dbm_hz: f64, gamma_gap_db: f64, grid: ToneGrid) -> Self {
        Self {
            psd: PsdProfile::Flat(psd_dbm_hz),
            noise_psd_dbm_hz,
            gamma_gap_db,
            grid,
        }
    }

    /// -60 dBm/Hz transmit, -140 dBm/Hz noise, 10.7 dB gap.
    pub fn reference(grid: ToneGrid) -> Self {
        Self::flat(-60.0, -140.0, 10.7, grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_gap_db >= 0.0 && self.gamma_gap_db.is_finite()) {
            return Err(Error::InvalidBudget(format!(
                "Shannon gap must be a finite nonnegative dB value, got {}",
                self.gamma_gap_db
            )));
        }
        let noise = self.noise_mw();
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::InvalidBudget(format!(
                "noise PSD must be positive, got {} dBm/Hz",
                self.noise_psd_dbm_hz
            )));
        }
        let finite_db = |v: &f64| v.is_finite() || *v == f64::NEG_INFINITY;
        let ok = match &self.psd {
            PsdProfile::Flat(v) => finite_db(v),
            PsdProfile::PerUser(v) => v.iter().all(finite_db),
            PsdProfile::Table(rows) => rows
                .iter()
                .all(|r| r.len() == self.grid.count() && r.iter().all(finite_db)),
        };
        if !ok {
            return Err(Error::InvalidBudget(
                "PSD values must be finite and tables must cover every tone".into(),
            ));
        }
        Ok(())
    }

    /// Linear Shannon gap.
    pub fn gap(&self) -> f64 {
        db_to_linear(self.gamma_gap_db)
    }

    pub fn noise_mw(&self) -> f64 {
        dbm_hz_to_mw_hz(self.noise_psd_dbm_hz)
    }

    /// Transmit PSD of `user` at `freq` in mW/Hz.
    pub fn psd_mw(&self, user: usize, freq: f64) -> Result<f64> {
        let db = match &self.psd {
            PsdProfile::Flat(v) => *v,
            PsdProfile::PerUser(v) => *v.get(user).ok_or_else(|| {
                Error::InvalidBudget(format!("no PSD for user {user} ({} given)", v.len()))
            })?,
            PsdProfile::Table(rows) => {
                let row = rows
                    .get(user)
                    .ok_or_else(|| Error::InvalidBudget(format!("no PSD row for user {user}")))?;
                let tone = self.grid.tone_of(freq).ok_or_else(|| {
                    Error::InvalidBudget(format!("{freq} Hz is not on the budget's tone grid"))
                })?;
                *row.get(tone)
                    .ok_or_else(|| Error::InvalidBudget(format!("PSD table misses tone {tone}")))?
            }
        };
        Ok(dbm_hz_to_mw_hz(db))
    }

    pub fn psd_all(&self, users: usize, freq: f64) -> Result<Vec<f64>> {
        (0..users).map(|i| self.psd_mw(i, freq)).collect()
    }

    /// `P_i |d_i|^2 / sigma^2`.
    pub fn snr(&self, snapshot: &ChannelSnapshot, user: usize) -> Result<f64> {
        let noise = self.noise_mw();
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::InvalidBudget(format!(
                "noise PSD must be positive, got {} dBm/Hz",
                self.noise_psd_dbm_hz
            )));
        }
        let d = snapshot
            .d
            .get(user)
            .ok_or_else(|| Error::InvalidParams(format!("no user {user}")))?;
        Ok(self.psd_mw(user, snapshot.freq)? * d.norm_sqr() / noise)
    }

    pub fn snr_all(&self, snapshot: &ChannelSnapshot) -> Result<Vec<f64>> {
        (0..snapshot.users()).map(|i| self.snr(snapshot, i)).collect()
    }

    /// Largest ratio `max_j P_j / P_i` over users at `freq` (1 for equal PSDs).
    pub fn dynamic_range(&self, users: usize, freq: f64) -> Result<f64> {
        let psd = self.psd_all(users, freq)?;
        let max = psd.iter().cloned().fold(0.0, f64::max);
        let min = psd.iter().cloned().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        Ok(if min.is_finite() { max / min } else { 1.0 })
    }
}

/// `log2(1 + SNR_i / gap)`.
pub fn rate_ideal(budget: &LinkBudget, snapshot: &ChannelSnapshot, user: usize) -> Result<f64> {
    let snr = budget.snr(snapshot, user)?;
    if !(snr >= 0.0 && snr.is_finite()) {
        return Err(Error::InvalidBudget(format!("SNR {snr} is not finite")));
    }
    Ok(log2_1p(snr / budget.gap()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneLoss {
    pub freq: f64,
    /// Ideal rate `R_i(f)`.
    pub rate: f64,
    /// Perturbed rate `R_i(f) - L_i(f)`.
    pub rate_perturbed: f64,
    pub loss: f64,
    pub a: f64,
    pub q: f64,
    pub k: f64,
    /// `gap * sum_{j != i} (P_j / P_i) |Delta_ij|^2`.
    pub delta_norm: f64,
}

pub fn loss_exact(budget: &LinkBudget, snapshot: &ChannelSnapshot, delta: &CMatrix, user: usize) -> Result<ToneLoss> {
    let p = snapshot.users();
    if delta.shape() != (p, p) {
        return Err(Error::InvalidParams(format!("Delta must be {p} x {p}")));
    }
    if delta.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NumericalError("Delta has non-finite entries".into()));
    }
    let psd = budget.psd_all(p, snapshot.freq)?;
    let snr = budget.snr(snapshot, user)?;
    let gap = budget.gap();
    tone_loss(snapshot.freq, &psd, snr, gap, delta, user)
}

/// Core of [`loss_exact`] with the PSDs and SNR already resolved.
pub fn tone_loss(freq: f64, psd: &[f64], snr: f64, gap: f64, delta: &CMatrix, user: usize) -> Result<ToneLoss> {
    let i = user;
    let p = psd.len();
    let pi = psd[i];
    let weighted: f64 = if pi > 0.0 {
        (0..p)
            .filter(|&j| j != i)
            .map(|j| psd[j] / pi * delta[(i, j)].norm_sqr())
            .sum()
    } else {
        0.0
    };
    let a = weighted * snr;
    let q = (delta[(i, i)] + 1.0).norm_sqr() / (a + 1.0);
    let esnr = snr / gap;
    let k = esnr / (esnr + 1.0);
    let x = k * (1.0 - q);
    if !(x < 1.0) {
        return Err(Error::NumericalError(format!(
            "1 - k (1 - q) = {} is not positive at {freq} Hz, user {i}",
            1.0 - x
        )));
    }
    let rate = log2_1p(esnr);
    // Same quantity, evaluated where each form is well conditioned:
    // 1 - k (1 - q) = (1 + eSNR q) / (1 + eSNR).
    let loss = if x < 0.5 {
        -log2_1p(-x)
    } else {
        rate - log2_1p(esnr * q)
    };
    Ok(ToneLoss {
        freq,
        rate,
        rate_perturbed: rate - loss,
        loss,
        a,
        q,
        k,
        delta_norm: gap * weighted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandLoss {
    /// Ideal band rate in bit/s.
    pub rate: f64,
    /// Band loss in bit/s.
    pub loss: f64,
}

impl BandLoss {
    pub fn from_tones(losses: &[ToneLoss], spacing: f64) -> Self {
        Self {
            rate: spacing * losses.iter().map(|t| t.rate).sum::<f64>(),
            loss: spacing * losses.iter().map(|t| t.loss).sum::<f64>(),
        }
    }

    /// Relative loss `L / R`; undefined when the ideal rate is zero.
    pub fn eta(&self, user: usize) -> Result<f64> {
        if self.rate > 0.0 {
            Ok(self.loss / self.rate)
        } else {
            Err(Error::RelativeLossUndefined { user })
        }
    }

    pub fn eta_opt(&self) -> Option<f64> {
        (self.rate > 0.0).then(|| self.loss / self.rate)
    }
}

pub fn loss_band(budget: &LinkBudget, ensemble: &ChannelEnsemble, deltas: &[CMatrix], user: usize) -> Result<BandLoss> {
    if deltas.len() != ensemble.snapshots.len() {
        return Err(Error::InvalidParams(format!(
            "{} Delta matrices for {} tones",
            deltas.len(),
            ensemble.snapshots.len()
        )));
    }
    let tones = ensemble
        .snapshots
        .par_iter()
        .zip(deltas)
        .enumerate()
        .map(|(k, (s, delta))| loss_exact(budget, s, delta, user).map_err(|e| e.at_tone(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BandLoss::from_tones(&tones, ensemble.grid.spacing()))
}

/// Per-user, per-tone exact losses and their band integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub grid: ToneGrid,
    pub users: Vec<usize>,
    /// `per_tone[u][k]` for user `users[u]` at tone `k`.
    pub per_tone: Vec<Vec<ToneLoss>>,
    pub band: Vec<BandLoss>,
}

impl LossReport {
    pub fn from_per_tone(grid: ToneGrid, users: Vec<usize>, per_tone: Vec<Vec<ToneLoss>>) -> Self {
        let band = per_tone
            .iter()
            .map(|tones| BandLoss::from_tones(tones, grid.spacing()))
            .collect();
        Self {
            grid,
            users,
            per_tone,
            band,
        }
    }
}

/// Report for every user over the ensemble, one `Delta` per tone.
pub fn loss_report(budget: &LinkBudget, ensemble: &ChannelEnsemble, deltas: &[CMatrix]) -> Result<LossReport> {
    budget.validate()?;
    if deltas.len() != ensemble.snapshots.len() {
        return Err(Error::InvalidParams(format!(
            "{} Delta matrices for {} tones",
            deltas.len(),
            ensemble.snapshots.len()
        )));
    }
    let p = ensemble.users();
    let by_tone: Vec<Vec<ToneLoss>> = ensemble
        .snapshots
        .par_iter()
        .zip(deltas)
        .enumerate()
        .map(|(k, (s, delta))| {
            (0..p)
                .map(|u| loss_exact(budget, s, delta, u))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_tone(k))
        })
        .collect::<Result<_>>()?;
    let per_tone = (0..p)
        .map(|u| by_tone.iter().map(|row| row[u]).collect())
        .collect();
    Ok(LossReport::from_per_tone(ensemble.grid.clone(), (0..p).collect(), per_tone))
}
