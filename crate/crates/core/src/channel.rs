//! Channel matrices over a tone grid: Werner-model synthesis, row-dominance
//! statistics, and the line fits that feed the closed-form bounds.
//!
//! The insertion loss of every pair is `exp(-alpha * length * sqrt(f))` in
//! amplitude. Far-end crosstalk from pair `j` into pair `i` has amplitude
//! `sqrt(K_ij) * f * exp(-alpha * length * sqrt(f))`, with one log-normal
//! coupling gain `K_ij` per ordered pair, constant over frequency.
//!
//! `alpha` is stored per meter. Fitted cable constants are often quoted as the
//! aggregate `alpha * length` (the decay rate of `-ln|H_ii|` in `sqrt(f)`);
//! [`WernerParams::from_aggregate`] and [`WernerParams::alpha_ell`] convert
//! between the two.

use std::path::PathBuf;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row_dominance, CMatrix, C64};
use crate::rng::{self, Purpose};

/// Standard DMT sub-carrier spacing.
pub const DMT_SPACING_HZ: f64 = 4312.5;

/// Aggregate cable constant `alpha * length` fitted on the measured binder.
pub const BINDER_ALPHA_ELL: f64 = 0.0019;
/// Loop length the aggregate constant is attributed to.
pub const REFERENCE_LENGTH_M: f64 = 300.0;
/// Row-dominance line fitted on the measured binder: `r(f) <= gamma1 + gamma2 f`.
pub const BINDER_GAMMA1: f64 = 0.1596;
pub const BINDER_GAMMA2: f64 = 3.1729e-8;

/// Spread of `ln K`.
pub const DEFAULT_K_SIGMA_LOG: f64 = 1.0;
/// Mean coupling gain per meter of loop. Produced by
/// `cargo run -p xtalk-core --example calibrate_fext`: with ten pairs at
/// 300 m the expected worst-row dominance at 30 MHz matches
/// `BINDER_GAMMA1 + BINDER_GAMMA2 * 30 MHz`.
pub const DEFAULT_K_MEAN_SLOPE: f64 = 4.29e-20;

/// Tone `k` sits at `f_start + k * spacing`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneGrid {
    f_start: f64,
    f_end: f64,
    spacing: f64,
    count: usize,
}

impl ToneGrid {
    pub fn new(f_start: f64, f_end: f64, spacing: f64) -> Result<Self> {
        if !(f_start.is_finite() && f_end.is_finite() && spacing.is_finite()) {
            return Err(Error::InvalidParams("tone grid bounds must be finite".into()));
        }
        if f_start < 0.0 || f_end <= f_start || spacing <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "tone grid needs 0 <= f_start < f_end and spacing > 0 (got {f_start}, {f_end}, {spacing})"
            )));
        }
        // The relative slack absorbs representation error when the band is an
        // exact multiple of the spacing.
        let steps = (f_end - f_start) / spacing;
        let count = (steps * (1.0 + 4.0 * f64::EPSILON)).floor() as usize + 1;
        Ok(Self {
            f_start,
            f_end,
            spacing,
            count,
        })
    }

    /// Grid of `count` tones starting at `f_start`. A single-tone grid is
    /// allowed here; its `f_end` equals `f_start`.
    pub fn from_count(f_start: f64, spacing: f64, count: usize) -> Result<Self> {
        if !(f_start.is_finite() && spacing.is_finite()) || f_start < 0.0 || spacing <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "tone grid needs f_start >= 0 and spacing > 0 (got {f_start}, {spacing})"
            )));
        }
        if count == 0 {
            return Err(Error::InvalidParams("tone grid needs at least one tone".into()));
        }
        Ok(Self {
            f_start,
            f_end: f_start + (count - 1) as f64 * spacing,
            spacing,
            count,
        })
    }

    /// `[0, f_end]` on the DMT raster, keeping every `decimation`-th tone.
    pub fn dmt(f_end: f64, decimation: usize) -> Result<Self> {
        if decimation == 0 {
            return Err(Error::InvalidParams("decimation must be at least 1".into()));
        }
        Self::new(0.0, f_end, DMT_SPACING_HZ * decimation as f64)
    }

    pub fn f_start(&self) -> f64 {
        self.f_start
    }

    pub fn f_end(&self) -> f64 {
        self.f_end
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn freq(&self, k: usize) -> f64 {
        self.f_start + k as f64 * self.spacing
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.freq(k))
    }

    /// Total bandwidth `|B|` as the sum of bin widths.
    pub fn bandwidth(&self) -> f64 {
        self.count as f64 * self.spacing
    }

    /// Nearest tone index, if `freq` lies on the grid within half a bin.
    pub fn tone_of(&self, freq: f64) -> Option<usize> {
        let k = ((freq - self.f_start) / self.spacing).round();
        if k < 0.0 || k as usize >= self.count {
            return None;
        }
        Some(k as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// i.i.d. uniform on `[0, 2 pi)` per entry per tone.
    #[default]
    Uniform,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DominancePolicy {
    #[default]
    Warn,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WernerParams {
    /// Attenuation per meter per sqrt(Hz), amplitude.
    pub alpha: f64,
    pub loop_length_m: f64,
    /// `E[K] = k_mean_slope * loop_length_m`.
    pub k_mean_slope: f64,
    /// Standard deviation of `ln K`.
    pub k_sigma_log: f64,
    pub p: usize,
    pub diag_phase: PhaseMode,
    pub offdiag_phase: PhaseMode,
    pub dominance_ceiling: f64,
    pub dominance_policy: DominancePolicy,
}

impl WernerParams {
    /// Parameters from an aggregate `alpha * length` attributed to `length_m`.
    pub fn from_aggregate(alpha_ell: f64, length_m: f64, p: usize) -> Self {
        Self {
            alpha: alpha_ell / length_m,
            loop_length_m: length_m,
            k_mean_slope: DEFAULT_K_MEAN_SLOPE,
            k_sigma_log: DEFAULT_K_SIGMA_LOG,
            p,
            diag_phase: PhaseMode::Uniform,
            offdiag_phase: PhaseMode::Uniform,
            dominance_ceiling: 1.5,
            dominance_policy: DominancePolicy::Warn,
        }
    }

    /// The fitted binder: aggregate 0.0019 at 300 m, ten pairs.
    pub fn reference_binder() -> Self {
        Self::from_aggregate(BINDER_ALPHA_ELL, REFERENCE_LENGTH_M, 10)
    }

    /// Same cable at another loop length.
    pub fn with_length(&self, length_m: f64) -> Self {
        Self {
            loop_length_m: length_m,
            ..self.clone()
        }
    }

    pub fn alpha_ell(&self) -> f64 {
        self.alpha * self.loop_length_m
    }

    /// Insertion-loss amplitude `exp(-alpha * length * sqrt(f))`.
    pub fn insertion_loss(&self, freq: f64) -> f64 {
        (-self.alpha_ell() * freq.sqrt()).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha,
            self.loop_length_m,
            self.k_mean_slope,
            self.k_sigma_log,
            self.dominance_ceiling,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("Werner parameters must be finite".into()));
        }
        if self.alpha <= 0.0 || self.loop_length_m <= 0.0 {
            return Err(Error::InvalidParams(
                "alpha and loop length must be positive".into(),
            ));
        }
        if self.k_mean_slope < 0.0 || self.k_sigma_log < 0.0 {
            return Err(Error::InvalidParams(
                "coupling mean slope and log spread must be nonnegative".into(),
            ));
        }
        if self.p < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 pairs, got {}", self.p)));
        }
        Ok(())
    }

    /// One log-normal coupling gain per ordered pair, row-major, zero on the
    /// diagonal.
    pub fn coupling_gains(&self, seed: u64) -> Vec<f64> {
        let p = self.p;
        let mean = self.k_mean_slope * self.loop_length_m;
        let sigma = self.k_sigma_log;
        let mut gains = vec![0.0; p * p];
        if mean == 0.0 {
            return gains;
        }
        let mu = mean.ln() - 0.5 * sigma * sigma;
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let mut r = rng::stream(seed, Purpose::CouplingGain, (i * p + j) as u64);
                let z: f64 = StandardNormal.sample(&mut r);
                gains[i * p + j] = (mu + sigma * z).exp();
            }
        }
        gains
    }
}

/// One tone's channel with its diagonal/off-diagonal split.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSnapshot {
    pub freq: f64,
    pub h: CMatrix,
    /// Diagonal of `h`.
    pub d: Vec<C64>,
    /// `h` with its diagonal zeroed.
    pub f: CMatrix,
    /// Row-dominance parameter of `h`.
    pub r: f64,
}

impl ChannelSnapshot {
    pub fn new(freq: f64, h: CMatrix) -> Result<Self> {
        if !h.is_square() || h.nrows() == 0 {
            return Err(Error::InvalidParams("channel matrix must be square".into()));
        }
        if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidParams("channel matrix has non-finite entries".into()));
        }
        let p = h.nrows();
        let d: Vec<C64> = (0..p).map(|i| h[(i, i)]).collect();
        if let Some(user) = d.iter().position(|z| z.norm() == 0.0) {
            return Err(Error::SingularDiagonal { tone: None, user });
        }
        let mut f = h.clone();
        for i in 0..p {
            f[(i, i)] = C64::new(0.0, 0.0);
        }
        let r = row_dominance(&h);
        Ok(Self { freq, h, d, f, r })
    }

    pub fn users(&self) -> usize {
        self.d.len()
    }

    /// `I + D^-1 F`, i.e. each row of `h` divided by its diagonal entry.
    pub fn normalized(&self) -> CMatrix {
        let p = self.users();
        let mut q = self.f.clone();
        for i in 0..p {
            let inv = self.d[i].inv();
            for j in 0..p {
                q[(i, j)] *= inv;
            }
            q[(i, i)] = C64::new(1.0, 0.0);
        }
        q
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelSource {
    Synthesized { params: WernerParams, seed: u64 },
    Loaded { path: PathBuf },
    Constructed,
}

#[derive(Clone, Debug)]
pub struct ChannelEnsemble {
    pub grid: ToneGrid,
    pub snapshots: Vec<ChannelSnapshot>,
    pub source: ChannelSource,
}

impl ChannelEnsemble {
    pub fn new(grid: ToneGrid, snapshots: Vec<ChannelSnapshot>, source: ChannelSource) -> Result<Self> {
        if snapshots.len() != grid.count() {
            return Err(Error::InvalidParams(format!(
                "{} snapshots for a {}-tone grid",
                snapshots.len(),
                grid.count()
            )));
        }
        let p = snapshots.first().map(ChannelSnapshot::users).unwrap_or(0);
        for (k, s) in snapshots.iter().enumerate() {
            if s.users() != p {
                return Err(Error::InvalidParams(format!(
                    "tone {k} has {} users, expected {p}",
                    s.users()
                )));
            }
            if s.freq != grid.freq(k) {
                return Err(Error::InvalidParams(format!(
                    "tone {k} frequency {} is off the grid ({})",
                    s.freq,
                    grid.freq(k)
                )));
            }
        }
        Ok(Self {
            grid,
            snapshots,
            source,
        })
    }

    pub fn users(&self) -> usize {
        self.snapshots.first().map(ChannelSnapshot::users).unwrap_or(0)
    }

    pub fn r_max(&self) -> f64 {
        self.snapshots.iter().map(|s| s.r).fold(0.0, f64::max)
    }

    /// Grid and matrices agree; provenance is ignored.
    pub fn same_channels(&self, other: &Self) -> bool {
        self.grid == other.grid && self.snapshots == other.snapshots
    }
}

/// Werner-model ensemble. Coupling gains are drawn once per ordered pair and
/// phases once per entry per tone, each from its own addressed stream, so the
/// result does not depend on how tones are scheduled.
pub fn synthesize_channel(params: &WernerParams, grid: &ToneGrid, seed: u64) -> Result<ChannelEnsemble> {
    params.validate()?;
    let p = params.p;
    let gains = params.coupling_gains(seed);
    let coupling: Vec<f64> = gains.iter().map(|k| k.sqrt()).collect();

    let snapshots: Vec<ChannelSnapshot> = (0..grid.count())
        .into_par_iter()
        .map(|k| {
            let freq = grid.freq(k);
            let il = params.insertion_loss(freq);
            let mut phases = rng::stream(seed, Purpose::EntryPhase, k as u64);
            let h = CMatrix::from_fn(p, p, |_, _| C64::new(0.0, 0.0));
            let mut h = h;
            // Row-major draw order, one draw per entry regardless of mode.
            for i in 0..p {
                for j in 0..p {
                    let u = rng::unit_uniform(&mut phases);
                    let mode = if i == j { params.diag_phase } else { params.offdiag_phase };
                    let phase = match mode {
                        PhaseMode::Uniform => std::f64::consts::TAU * u,
                        PhaseMode::Zero => 0.0,
                    };
                    let magnitude = if i == j { il } else { coupling[i * p + j] * freq * il };
                    h[(i, j)] = C64::from_polar(magnitude, phase);
                }
            }
            ChannelSnapshot::new(freq, h).map_err(|e| e.at_tone(k))
        })
        .collect::<Result<_>>()?;

    let mut worst: Option<(usize, f64)> = None;
    for (k, s) in snapshots.iter().enumerate() {
        if s.r > params.dominance_ceiling && worst.is_none_or(|(_, r)| s.r > r) {
            worst = Some((k, s.r));
        }
    }
    if let Some((tone, r)) = worst {
        match params.dominance_policy {
            DominancePolicy::Fail => {
                return Err(Error::DominanceViolation {
                    tone,
                    r,
                    ceiling: params.dominance_ceiling,
                })
            }
            DominancePolicy::Warn => log::warn!(
                "row dominance reaches {r:.4} at tone {tone}, above the ceiling {}",
                params.dominance_ceiling
            ),
        }
    }

    ChannelEnsemble::new(
        grid.clone(),
        snapshots,
        ChannelSource::Synthesized {
            params: params.clone(),
            seed,
        },
    )
}

/// Mean coupling slope that puts the expected worst-row dominance of a
/// synthesized binder at `target_r` for tone `freq`, averaged over
/// `draws` coupling draws starting at `seed`.
///
/// Synthesized dominance is `f * max_i sum_j sqrt(K_ij)`, so it scales with
/// `sqrt(k_mean_slope)` and a single Monte Carlo mean fixes the slope.
pub fn calibrate_k_mean_slope(
    template: &WernerParams,
    freq: f64,
    target_r: f64,
    draws: u64,
    seed: u64,
) -> Result<f64> {
    template.validate()?;
    if !(freq > 0.0 && target_r > 0.0 && draws > 0) {
        return Err(Error::InvalidParams(
            "calibration needs a positive frequency, target and draw count".into(),
        ));
    }
    let unit = WernerParams {
        k_mean_slope: 1.0 / template.loop_length_m,
        ..template.clone()
    };
    let p = template.p;
    let mean_worst = (0..draws)
        .into_par_iter()
        .map(|n| {
            let gains = unit.coupling_gains(seed.wrapping_add(n));
            gains
                .chunks(p)
                .map(|row| row.iter().map(|k| k.sqrt()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / draws as f64;
    let scale = target_r / (freq * mean_worst);
    Ok(scale * scale / template.loop_length_m)
}

/// Least-squares line through `(x, y)`: returns `(intercept, slope)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParams("fit needs equally many x and y values".into()));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData("line fit needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("line fit needs two distinct abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    Ok((y_mean - slope * x_mean, slope))
}

/// `r(H(f)) ~ gamma1 + gamma2 * f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowDominanceFit {
    pub gamma1: f64,
    pub gamma2: f64,
    pub max_residual: f64,
}

impl RowDominanceFit {
    pub fn at(&self, freq: f64) -> f64 {
        self.gamma1 + self.gamma2 * freq
    }
}

pub fn fit_row_dominance(ensemble: &ChannelEnsemble) -> Result<RowDominanceFit> {
    if ensemble.snapshots.len() < 2 {
        return Err(Error::InsufficientData(
            "row-dominance fit needs at least two tones".into(),
        ));
    }
    let xs: Vec<f64> = ensemble.snapshots.iter().map(|s| s.freq).collect();
    let ys: Vec<f64> = ensemble.snapshots.iter().map(|s| s.r).collect();
    let (gamma1, gamma2) = fit_line(&xs, &ys)?;
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - gamma1 - gamma2 * x).abs())
        .fold(0.0, f64::max);
    Ok(RowDominanceFit {
        gamma1,
        gamma2,
        max_residual,
    })
}

/// Aggregate `alpha * length`: least-squares slope through the origin of
/// `-ln|H_ii(f)|` against `sqrt(f)`, pooled over users and tones.
pub fn fit_alpha(ensemble: &ChannelEnsemble) -> Result<f64> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (k, s) in ensemble.snapshots.iter().enumerate() {
        let x = s.freq.sqrt();
        for (user, d) in s.d.iter().enumerate() {
            let m = d.norm();
            if m == 0.0 {
                return Err(Error::SingularDiagonal {
                    tone: Some(k),
                    user,
                });
            }
            sxx += x * x;
            sxy += x * -m.ln();
        }
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "attenuation fit needs a tone above 0 Hz".into(),
        ));
    }
    Ok(sxy / sxx)
}
