//! Seeded Monte Carlo trials of quantization (and estimation) error.
//!
//! Each `(trial, tone)` cell owns its random streams, so results do not
//! depend on thread count or scheduling. Uniform quantization errors are
//! drawn once per cell as `U` with components in `[-1, 1)` and scaled to
//! `2^-d U` for every word length `d`: all word lengths see the same draws,
//! which makes the worst case monotone in `d`.
//!
//! Band losses are reported two ways. `band_per_bin` applies the statistic
//! in every bin and integrates the result (a worst case picked per bin);
//! `band_per_trial` integrates each trial over the band first and then
//! applies the statistic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelEnsemble, ToneGrid};
use crate::error::{Error, Result};
use crate::linalg::{invert_refined, CMatrix, C64};
use crate::precoding::{gaussian_error, ideal_precoder, uniform_error, E1Model, E2Model, PerturbationSpec};
use crate::rate::{log2_1p, tone_loss, BandLoss, LinkBudget};
use crate::rng::{self, cell_index, Purpose};

/// How often a singular estimated channel is redrawn before the trial fails.
pub const MAX_RETRIES: usize = 16;

/// Tones per reduction chunk; fixed so that sums do not depend on threads.
const CHUNK_TONES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    WorstCase,
    Mean,
    /// Nearest-rank quantile, `0 < q < 1`.
    Quantile(f64),
}

impl Statistic {
    fn validate(&self) -> Result<()> {
        if let Statistic::Quantile(q) = self {
            if !(*q > 0.0 && *q < 1.0) {
                return Err(Error::InvalidParams(format!("quantile must lie in (0, 1), got {q}")));
            }
        }
        Ok(())
    }

    /// Applies the statistic to `values`, which it may reorder.
    pub fn apply(&self, values: &mut [f64]) -> f64 {
        if values.is_empty() {
            return f64::NAN;
        }
        match self {
            Statistic::WorstCase => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Statistic::Quantile(q) => {
                values.sort_by(f64::total_cmp);
                let rank = (q * values.len() as f64).ceil() as usize;
                values[rank.clamp(1, values.len()) - 1]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UserSelection {
    #[default]
    All,
    Subset(Vec<usize>),
}

impl UserSelection {
    pub fn resolve(&self, p: usize) -> Result<Vec<usize>> {
        match self {
            UserSelection::All => Ok((0..p).collect()),
            UserSelection::Subset(users) => {
                if users.is_empty() {
                    return Err(Error::InvalidParams("user subset is empty".into()));
                }
                if let Some(&u) = users.iter().find(|&&u| u >= p) {
                    return Err(Error::InvalidParams(format!("user {u} does not exist (p = {p})")));
                }
                Ok(users.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n_trials: usize,
    pub spec: PerturbationSpec,
    #[serde(default)]
    pub users: UserSelection,
    #[serde(default)]
    pub statistic: Statistic,
    /// Record failing trials and leave them out instead of aborting.
    #[serde(default)]
    pub skip_failures: bool,
}

impl TrialConfig {
    pub fn new(n_trials: usize, spec: PerturbationSpec) -> Self {
        Self {
            n_trials,
            spec,
            users: UserSelection::All,
            statistic: Statistic::WorstCase,
            skip_failures: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidParams("need at least one trial".into()));
        }
        self.spec.validate()?;
        self.statistic.validate()
    }
}

/// Channel-estimation error: `n_samples` training symbols per estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiErrorModel {
    pub n_samples: u64,
}

/// Statistics of one `(user, tone)` cell over the trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialCell {
    pub freq: f64,
    /// Ideal rate in bit/s/Hz.
    pub rate: f64,
    /// Configured statistic of the exact loss.
    pub loss: f64,
    pub worst: f64,
    pub mean: f64,
    /// Largest `max_j |Delta_ij|` seen in the user's row.
    pub t_max: f64,
    pub trials: usize,
}

impl TrialCell {
    /// Per-tone relative loss of the statistic.
    pub fn eta(&self) -> Option<f64> {
        (self.rate > 0.0).then(|| self.loss / self.rate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub tone: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub d_bits: u32,
    pub statistic: Statistic,
    pub grid: ToneGrid,
    pub users: Vec<usize>,
    /// `per_tone[u][k]` for user `users[u]`.
    pub per_tone: Vec<Vec<TrialCell>>,
    /// Statistic per bin, then integrated.
    pub band_per_bin: Vec<BandLoss>,
    /// Band loss per trial, then the statistic.
    pub band_per_trial: Vec<BandLoss>,
    /// Trials with no failed tone.
    pub complete_trials: usize,
    pub failures: Vec<TrialFailure>,
}

impl TrialReport {
    /// Largest per-bin-statistic relative band loss over the users.
    pub fn worst_eta(&self) -> f64 {
        self.band_per_bin
            .iter()
            .filter_map(BandLoss::eta_opt)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct ToneSetup {
    q: CMatrix,
    p_ideal: CMatrix,
    scale: f64,
    psd: Vec<f64>,
    snr: Vec<f64>,
    rates: Vec<f64>,
}

fn setup_tone(ensemble: &ChannelEnsemble, budget: &LinkBudget, spec: &PerturbationSpec, k: usize) -> Result<ToneSetup> {
    let s = &ensemble.snapshots[k];
    let p_ideal = ideal_precoder(s).map_err(|e| e.at_tone(k))?;
    let largest = p_ideal.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
    // Only a rounding quantizer has a storage range; uniform errors are drawn
    // directly in the unit of the precoder.
    let rounding = spec.e2_model == E2Model::DeterministicRounding;
    let scale = if rounding && spec.normalize && largest > 1.0 { largest } else { 1.0 };
    if rounding && scale == 1.0 {
        for i in 0..p_ideal.nrows() {
            for j in 0..p_ideal.ncols() {
                let z = p_ideal[(i, j)];
                for value in [z.re, z.im] {
                    if value.abs() > 1.0 {
                        return Err(Error::RangeError { row: i, col: j, value });
                    }
                }
            }
        }
    }
    let psd = budget.psd_all(s.users(), s.freq)?;
    let snr = budget.snr_all(s)?;
    let gap = budget.gap();
    let rates = snr.iter().map(|x| log2_1p(x / gap)).collect();
    Ok(ToneSetup {
        q: s.normalized(),
        p_ideal,
        scale,
        psd,
        snr,
        rates,
    })
}

fn round_error(p: &CMatrix, scale: f64, d: u32) -> CMatrix {
    let levels = (d as f64).exp2();
    let r = |x: f64| (x * levels).round() / levels - x;
    let s = C64::new(scale, 0.0);
    p.map(|z| {
        let w = z / s;
        C64::new(r(w.re), r(w.im)) * s
    })
}

/// Accumulates one `(d, user)` cell of a tone.
#[derive(Clone)]
struct CellAcc {
    worst: f64,
    sum: f64,
    count: usize,
    t_max: f64,
    values: Vec<f64>,
}

impl CellAcc {
    fn new(keep: bool, n: usize) -> Self {
        Self {
            worst: f64::NEG_INFINITY,
            sum: 0.0,
            count: 0,
            t_max: 0.0,
            values: if keep { Vec::with_capacity(n) } else { Vec::new() },
        }
    }
}

struct ChunkResult {
    /// `cells[tone_in_chunk][d][u]`.
    cells: Vec<Vec<Vec<TrialCell>>>,
    /// `band[d][u][trial]`.
    band: Vec<Vec<Vec<f64>>>,
    failed: Vec<bool>,
    failures: Vec<TrialFailure>,
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    ensemble: &ChannelEnsemble,
    budget: &LinkBudget,
    config: &TrialConfig,
    csi: Option<CsiErrorModel>,
    ds: &[u32],
    users: &[usize],
    tones: std::ops::Range<usize>,
) -> Result<ChunkResult> {
    let n = config.n_trials;
    let spec = &config.spec;
    let keep = matches!(config.statistic, Statistic::Quantile(_));
    let spacing = ensemble.grid.spacing();
    let gap = budget.gap();
    let mut band = vec![vec![vec![0.0; n]; users.len()]; ds.len()];
    let mut failed = vec![false; n];
    let mut failures = Vec::new();
    let mut cells = Vec::with_capacity(tones.len());

    for k in tones {
        let snapshot = &ensemble.snapshots[k];
        let setup = setup_tone(ensemble, budget, spec, k)?;
        let p = snapshot.users();
        let mut accs = vec![vec![CellAcc::new(keep, n); users.len()]; ds.len()];

        for trial in 0..n {
            let cell = cell_index(trial, k);
            // Estimation error and the precoder the quantizer sees.
            let estimate = match csi {
                None => None,
                Some(model) => {
                    let mut draws = rng::stream(spec.seed, Purpose::EstimationError, cell);
                    let mut attempt = 0;
                    loop {
                        let e1 = gaussian_error(model.n_samples, &setup.snr, &mut draws)?;
                        match invert_refined(&(&setup.q + &e1)) {
                            Ok((inv, _)) => break Some(Ok((e1, inv))),
                            Err(condition) => {
                                attempt += 1;
                                log::debug!("trial {trial}, tone {k}: singular estimate, redrawing");
                                if attempt > MAX_RETRIES {
                                    break Some(Err(Error::SingularChannel {
                                        tone: Some(k),
                                        freq: snapshot.freq,
                                        condition,
                                    }));
                                }
                            }
                        }
                    }
                }
            };
            let (correction, source) = match estimate {
                None => (None, setup.p_ideal.clone()),
                Some(Ok((e1, inv))) => (Some(&e1 * &inv), inv),
                Some(Err(source)) => {
                    if config.skip_failures {
                        failed[trial] = true;
                        failures.push(TrialFailure {
                            trial,
                            tone: k,
                            message: source.to_string(),
                        });
                        continue;
                    }
                    return Err(Error::TrialFailed {
                        trial,
                        tone: k,
                        source: Box::new(source),
                    });
                }
            };

            let uniform = match spec.e2_model {
                E2Model::UniformRandom => {
                    let mut draws = rng::stream(spec.seed, Purpose::QuantizationError, cell);
                    let u = uniform_error(p, setup.scale, &mut draws);
                    Some(&setup.q * u)
                }
                _ => None,
            };

            for (di, &d) in ds.iter().enumerate() {
                let qe2 = match spec.e2_model {
                    E2Model::UniformRandom => uniform.as_ref().expect("drawn above") * C64::new((-(d as f64)).exp2(), 0.0),
                    E2Model::DeterministicRounding => &setup.q * round_error(&source, setup.scale, d),
                    E2Model::Zero => CMatrix::zeros(p, p),
                };
                let delta = match &correction {
                    None => qe2,
                    Some(c) => qe2 - c,
                };
                for (ui, &u) in users.iter().enumerate() {
                    let loss = tone_loss(snapshot.freq, &setup.psd, setup.snr[u], gap, &delta, u)
                        .map_err(|e| e.at_tone(k))?
                        .loss;
                    let t = (0..p).map(|j| delta[(u, j)].norm()).fold(0.0, f64::max);
                    let acc = &mut accs[di][ui];
                    acc.worst = acc.worst.max(loss);
                    acc.sum += loss;
                    acc.count += 1;
                    acc.t_max = acc.t_max.max(t);
                    if keep {
                        acc.values.push(loss);
                    }
                    band[di][ui][trial] += spacing * loss;
                }
            }
        }

        let tone_cells = accs
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .zip(users)
                    .map(|(mut acc, &u)| {
                        let mean = acc.sum / acc.count as f64;
                        let loss = match config.statistic {
                            Statistic::WorstCase => acc.worst,
                            Statistic::Mean => mean,
                            Statistic::Quantile(_) => config.statistic.apply(&mut acc.values),
                        };
                        TrialCell {
                            freq: snapshot.freq,
                            rate: setup.rates[u],
                            loss,
                            worst: acc.worst,
                            mean,
                            t_max: acc.t_max,
                            trials: acc.count,
                        }
                    })
                    .collect()
            })
            .collect();
        cells.push(tone_cells);
    }
    Ok(ChunkResult {
        cells,
        band,
        failed,
        failures,
    })
}

fn run(
    ensemble: &ChannelEnsemble,
    budget: &LinkBudget,
    config: &TrialConfig,
    csi: Option<CsiErrorModel>,
    ds: &[u32],
) -> Result<Vec<TrialReport>> {
    config.validate()?;
    budget.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidParams("no word lengths requested".into()));
    }
    for &d in ds {
        PerturbationSpec { d_bits: d, ..config.spec.clone() }.validate()?;
    }
    if let Some(model) = csi {
        if model.n_samples == 0 {
            return Err(Error::InvalidParams("estimation needs at least one sample".into()));
        }
    }
    let users = config.users.resolve(ensemble.users())?;
    let count = ensemble.snapshots.len();
    let chunks: Vec<std::ops::Range<usize>> = (0..count)
        .step_by(CHUNK_TONES)
        .map(|start| start..(start + CHUNK_TONES).min(count))
        .collect();
    let results = chunks
        .into_par_iter()
        .map(|tones| run_chunk(ensemble, budget, config, csi, ds, &users, tones))
        .collect::<Result<Vec<_>>>()?;

    let n = config.n_trials;
    let mut failed = vec![false; n];
    let mut failures = Vec::new();
    let mut band = vec![vec![vec![0.0; n]; users.len()]; ds.len()];
    let mut cells: Vec<Vec<Vec<TrialCell>>> = vec![vec![Vec::with_capacity(count); users.len()]; ds.len()];
    for chunk in results {
        for (f, c) in failed.iter_mut().zip(&chunk.failed) {
            *f |= *c;
        }
        failures.extend(chunk.failures);
        for (di, per_user) in chunk.band.iter().enumerate() {
            for (ui, trials) in per_user.iter().enumerate() {
                for (acc, x) in band[di][ui].iter_mut().zip(trials) {
                    *acc += x;
                }
            }
        }
        for tone in chunk.cells {
            for (di, per_user) in tone.into_iter().enumerate() {
                for (ui, cell) in per_user.into_iter().enumerate() {
                    cells[di][ui].push(cell);
                }
            }
        }
    }
    failures.sort_by_key(|f| (f.trial, f.tone));
    let complete_trials = failed.iter().filter(|f| !**f).count();
    let spacing = ensemble.grid.spacing();

    Ok(ds
        .iter()
        .enumerate()
        .map(|(di, &d)| {
            let per_tone = std::mem::take(&mut cells[di]);
            let band_per_bin = per_tone
                .iter()
                .map(|tones| BandLoss {
                    rate: spacing * tones.iter().map(|c| c.rate).sum::<f64>(),
                    loss: spacing * tones.iter().map(|c| c.loss).sum::<f64>(),
                })
                .collect();
            let band_per_trial = per_tone
                .iter()
                .zip(&band[di])
                .map(|(tones, trials)| {
                    let mut kept: Vec<f64> = trials
                        .iter()
                        .zip(&failed)
                        .filter(|(_, f)| !**f)
                        .map(|(x, _)| *x)
                        .collect();
                    BandLoss {
                        rate: spacing * tones.iter().map(|c| c.rate).sum::<f64>(),
                        loss: config.statistic.apply(&mut kept),
                    }
                })
                .collect();
            TrialReport {
                d_bits: d,
                statistic: config.statistic,
                grid: ensemble.grid.clone(),
                users: users.clone(),
                per_tone,
                band_per_bin,
                band_per_trial,
                complete_trials,
                failures: failures.clone(),
            }
        })
        .collect())
}

/// Quantization-only trials at `config.spec.d_bits`.
pub fn run_trials(ensemble: &ChannelEnsemble, budget: &LinkBudget, config: &TrialConfig) -> Result<TrialReport> {
    let mut reports = run_trials_multi(ensemble, budget, config, &[config.spec.d_bits])?;
    Ok(reports.remove(0))
}

/// Trials at several word lengths sharing the same draws. Estimation error
/// follows `config.spec.e1_model`.
pub fn run_trials_multi(ensemble: &ChannelEnsemble, budget: &LinkBudget, config: &TrialConfig, ds: &[u32]) -> Result<Vec<TrialReport>> {
    let csi = match config.spec.e1_model {
        E1Model::None => None,
        E1Model::Gaussian { n_samples } => Some(CsiErrorModel { n_samples }),
    };
    run(ensemble, budget, config, csi, ds)
}

/// Trials with both estimation and quantization error.
pub fn run_trials_with_csi_error(
    ensemble: &ChannelEnsemble,
    budget: &LinkBudget,
    config: &TrialConfig,
    csi: CsiErrorModel,
) -> Result<TrialReport> {
    let mut reports = run(ensemble, budget, config, Some(csi), &[config.spec.d_bits])?;
    Ok(reports.remove(0))
}

/// Several word lengths with shared estimation and quantization draws.
pub fn run_trials_with_csi_error_multi(
    ensemble: &ChannelEnsemble,
    budget: &LinkBudget,
    config: &TrialConfig,
    csi: CsiErrorModel,
    ds: &[u32],
) -> Result<Vec<TrialReport>> {
    run(ensemble, budget, config, Some(csi), ds)
}

/// Upper end of the empirical word-length search.
pub const EMPIRICAL_MAX_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBits {
    pub bits: u32,
    /// Worst relative band loss over the users at `bits`.
    pub eta: f64,
}

/// Smallest word length whose relative band loss (statistic per bin,
/// worst user) is at most `target_eta`, by bisection over `1..=32`.
pub fn min_bits_empirical(
    ensemble: &ChannelEnsemble,
    budget: &LinkBudget,
    config: &TrialConfig,
    target_eta: f64,
) -> Result<EmpiricalBits> {
    if !(target_eta > 0.0 && target_eta <= 1.0) {
        return Err(Error::InvalidParams(format!("relative target must lie in (0, 1], got {target_eta}")));
    }
    let eta_at = |d: u32| -> Result<f64> {
        let mut c = config.clone();
        c.spec.d_bits = d;
        let report = run_trials(ensemble, budget, &c)?;
        Ok(report.worst_eta())
    };
    let top = eta_at(EMPIRICAL_MAX_BITS)?;
    if !(top <= target_eta) {
        return Err(Error::TargetUnreachable {
            max_bits: EMPIRICAL_MAX_BITS,
        });
    }
    let (mut lo, mut hi, mut hi_eta) = (1u32, EMPIRICAL_MAX_BITS, top);
    let bottom = eta_at(lo)?;
    if bottom <= target_eta {
        return Ok(EmpiricalBits { bits: lo, eta: bottom });
    }
    // Invariant: eta(lo) > target >= eta(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let eta = eta_at(mid)?;
        if eta <= target_eta {
            hi = mid;
            hi_eta = eta;
        } else {
            lo = mid;
        }
    }
    Ok(EmpiricalBits { bits: hi, eta: hi_eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_channel, WernerParams};

    fn small() -> (ChannelEnsemble, LinkBudget) {
        let mut params = WernerParams::reference_binder();
        params.p = 4;
        let grid = ToneGrid::dmt(30e6, 400).unwrap();
        let e = synthesize_channel(&params, &grid, 8).unwrap();
        (e, LinkBudget::reference(grid))
    }

    #[test]
    fn statistics() {
        let mut v = vec![3.0, 1.0, 2.0, 4.0];
        assert_eq!(Statistic::WorstCase.apply(&mut v), 4.0);
        assert_eq!(Statistic::Mean.apply(&mut v), 2.5);
        assert_eq!(Statistic::Quantile(0.5).apply(&mut v), 2.0);
        assert_eq!(Statistic::Quantile(0.99).apply(&mut v), 4.0);
        assert!(Statistic::Quantile(1.0).validate().is_err());
    }

    #[test]
    fn zero_errors_lose_nothing() {
        let (e, b) = small();
        let config = TrialConfig::new(1, PerturbationSpec::new(10, E2Model::Zero, 0));
        let r = run_trials(&e, &b, &config).unwrap();
        assert!(r.per_tone.iter().flatten().all(|c| c.loss == 0.0));
        assert!(r.band_per_bin.iter().all(|b| b.loss == 0.0));
    }

    #[test]
    fn multi_matches_single() {
        let (e, b) = small();
        let config = TrialConfig::new(20, PerturbationSpec::new(9, E2Model::UniformRandom, 4));
        let single = run_trials(&e, &b, &config).unwrap();
        let multi = run_trials_multi(&e, &b, &config, &[7, 9, 11]).unwrap();
        assert_eq!(multi[1], single);
        for u in 0..4 {
            assert!(multi[0].band_per_bin[u].loss >= multi[1].band_per_bin[u].loss);
            assert!(multi[1].band_per_bin[u].loss >= multi[2].band_per_bin[u].loss);
        }
    }

    #[test]
    fn per_bin_worst_dominates_per_trial_worst() {
        let (e, b) = small();
        let config = TrialConfig::new(30, PerturbationSpec::new(10, E2Model::UniformRandom, 1));
        let r = run_trials(&e, &b, &config).unwrap();
        for (bin, trial) in r.band_per_bin.iter().zip(&r.band_per_trial) {
            assert!(bin.loss >= trial.loss * (1.0 - 1e-12));
        }
    }

    #[test]
    fn user_subset() {
        let (e, b) = small();
        let mut config = TrialConfig::new(5, PerturbationSpec::new(10, E2Model::UniformRandom, 1));
        config.users = UserSelection::Subset(vec![2]);
        let r = run_trials(&e, &b, &config).unwrap();
        assert_eq!(r.users, vec![2]);
        assert_eq!(r.per_tone.len(), 1);
        config.users = UserSelection::Subset(vec![9]);
        assert!(run_trials(&e, &b, &config).is_err());
    }

    #[test]
    fn full_target_needs_one_bit() {
        let (e, b) = small();
        let config = TrialConfig::new(5, PerturbationSpec::new(10, E2Model::UniformRandom, 1));
        assert_eq!(min_bits_empirical(&e, &b, &config, 1.0).unwrap().bits, 1);
    }
}
