use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use xtalk_core::bounds::WernerBoundParams;
use xtalk_core::channel::{
    synthesize_channel, ChannelEnsemble, PhaseMode, ToneGrid, WernerParams, DEFAULT_K_MEAN_SLOPE, DEFAULT_K_SIGMA_LOG,
    BINDER_ALPHA_ELL, REFERENCE_LENGTH_M,
};
use xtalk_core::channel_file::load_channel;
use xtalk_core::monte_carlo::{Statistic, TrialConfig, UserSelection};
use xtalk_core::precoding::{E1Model, E2Model, PerturbationSpec};
use xtalk_core::rate::{LinkBudget, PsdProfile};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Load matrices from this file instead of synthesizing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Attenuation `alpha * length` at `reference_m`.
    pub alpha_ell: f64,
    pub reference_m: f64,
    pub length_m: f64,
    pub users: usize,
    pub band_hz: f64,
    pub decimation: usize,
    pub seed: u64,
    pub k_mean_slope: f64,
    pub k_sigma_log: f64,
    pub diag_phase: PhaseMode,
    pub offdiag_phase: PhaseMode,
    pub dominance_ceiling: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            file: None,
            alpha_ell: BINDER_ALPHA_ELL,
            reference_m: REFERENCE_LENGTH_M,
            length_m: REFERENCE_LENGTH_M,
            users: 10,
            band_hz: 30e6,
            decimation: 13,
            seed: 1,
            k_mean_slope: DEFAULT_K_MEAN_SLOPE,
            k_sigma_log: DEFAULT_K_SIGMA_LOG,
            diag_phase: PhaseMode::Uniform,
            offdiag_phase: PhaseMode::Uniform,
            dominance_ceiling: 1.5,
        }
    }
}

impl ChannelConfig {
    pub fn werner(&self) -> WernerParams {
        let mut params = WernerParams::from_aggregate(self.alpha_ell, self.reference_m, self.users).with_length(self.length_m);
        params.k_mean_slope = self.k_mean_slope;
        params.k_sigma_log = self.k_sigma_log;
        params.diag_phase = self.diag_phase;
        params.offdiag_phase = self.offdiag_phase;
        params.dominance_ceiling = self.dominance_ceiling;
        params
    }

    pub fn grid(&self) -> Result<ToneGrid, CliError> {
        Ok(ToneGrid::dmt(self.band_hz, self.decimation)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub psd_dbm_hz: f64,
    /// Flat PSD per user, overrides `psd_dbm_hz`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psd_per_user_dbm_hz: Option<Vec<f64>>,
    pub noise_dbm_hz: f64,
    pub gap_db: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            psd_dbm_hz: -60.0,
            psd_per_user_dbm_hz: None,
            noise_dbm_hz: -140.0,
            gap_db: 10.7,
        }
    }
}

impl BudgetConfig {
    pub fn link_budget(&self, grid: ToneGrid) -> LinkBudget {
        let psd = match &self.psd_per_user_dbm_hz {
            Some(levels) => PsdProfile::PerUser(levels.clone()),
            None => PsdProfile::Flat(self.psd_dbm_hz),
        };
        LinkBudget {
            psd,
            noise_psd_dbm_hz: self.noise_dbm_hz,
            gamma_gap_db: self.gap_db,
            grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub d_bits: u32,
    /// Rounding for `analyze`, uniform draws for `simulate` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e2_model: Option<E2Model>,
    /// Defaults to on for rounding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    pub seed: u64,
    /// Training symbols per channel estimate; absent means perfect CSI.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csi_samples: Option<u64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            d_bits: 14,
            e2_model: None,
            normalize: None,
            seed: 0,
            csi_samples: None,
        }
    }
}

impl PerturbationConfig {
    pub fn spec(&self, default_model: E2Model) -> PerturbationSpec {
        let model = self.e2_model.unwrap_or(default_model);
        let mut spec = PerturbationSpec::new(self.d_bits, model, self.seed);
        spec.normalize = self.normalize.unwrap_or(model == E2Model::DeterministicRounding);
        spec.e1_model = match self.csi_samples {
            Some(n_samples) => E1Model::Gaussian { n_samples },
            None => E1Model::None,
        };
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialsConfig {
    pub n: usize,
    pub statistic: Statistic,
    pub skip_failures: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users: Option<Vec<usize>>,
    /// Word lengths evaluated on shared draws; defaults to the perturbation's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_bits: Option<Vec<u32>>,
}

impl Default for TrialsConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            statistic: Statistic::WorstCase,
            skip_failures: false,
            users: None,
            d_bits: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub d_min: u32,
    pub d_max: u32,
    /// Row-dominance line at `reference_m`; fitted from the channel when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            d_min: 8,
            d_max: 20,
            gamma1: None,
            gamma2: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub channel: ChannelConfig,
    pub budget: BudgetConfig,
    pub perturbation: PerturbationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<TrialsConfig>,
    pub bound: BoundConfig,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    /// SHA-256 of the canonical serialization, hex.
    pub fn sha256(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn trials(&self) -> TrialsConfig {
        self.trials.clone().unwrap_or_default()
    }

    pub fn trial_config(&self) -> TrialConfig {
        let trials = self.trials();
        let mut config = TrialConfig::new(trials.n, self.perturbation.spec(E2Model::UniformRandom));
        config.statistic = trials.statistic;
        config.skip_failures = trials.skip_failures;
        config.users = match trials.users {
            Some(users) => UserSelection::Subset(users),
            None => UserSelection::All,
        };
        config
    }

    pub fn ensemble(&self) -> Result<ChannelEnsemble, CliError> {
        match &self.channel.file {
            Some(path) => Ok(load_channel(path)?),
            None => Ok(synthesize_channel(&self.channel.werner(), &self.channel.grid()?, self.channel.seed)?),
        }
    }

    /// Largest transmit-to-noise ratio over the users at the bottom of the band.
    fn snr0(&self, budget: &LinkBudget, users: usize) -> Result<f64, CliError> {
        let f0 = budget.grid.f_start();
        let mut best = 0.0f64;
        for u in 0..users {
            best = best.max(budget.psd_mw(u, f0)? / budget.noise_mw());
        }
        Ok(best)
    }

    /// Werner bound parameters at the configured loop length. Explicit
    /// `gamma1`/`gamma2` are taken at the reference length and scaled;
    /// otherwise the row-dominance line is fitted from `ensemble`.
    pub fn werner_bound(&self, ensemble: Option<&ChannelEnsemble>) -> Result<WernerBoundParams, CliError> {
        let ch = &self.channel;
        match (self.bound.gamma1, self.bound.gamma2) {
            (Some(gamma1), Some(gamma2)) => {
                let grid = ch.grid()?;
                let budget = self.budget.link_budget(grid);
                let template = WernerBoundParams {
                    alpha_ell: ch.alpha_ell,
                    gamma1,
                    gamma2,
                    p: ch.users,
                    snr0: self.snr0(&budget, ch.users)?,
                    gap: budget.gap(),
                    band: ch.band_hz,
                };
                Ok(xtalk_core::design::params_at_length(&template, ch.reference_m, ch.length_m))
            }
            (None, None) => {
                let ensemble = ensemble.ok_or_else(|| CliError::Config("row-dominance fit needs a channel".into()))?;
                let fit = xtalk_core::channel::fit_row_dominance(ensemble)?;
                let alpha_ell = match ch.file {
                    Some(_) => xtalk_core::channel::fit_alpha(ensemble)?,
                    None => ch.werner().alpha_ell(),
                };
                let budget = self.budget.link_budget(ensemble.grid.clone());
                let p = ensemble.users();
                Ok(WernerBoundParams::from_fit(
                    alpha_ell,
                    &fit,
                    p,
                    self.snr0(&budget, p)?,
                    budget.gap(),
                    ensemble.grid.f_end(),
                ))
            }
            _ => Err(CliError::Config("bound.gamma1 and bound.gamma2 must be given together".into())),
        }
    }

    /// Whether Werner bound parameters can be formed without a channel.
    pub fn has_explicit_dominance(&self) -> bool {
        self.bound.gamma1.is_some() && self.bound.gamma2.is_some()
    }
}
