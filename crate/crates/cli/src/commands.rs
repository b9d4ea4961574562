use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use xtalk_core::bounds::{
    bound_general_per_tone, bound_main_band, bound_relative, bound_simplified_per_tone, bound_werner_decay, BoundInputs,
};
use xtalk_core::channel::{fit_alpha, fit_row_dominance, synthesize_channel, ChannelEnsemble};
use xtalk_core::channel_file::{load_channel, save_channel};
use xtalk_core::design::{bits_for_relative_loss, bits_for_tone_loss, sweep_bits_vs_loop_length};
use xtalk_core::monte_carlo::run_trials_multi;
use xtalk_core::precoding::{delta_entry_bound_for, E1Model, E2Model, PrecoderBundle};
use xtalk_core::rate::{loss_report, LinkBudget};
use xtalk_core::report::{loss_table, sweep_table, trial_table, Cell, ReportMeta, Table};
use xtalk_core::units::linear_to_db;
use xtalk_core::Error as CoreError;

use crate::error::{core_exit_code, CliError, EXIT_BOUND};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum WhichBound {
    General,
    Main,
    Simplified,
    Werner,
    Relative,
    All,
}

pub enum ToneTarget {
    /// Absolute loss in bit/s/Hz on every tone (or one tone).
    Tone { t: f64, freq: Option<f64> },
    /// Fraction of the band rate.
    Relative { tau: f64 },
}

fn meta(kind: &str, scenario: &Scenario) -> ReportMeta {
    ReportMeta::new(kind, env!("CARGO_PKG_VERSION"), Some(scenario.sha256()))
}

fn emit(table: &Table, meta: &ReportMeta, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let write_err = |source| CliError::Write {
                path: path.to_path_buf(),
                source,
            };
            let file = std::fs::File::create(path).map_err(write_err)?;
            let mut buf = std::io::BufWriter::new(file);
            table.write(&mut buf, meta)?;
            buf.flush().map_err(write_err)?;
        }
        None => table.write(std::io::stdout().lock(), meta)?,
    }
    Ok(())
}

fn summarize_channel(ensemble: &ChannelEnsemble) {
    let rs: Vec<f64> = ensemble.snapshots.iter().map(|s| s.r).collect();
    let r_min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_mean = rs.iter().sum::<f64>() / rs.len() as f64;
    println!(
        "tones: {} ({:.1} Hz to {:.1} Hz, spacing {} Hz)",
        ensemble.grid.count(),
        ensemble.grid.f_start(),
        ensemble.grid.f_end(),
        ensemble.grid.spacing()
    );
    println!("users: {}", ensemble.users());
    println!("r(H): min {r_min:.6}, mean {r_mean:.6}, max {:.6}", ensemble.r_max());
    match fit_row_dominance(ensemble) {
        Ok(fit) => println!(
            "r(f) fit: gamma1 = {:.6e}, gamma2 = {:.6e} /Hz, max residual {:.3e}",
            fit.gamma1, fit.gamma2, fit.max_residual
        ),
        Err(e) => println!("r(f) fit: unavailable ({e})"),
    }
}

pub fn synth_channel(scenario: &Scenario, out: &Path) -> Result<(), CliError> {
    if scenario.channel.file.is_some() {
        return Err(CliError::Config("synth-channel needs Werner parameters, not a channel file".into()));
    }
    let ensemble = synthesize_channel(&scenario.channel.werner(), &scenario.channel.grid()?, scenario.channel.seed)?;
    save_channel(out, &ensemble)?;
    println!("wrote {}", out.display());
    summarize_channel(&ensemble);
    Ok(())
}

pub fn inspect_channel(path: &Path) -> Result<(), CliError> {
    let ensemble = load_channel(path)?;
    summarize_channel(&ensemble);
    match fit_alpha(&ensemble) {
        Ok(alpha_ell) => println!("insertion-loss fit: alpha * length = {alpha_ell:.6e} /sqrt(Hz)"),
        Err(e) => println!("insertion-loss fit: unavailable ({e})"),
    }
    Ok(())
}

fn deltas(ensemble: &ChannelEnsemble, budget: &LinkBudget, scenario: &Scenario) -> Result<Vec<xtalk_core::linalg::CMatrix>, CliError> {
    let spec = scenario.perturbation.spec(E2Model::DeterministicRounding);
    let deltas = ensemble
        .snapshots
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let snr = budget.snr_all(s).map_err(|e| e.at_tone(k))?;
            PrecoderBundle::perturb(s, &spec, &snr, k as u64)
                .map(|b| b.delta)
                .map_err(|e| e.at_tone(k))
        })
        .collect::<Result<Vec<_>, CoreError>>()?;
    Ok(deltas)
}

pub fn analyze(scenario: &Scenario, out: Option<&Path>) -> Result<(), CliError> {
    let ensemble = scenario.ensemble()?;
    let budget = scenario.budget.link_budget(ensemble.grid.clone());
    let deltas = deltas(&ensemble, &budget, scenario)?;
    let report = loss_report(&budget, &ensemble, &deltas)?;
    for (u, band) in report.users.iter().zip(&report.band) {
        match band.eta_opt() {
            Some(eta) => eprintln!("user {u}: band loss {:.6e} bit/s, eta {:.6e}", band.loss, eta),
            None => eprintln!("user {u}: band loss {:.6e} bit/s, eta undefined", band.loss),
        }
    }
    emit(&loss_table(&report), &meta("analyze", scenario), out)
}

/// Per-tone SNR of the strongest user and the largest PSD dynamic range.
fn band_inputs(ensemble: &ChannelEnsemble, budget: &LinkBudget) -> Result<(Vec<f64>, f64), CliError> {
    let p = ensemble.users();
    let mut snr = Vec::with_capacity(ensemble.grid.count());
    let mut rho = 1.0f64;
    for (k, s) in ensemble.snapshots.iter().enumerate() {
        let all = budget.snr_all(s).map_err(|e| e.at_tone(k))?;
        snr.push(all.into_iter().fold(0.0, f64::max));
        rho = rho.max(budget.dynamic_range(p, s.freq)?);
    }
    Ok((snr, rho))
}

fn per_tone_sum(
    ensemble: &ChannelEnsemble,
    snr: &[f64],
    rho: f64,
    bound: impl Fn(&BoundInputs) -> xtalk_core::Result<f64>,
) -> xtalk_core::Result<f64> {
    let p = ensemble.users();
    let mut total = 0.0;
    for (k, s) in ensemble.snapshots.iter().enumerate() {
        let inputs = BoundInputs {
            p,
            r: s.r,
            snr: snr[k],
            rho,
            m: rho,
            t: 0.0,
        };
        total += bound(&inputs)?;
    }
    Ok(total * ensemble.grid.spacing())
}

pub fn bound(scenario: &Scenario, which: WhichBound, out: Option<&Path>) -> Result<(), CliError> {
    let (d_min, d_max) = (scenario.bound.d_min, scenario.bound.d_max);
    if d_min > d_max {
        return Err(CliError::Config(format!("empty word-length range {d_min}..={d_max}")));
    }
    let selected: Vec<WhichBound> = match which {
        WhichBound::All => vec![
            WhichBound::General,
            WhichBound::Main,
            WhichBound::Simplified,
            WhichBound::Werner,
            WhichBound::Relative,
        ],
        w => vec![w],
    };
    let needs_channel = selected
        .iter()
        .any(|w| matches!(w, WhichBound::General | WhichBound::Main | WhichBound::Simplified))
        || !scenario.has_explicit_dominance();
    let ensemble = if needs_channel { Some(scenario.ensemble()?) } else { None };
    let band = match &ensemble {
        Some(e) => {
            let budget = scenario.budget.link_budget(e.grid.clone());
            Some(band_inputs(e, &budget)?)
        }
        None => None,
    };
    let werner = if selected.iter().any(|w| matches!(w, WhichBound::Werner | WhichBound::Relative)) {
        Some(scenario.werner_bound(ensemble.as_ref())?)
    } else {
        None
    };

    let names: Vec<&str> = selected
        .iter()
        .map(|w| match w {
            WhichBound::General => "general_band",
            WhichBound::Main => "main_band",
            WhichBound::Simplified => "simplified_band",
            WhichBound::Werner => "werner_per_hz",
            WhichBound::Relative => "relative",
            WhichBound::All => unreachable!(),
        })
        .collect();
    let mut columns = vec!["d"];
    columns.extend(&names);
    let mut table = Table::new(&columns);

    for d in d_min..=d_max {
        let mut row: Vec<Cell> = vec![d.into()];
        for (w, name) in selected.iter().zip(&names) {
            let value = match w {
                WhichBound::General | WhichBound::Main | WhichBound::Simplified => {
                    let e = ensemble.as_ref().expect("channel loaded for per-tone bounds");
                    let (snr, rho) = band.as_ref().expect("band inputs computed with the channel");
                    match w {
                        WhichBound::Main => bound_main_band(e.users(), e.r_max(), *rho, snr, &e.grid, d),
                        WhichBound::General => per_tone_sum(e, snr, *rho, |i| {
                            bound_general_per_tone(&i.with_t(delta_entry_bound_for(i.r, d)))
                        }),
                        _ => per_tone_sum(e, snr, *rho, |i| bound_simplified_per_tone(i, d)),
                    }
                }
                WhichBound::Werner => bound_werner_decay(werner.as_ref().expect("werner parameters"), d),
                WhichBound::Relative => bound_relative(werner.as_ref().expect("werner parameters"), d),
                WhichBound::All => unreachable!(),
            };
            match value {
                Ok(v) => row.push(v.into()),
                Err(e) if which == WhichBound::All && core_exit_code(&e) == EXIT_BOUND => {
                    log::warn!("{name} at d = {d}: {e}");
                    row.push(Cell::Empty);
                }
                Err(e) => return Err(e.into()),
            }
        }
        table.push(row);
    }
    emit(&table, &meta("bound", scenario), out)
}

pub fn design_bits(scenario: &Scenario, target: ToneTarget, out: Option<&Path>) -> Result<(), CliError> {
    match target {
        ToneTarget::Relative { tau } => {
            let ensemble = if scenario.has_explicit_dominance() { None } else { Some(scenario.ensemble()?) };
            let params = scenario.werner_bound(ensemble.as_ref())?;
            let design = bits_for_relative_loss(&params, tau)?;
            println!(
                "d_min = {} bits (estimate {:.3}, quadratic root {:.3}, floor c = {:.4}, zeta = {:.4e})",
                design.bits, design.d_real, design.d0, design.floor, design.zeta
            );
            println!("relative bound at {} bits: {:.6e} <= {tau}", design.bits, design.bound);
            let length = scenario.channel.length_m;
            let rows = sweep_bits_vs_loop_length(&[length], &params, length, tau)?;
            emit(&sweep_table(&rows), &meta("design-bits", scenario), out)
        }
        ToneTarget::Tone { t, freq } => {
            let ensemble = scenario.ensemble()?;
            let budget = scenario.budget.link_budget(ensemble.grid.clone());
            let (snr, rho) = band_inputs(&ensemble, &budget)?;
            let tones: Vec<usize> = match freq {
                Some(f) => vec![ensemble
                    .grid
                    .tone_of(f)
                    .ok_or_else(|| CliError::Config(format!("{f} Hz is not on the tone grid")))?],
                None => (0..ensemble.grid.count()).collect(),
            };
            let mut table = Table::new(&[
                "tone", "freq_hz", "r", "snr_db", "d_real", "d0", "floor_bits", "raised_to_floor", "d_min", "bound",
            ]);
            let mut worst: Option<(usize, xtalk_core::design::ToneDesign)> = None;
            for k in tones {
                let s = &ensemble.snapshots[k];
                let inputs = BoundInputs {
                    p: ensemble.users(),
                    r: s.r,
                    snr: snr[k],
                    rho,
                    m: rho,
                    t: 0.0,
                };
                let design = bits_for_tone_loss(&inputs, t).map_err(|e| e.at_tone(k))?;
                table.push(vec![
                    k.into(),
                    s.freq.into(),
                    s.r.into(),
                    linear_to_db(snr[k]).into(),
                    design.d_real.into(),
                    design.d0.into(),
                    design.floor_bits.into(),
                    (if design.raised_to_floor { "yes" } else { "no" }).into(),
                    design.bits.into(),
                    design.bound.into(),
                ]);
                if worst.as_ref().is_none_or(|(_, w)| design.bits > w.bits) {
                    worst = Some((k, design));
                }
            }
            let (k, design) = worst.expect("at least one tone");
            println!(
                "d_min = {} bits, set by tone {k} ({:.1} Hz); admissible floor {} bits",
                design.bits,
                ensemble.snapshots[k].freq,
                design.floor_bits
            );
            if design.raised_to_floor {
                println!("estimate {:.3} raised to the admissible floor of {} bits", design.d_real, design.floor_bits);
            }
            println!("main bound at {} bits: {:.6e} <= {t}", design.bits, design.bound);
            emit(&table, &meta("design-bits", scenario), out)
        }
    }
}

pub fn simulate(scenario: &Scenario, out: Option<&Path>) -> Result<(), CliError> {
    let ensemble = scenario.ensemble()?;
    let budget = scenario.budget.link_budget(ensemble.grid.clone());
    let config = scenario.trial_config();
    let ds = scenario.trials().d_bits.unwrap_or_else(|| vec![config.spec.d_bits]);
    let reports = run_trials_multi(&ensemble, &budget, &config, &ds)?;
    let werner = scenario.werner_bound(Some(&ensemble)).ok();
    for r in &reports {
        let relative = werner.as_ref().and_then(|w| bound_relative(w, r.d_bits).ok());
        let bound_text = relative.map(|b| format!(", relative bound {b:.6e}")).unwrap_or_default();
        eprintln!(
            "d = {}: worst eta {:.6e} over {} trials{bound_text}{}",
            r.d_bits,
            r.worst_eta(),
            r.complete_trials,
            if r.failures.is_empty() {
                String::new()
            } else {
                format!(", {} failed trials skipped", r.failures.len())
            }
        );
    }
    emit(&trial_table(&reports), &meta("simulate", scenario), out)
}

pub fn sweep(scenario: &Scenario, lengths: &[f64], tau: f64, out: Option<&Path>) -> Result<(), CliError> {
    let ensemble = if scenario.has_explicit_dominance() { None } else { Some(scenario.ensemble()?) };
    let params = scenario.werner_bound(ensemble.as_ref())?;
    let rows = sweep_bits_vs_loop_length(lengths, &params, scenario.channel.length_m, tau)?;
    for row in &rows {
        match &row.outcome {
            Ok(d) => eprintln!("{} m: {} bits (bound {:.6e})", row.length_m, d.bits, d.bound),
            Err(e) => eprintln!("{} m: {e}", row.length_m),
        }
    }
    emit(&sweep_table(&rows), &meta("sweep", scenario), out)
}

/// Applies `--zero-errors`: no quantization and no estimation error.
pub fn zero_errors(scenario: &mut Scenario) {
    scenario.perturbation.e2_model = Some(E2Model::Zero);
    scenario.perturbation.csi_samples = None;
    debug_assert_eq!(scenario.perturbation.spec(E2Model::Zero).e1_model, E1Model::None);
}
