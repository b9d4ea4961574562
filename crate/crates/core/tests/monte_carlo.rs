use xtalk_core::bounds::{bound_werner_decay, BoundInputs, WernerBoundParams};
use xtalk_core::channel::{synthesize_channel, ChannelEnsemble, ToneGrid, WernerParams, DMT_SPACING_HZ};
use xtalk_core::design::bits_for_tone_loss;
use xtalk_core::monte_carlo::{min_bits_empirical, run_trials, run_trials_multi, Statistic, TrialConfig};
use xtalk_core::precoding::{E2Model, PerturbationSpec};
use xtalk_core::rate::{log2_1p, LinkBudget};
use xtalk_core::report::{trial_table, ReportMeta};
use xtalk_core::units::db_to_linear;

fn binder(decimation: usize, seed: u64) -> (ChannelEnsemble, LinkBudget) {
    let grid = ToneGrid::dmt(30e6, decimation).unwrap();
    let ensemble = synthesize_channel(&WernerParams::reference_binder(), &grid, seed).unwrap();
    (ensemble, LinkBudget::reference(grid))
}

fn uniform(n: usize, d: u32, seed: u64) -> TrialConfig {
    TrialConfig::new(n, PerturbationSpec::new(d, E2Model::UniformRandom, seed))
}

fn report_text(ensemble: &ChannelEnsemble, budget: &LinkBudget, config: &TrialConfig) -> String {
    let reports = run_trials_multi(ensemble, budget, config, &[10, 12]).unwrap();
    trial_table(&reports)
        .to_string(&ReportMeta::new("simulate", "test", None))
        .unwrap()
}

#[test]
fn same_seed_gives_identical_report_bytes() {
    let (ensemble, budget) = binder(400, 3);
    let config = uniform(50, 10, 41);
    let first = report_text(&ensemble, &budget, &config);
    let second = report_text(&ensemble, &budget, &config);
    assert_eq!(first, second);
    let other = report_text(&ensemble, &budget, &uniform(50, 10, 42));
    assert_ne!(first, other);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let (ensemble, budget) = binder(300, 5);
    let config = uniform(40, 10, 9);
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| report_text(&ensemble, &budget, &config))
    };
    assert_eq!(run_with(1), run_with(4));
}

#[test]
fn statistics_are_coherent_per_cell() {
    let (ensemble, budget) = binder(300, 8);
    let mut config = uniform(400, 11, 77);
    let mut per_statistic = Vec::new();
    for statistic in [Statistic::WorstCase, Statistic::Quantile(0.99), Statistic::Mean] {
        config.statistic = statistic;
        per_statistic.push(run_trials(&ensemble, &budget, &config).unwrap());
    }
    let [worst, q99, mean] = [&per_statistic[0], &per_statistic[1], &per_statistic[2]];
    for u in 0..worst.users.len() {
        for k in 0..ensemble.grid.count() {
            let (w, q, m) = (worst.per_tone[u][k].loss, q99.per_tone[u][k].loss, mean.per_tone[u][k].loss);
            assert!(w >= q && q >= m, "user {u}, tone {k}: {w} {q} {m}");
        }
    }
}

#[test]
fn worst_case_falls_with_word_length() {
    let (ensemble, budget) = binder(200, 12);
    let ds: Vec<u32> = (6..=20).collect();
    let reports = run_trials_multi(&ensemble, &budget, &uniform(100, 6, 1), &ds).unwrap();
    for pair in reports.windows(2) {
        for u in 0..pair[0].users.len() {
            for k in 0..ensemble.grid.count() {
                assert!(pair[1].per_tone[u][k].worst <= pair[0].per_tone[u][k].worst);
            }
            assert!(pair[1].band_per_bin[u].loss <= pair[0].band_per_bin[u].loss);
        }
    }
}

#[test]
fn per_bin_worst_case_dominates_per_trial_worst_case() {
    let (ensemble, budget) = binder(200, 2);
    let report = run_trials(&ensemble, &budget, &uniform(200, 12, 4)).unwrap();
    for (bin, trial) in report.band_per_bin.iter().zip(&report.band_per_trial) {
        assert!(bin.loss >= trial.loss);
    }
}

#[test]
fn werner_bound_covers_the_band_average() {
    let (ensemble, budget) = binder(50, 6);
    let d = 14;
    let report = run_trials(&ensemble, &budget, &uniform(500, d, 8)).unwrap();
    let bound = bound_werner_decay(&WernerBoundParams::reference(), d).unwrap();
    for band in &report.band_per_bin {
        assert!(band.loss / ensemble.grid.bandwidth() <= bound);
    }
}

#[test]
fn rounding_at_fourteen_bits_keeps_every_user_under_one_percent() {
    let (ensemble, budget) = binder(50, 6);
    let mut config = TrialConfig::new(1, PerturbationSpec::new(14, E2Model::DeterministicRounding, 0));
    config.spec.normalize = true;
    let report = run_trials(&ensemble, &budget, &config).unwrap();
    for band in &report.band_per_bin {
        assert!(band.eta(0).unwrap() < 0.01);
    }
}

#[test]
fn empirical_bits_never_exceed_the_analytic_design() {
    for snr_db in [40.0, 50.0, 60.0] {
        let alpha_ell = WernerParams::reference_binder().alpha_ell();
        let freq = (db_to_linear(80.0 - snr_db).ln() / (2.0 * alpha_ell)).powi(2);
        let grid = ToneGrid::from_count(freq, DMT_SPACING_HZ, 1).unwrap();
        let ensemble = synthesize_channel(&WernerParams::reference_binder(), &grid, 21).unwrap();
        let budget = LinkBudget::reference(grid);
        let snr = db_to_linear(snr_db);
        let rate = log2_1p(snr / budget.gap());
        let analytic =
            bits_for_tone_loss(&BoundInputs::spsd(10, ensemble.r_max(), snr), 0.01 * rate).unwrap().bits;
        let empirical = min_bits_empirical(&ensemble, &budget, &uniform(2000, 1, 5), 0.01).unwrap().bits;
        assert!(empirical <= analytic, "{snr_db} dB: {empirical} > {analytic}");
    }
}
