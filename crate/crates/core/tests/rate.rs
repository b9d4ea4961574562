use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xtalk_core::channel::{ChannelSnapshot, ToneGrid};
use xtalk_core::linalg::{CMatrix, C64};
use xtalk_core::rate::{log2_1p, loss_exact, LinkBudget, PsdProfile};
use xtalk_core::units::db_to_linear;

fn snapshot(seed: u64, p: usize) -> ChannelSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = CMatrix::from_fn(p, p, |i, j| {
        let m = if i == j { rng.random_range(0.01..1.0) } else { rng.random_range(0.0..0.01) };
        C64::from_polar(m, rng.random_range(0.0..std::f64::consts::TAU))
    });
    ChannelSnapshot::new(2e6, h).unwrap()
}

fn random_delta(seed: u64, p: usize, scale: f64, zero_diagonal: bool) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CMatrix::from_fn(p, p, |i, j| {
        if zero_diagonal && i == j {
            C64::new(0.0, 0.0)
        } else {
            C64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
        }
    })
}

fn budget(gap_db: f64) -> LinkBudget {
    LinkBudget {
        psd: PsdProfile::PerUser(vec![-60.0, -55.0, -65.0, -60.0]),
        noise_psd_dbm_hz: -140.0,
        gamma_gap_db: gap_db,
        grid: ToneGrid::from_count(2e6, 4312.5, 1).unwrap(),
    }
}

proptest! {
    #[test]
    fn interference_terms_ignore_the_gap(seed in any::<u64>(), user in 0usize..4, g1 in 0.0f64..15.0, g2 in 0.0f64..15.0) {
        let s = snapshot(seed, 4);
        let delta = random_delta(seed ^ 1, 4, 1e-3, false);
        let a = loss_exact(&budget(g1), &s, &delta, user).unwrap();
        let b = loss_exact(&budget(g2), &s, &delta, user).unwrap();
        prop_assert!((a.a - b.a).abs() <= 1e-14 * a.a.max(1.0));
        prop_assert!((a.q - b.q).abs() <= 1e-14);
    }

    #[test]
    fn shrinking_crosstalk_shrinks_the_loss(seed in any::<u64>(), user in 0usize..4, factor in 0.01f64..0.99) {
        let s = snapshot(seed, 4);
        let delta = random_delta(seed ^ 2, 4, 1e-3, true);
        let b = budget(10.7);
        let full = loss_exact(&b, &s, &delta, user).unwrap();
        let scaled = delta.map(|z| z * factor);
        let less = loss_exact(&b, &s, &scaled, user).unwrap();
        prop_assert!(full.loss > 0.0);
        prop_assert!(less.loss < full.loss);
    }

    #[test]
    fn crosstalk_alone_always_costs_rate(seed in any::<u64>(), user in 0usize..4) {
        let s = snapshot(seed, 4);
        let delta = random_delta(seed ^ 3, 4, 1e-5, true);
        prop_assert!(loss_exact(&budget(10.7), &s, &delta, user).unwrap().loss > 0.0);
    }

    #[test]
    fn stronger_direct_path_is_a_gain(seed in any::<u64>(), user in 0usize..4, boost in 1e-4f64..0.5) {
        let s = snapshot(seed, 4);
        let mut delta = CMatrix::zeros(4, 4);
        delta[(user, user)] = C64::new(boost, 0.0);
        let t = loss_exact(&budget(10.7), &s, &delta, user).unwrap();
        prop_assert!(t.q > 1.0 && t.loss < 0.0);
    }

    #[test]
    fn loss_matches_the_raw_rate_expressions(seed in any::<u64>(), user in 0usize..4) {
        // Equal PSDs: delta_i = sum_{j != i} |Delta_ij|^2.
        let s = snapshot(seed, 4);
        let delta = random_delta(seed ^ 4, 4, 1e-2, false);
        let b = LinkBudget::flat(-60.0, -140.0, 10.7, ToneGrid::from_count(2e6, 4312.5, 1).unwrap());
        let snr = b.snr(&s, user).unwrap();
        let esnr = snr / db_to_linear(10.7);
        let cross: f64 = (0..4).filter(|&j| j != user).map(|j| delta[(user, j)].norm_sqr()).sum();
        let g = db_to_linear(10.7);
        let perturbed = (1.0 + (C64::new(1.0, 0.0) + delta[(user, user)]).norm_sqr() / (g * (cross + 1.0 / snr))).log2();
        let oracle = (1.0 + esnr).log2() - perturbed;
        let t = loss_exact(&b, &s, &delta, user).unwrap();
        prop_assert!((t.loss - oracle).abs() <= 1e-12, "{} vs {oracle}", t.loss);
    }
}

#[test]
fn sixty_db_rate_with_default_gap() {
    assert!((log2_1p(db_to_linear(60.0 - 10.7)) - 16.38).abs() < 0.005);
}
