mod common;

use common::*;
use popobs::linalg::RMat;
use popobs::lti::{series, StateSpace};
use popobs::popsim::{make_population, PopulationSpec};
use popobs::uncertainty::{admit, compute_residuals, envelope, fit_overbound_weight, reconstruct, PopulationModel};
use popobs::FrequencyGrid;
use proptest::prelude::*;

/// `G0 (I + M)` with a small stable 2×2 `M`.
fn perturbed(g0: &StateSpace, seed: u64, size: f64) -> StateSpace {
    let mut r = rng(seed);
    let m = rand_stable(&mut r, 2, 2, 2, 0.5);
    let m = StateSpace::new(m.a, m.b, m.c * size, m.d * size + RMat::identity(2, 2)).unwrap();
    series(&m, g0).unwrap()
}

fn tall_population(seed: u64, members: usize) -> PopulationModel {
    let mut r = rng(seed);
    let g0 = rand_stable(&mut r, 4, 2, 4, 0.2);
    let ms = (0..members).map(|i| perturbed(&g0, seed * 31 + i as u64, 0.3)).collect();
    let labels = (0..members).map(|i| format!("m{i}")).collect();
    PopulationModel::new(g0, ms, RMat::identity(4, 4), labels).unwrap()
}

fn roots_in_lhp(sys: &StateSpace) -> bool {
    let zeros_a = &sys.a - &sys.b * &sys.c / sys.d[(0, 0)];
    let zero_sys = StateSpace::new(zeros_a, sys.b.clone(), sys.c.clone(), sys.d.clone()).unwrap();
    sys.is_stable().unwrap() && zero_sys.is_stable().unwrap()
}

#[test]
fn tall_reconstruction() {
    let pop = tall_population(3, 3);
    let grid = log_grid(1e-2, 1e2, 61);
    let residuals = compute_residuals(&pop, &grid).unwrap();
    let g0 = pop.nominal.freq_response(&grid).unwrap();
    for (m, res) in pop.members.iter().zip(&residuals) {
        let g = m.freq_response(&grid).unwrap();
        for k in 0..grid.len() {
            assert_eq!(res.values[k].shape(), (2, 2));
            let back = reconstruct(&g0.values[k], &res.values[k]).unwrap();
            assert!(rel_err(&back, &g.values[k]) < 1e-8);
        }
    }
}

#[test]
fn envelope_dominates_every_member() {
    let pop = make_population(&PopulationSpec::default()).unwrap();
    let grid = FrequencyGrid::logspace_hz(0.01, 25.0, 61).unwrap();
    let env = envelope(&compute_residuals(&pop, &grid).unwrap()).unwrap();
    assert_eq!(env.per_member.len(), 4);
    for trace in &env.per_member {
        for (t, e) in trace.iter().zip(&env.envelope) {
            assert!(t <= e);
        }
    }
}

#[test]
fn flat_envelope_order_one() {
    let grid = log_grid(1e-1, 1e2, 61);
    let env = popobs::uncertainty::ResidualEnvelope {
        grid: grid.clone(),
        per_member: vec![vec![0.2; 61]],
        envelope: vec![0.2; 61],
    };
    let w = fit_overbound_weight(&env, 1, 1.0).unwrap();
    for m in w.magnitudes(&grid).unwrap() {
        assert!((0.2 - 1e-9..=0.21).contains(&m), "{m}");
    }
}

/// Residual of a one-mode member against a nominal with shifted stiffness.
fn resonant_population() -> PopulationModel {
    let mode = |k: f64| {
        StateSpace::new(
            RMat::from_row_slice(2, 2, &[0.0, 1.0, -k, -0.2]),
            RMat::from_row_slice(2, 1, &[0.0, 1.0]),
            RMat::from_row_slice(1, 2, &[k, 0.0]),
            RMat::zeros(1, 1),
        )
        .unwrap()
    };
    PopulationModel::new(
        mode(4.0),
        vec![mode(3.0), mode(5.0)],
        RMat::identity(1, 1),
        vec!["a".into(), "b".into()],
    )
    .unwrap()
}

#[test]
fn resonant_envelope_fit_is_tight() {
    let pop = resonant_population();
    let grid = log_grid(1e-1, 1e2, 61);
    let env = envelope(&compute_residuals(&pop, &grid).unwrap()).unwrap();
    let w = fit_overbound_weight(&env, 4, 1.0).unwrap();
    let mags = w.magnitudes(&grid).unwrap();
    let peak_k = (0..61).max_by(|&a, &b| env.envelope[a].total_cmp(&env.envelope[b])).unwrap();
    for (k, (m, e)) in mags.iter().zip(&env.envelope).enumerate() {
        let excess = 20.0 * (m / e).log10();
        assert!(excess >= -1e-9, "overbound violated at {k}");
        assert!(excess <= 6.0, "excess {excess} dB at {k}");
    }
    let at_peak = 20.0 * (mags[peak_k] / env.envelope[peak_k]).log10();
    assert!(at_peak <= 1.0, "peak excess {at_peak} dB");
    assert!(roots_in_lhp(&w.w));
}

#[test]
fn default_population_order_four() {
    let pop = make_population(&PopulationSpec::default()).unwrap();
    let grid = FrequencyGrid::logspace_hz(0.01, 25.0, 61).unwrap();
    let env = envelope(&compute_residuals(&pop, &grid).unwrap()).unwrap();
    for order in [4, 8] {
        let w = fit_overbound_weight(&env, order, 1.0).unwrap();
        let mags = w.magnitudes(&grid).unwrap();
        for (m, e) in mags.iter().zip(&env.envelope) {
            assert!(*m >= *e - 1e-9);
        }
        assert!(roots_in_lhp(&w.w));
        // every member admits a unit-bounded perturbation on the grid
        for trace in &env.per_member {
            assert!(trace.iter().zip(&mags).all(|(t, m)| t / m <= 1.0 + 1e-9));
        }
    }
}

#[test]
fn headroom_scales_the_bound() {
    let pop = tall_population(9, 2);
    let grid = log_grid(1e-2, 1e2, 41);
    let env = envelope(&compute_residuals(&pop, &grid).unwrap()).unwrap();
    let w = fit_overbound_weight(&env, 4, 1.5).unwrap();
    for (m, e) in w.magnitudes(&grid).unwrap().iter().zip(&env.envelope) {
        assert!(*m >= 1.5 * e - 1e-9);
    }
}

#[test]
fn admission_of_population_members() {
    let pop = tall_population(5, 3);
    let grid = log_grid(1e-2, 1e2, 61);
    let env = envelope(&compute_residuals(&pop, &grid).unwrap()).unwrap();
    let w = fit_overbound_weight(&env, 6, 1.0).unwrap();
    for m in &pop.members {
        assert!(admit(&pop.nominal, &w, m, &grid).unwrap().admitted);
    }
    let far = perturbed(&pop.nominal, 77, 20.0);
    let report = admit(&pop.nominal, &w, &far, &grid).unwrap();
    assert!(!report.admitted);
    assert!(!report.violations.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstruction_property(seed in 0u64..10_000, size in 0.01f64..0.5) {
        let mut r = rng(seed);
        let g0 = rand_stable(&mut r, 3, 2, 4, 0.1);
        let m = perturbed(&g0, seed + 1, size);
        let pop = PopulationModel::new(g0, vec![m.clone()], RMat::identity(4, 4), vec!["m".into()]).unwrap();
        let grid = log_grid(1e-2, 1e2, 15);
        let res = compute_residuals(&pop, &grid).unwrap();
        let g0r = pop.nominal.freq_response(&grid).unwrap();
        let gr = m.freq_response(&grid).unwrap();
        for k in 0..grid.len() {
            let back = reconstruct(&g0r.values[k], &res[0].values[k]).unwrap();
            prop_assert!(rel_err(&back, &gr.values[k]) < 1e-8);
        }
    }
}
