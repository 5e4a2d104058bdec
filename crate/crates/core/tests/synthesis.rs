mod common;

use common::*;
use popobs::linalg::{self, RMat};
use popobs::lti::{hinf_norm_gridded, lft_lower, FrequencyGrid};
use popobs::riccati::{care_residual, care_solve};
use popobs::synthesis::{hinf_feasible, hinf_synthesize_sys, kalman_steady_state, HinfOptions};
use popobs::StateSpace;

/// Random plant with 4 states, w 2, u 1, z 2, y 1 and generic feedthrough.
fn random_plant(seed: u64, with_d22: bool) -> StateSpace {
    let mut r = rng(seed);
    let n = 4;
    let g = rand_stable(&mut r, n, 3, 3, 0.05);
    let (a, b, c) = (g.a, g.b, g.c);
    let mut d = rand_mat(&mut r, 3, 3) * 0.5;
    d[(0, 2)] = 0.0;
    d[(1, 2)] = 0.5 + d[(1, 2)].abs();
    d[(2, 0)] = 0.0;
    d[(2, 1)] = 0.5 + d[(2, 1)].abs();
    if !with_d22 {
        d[(2, 2)] = 0.0;
    }
    StateSpace::new(a, b, c, d).unwrap()
}

#[test]
fn care_random_residual() {
    let mut r = rng(11);
    for _ in 0..10 {
        let a = rand_mat(&mut r, 4, 4) * 2.0;
        let b = rand_mat(&mut r, 4, 2);
        let cq = rand_mat(&mut r, 4, 4);
        let q = cq.transpose() * &cq;
        let rr = RMat::identity(2, 2) * 0.5;
        let x = care_solve(&a, &b, &q, &rr, None).unwrap();
        let res = care_residual(&a, &b, &q, &rr, None, &x).unwrap();
        assert!(res.norm() <= 1e-8 * (1.0 + x.norm()));
        assert!((&x - x.transpose()).norm() < 1e-12 * (1.0 + x.norm()));
        let acl = &a - &b * RMat::identity(2, 2) * 2.0 * b.transpose() * &x;
        assert!(linalg::spectral_abscissa(&acl).unwrap() < 0.0);
    }
}

#[test]
fn random_regular_plants_are_certified() {
    for seed in 0..20u64 {
        let p = random_plant(100 + seed, seed % 3 == 0);
        let res = hinf_synthesize_sys(&p, 1, 1, &HinfOptions::default()).unwrap();
        let cl = lft_lower(&p, &res.controller, 1, 1).unwrap();
        assert!(linalg::spectral_abscissa(&cl.a).unwrap() < -1e-9, "seed {seed} unstable");
        let grid = FrequencyGrid::spanning(&cl, 200).unwrap();
        let (norm, _) = hinf_norm_gridded(&cl, &grid).unwrap();
        assert!(norm <= 1.05 * res.gamma, "seed {seed}: {norm} > 1.05 * {}", res.gamma);
        assert!(res.diagnostics.x_residual <= 1e-8 && res.diagnostics.y_residual <= 1e-8);
        assert!(res.diagnostics.coupling < 1.0);
    }
}

#[test]
fn open_loop_unstable_plant_is_stabilized() {
    let mut r = rng(55);
    let mut a = rand_mat(&mut r, 3, 3);
    a[(0, 0)] += 2.0;
    let p = StateSpace::new(
        a,
        rand_mat(&mut r, 3, 2),
        rand_mat(&mut r, 2, 3),
        RMat::from_row_slice(2, 2, &[0.1, 1.0, 1.0, 0.0]),
    )
    .unwrap();
    assert!(!p.is_stable().unwrap());
    let res = hinf_synthesize_sys(&p, 1, 1, &HinfOptions::default()).unwrap();
    let cl = lft_lower(&p, &res.controller, 1, 1).unwrap();
    let (norm, _) = hinf_norm_gridded(&cl, &FrequencyGrid::spanning(&cl, 200).unwrap()).unwrap();
    assert!(norm <= 1.05 * res.gamma);
}

#[test]
fn feasibility_is_monotone_in_gamma() {
    let p = random_plant(7, false);
    let res = hinf_synthesize_sys(&p, 1, 1, &HinfOptions::default()).unwrap();
    for f in [1.01, 1.5, 10.0] {
        assert!(hinf_feasible(&p, 1, 1, res.gamma * f).unwrap());
    }
    assert!(!hinf_feasible(&p, 1, 1, res.gamma * 0.98).unwrap());
}

#[test]
fn mixed_sensitivity_toy_matches_feasibility_scan() {
    // G = 1/(s+1); e = w - G u; z = [0.5 e; 0.1 u]; y = e
    let p = StateSpace::new(
        RMat::from_element(1, 1, -1.0),
        RMat::from_row_slice(1, 2, &[0.0, 1.0]),
        RMat::from_row_slice(3, 1, &[-0.5, 0.0, -1.0]),
        RMat::from_row_slice(3, 2, &[0.5, 0.0, 0.0, 0.1, 1.0, 0.0]),
    )
    .unwrap();
    let res = hinf_synthesize_sys(&p, 1, 1, &HinfOptions::default()).unwrap();
    let scan = FrequencyGrid::logspace(1e-3, 1e3, 4000).unwrap();
    let first = scan
        .omegas()
        .iter()
        .copied()
        .find(|&g| hinf_feasible(&p, 1, 1, g).unwrap())
        .unwrap();
    assert!((res.gamma - first).abs() <= 0.02 * first, "{} vs {first}", res.gamma);
    // the achieved loop gain must also be a real upper bound
    let cl = lft_lower(&p, &res.controller, 1, 1).unwrap();
    let (norm, _) = hinf_norm_gridded(&cl, &FrequencyGrid::spanning(&cl, 200).unwrap()).unwrap();
    assert!(norm <= 1.05 * res.gamma);
}

#[test]
fn infeasible_bracket_is_reported() {
    let p = random_plant(3, false);
    let res = hinf_synthesize_sys(&p, 1, 1, &HinfOptions::default()).unwrap();
    let opts = HinfOptions {
        gamma_min: res.gamma * 0.1,
        gamma_max: res.gamma * 0.5,
        tol: 1e-3,
    };
    assert_eq!(
        hinf_synthesize_sys(&p, 1, 1, &opts).unwrap_err(),
        popobs::Error::InfeasibleAtGammaMax(res.gamma * 0.5)
    );
}

#[test]
fn rank_deficient_feedthrough_is_regularized() {
    // no direct u -> z and no direct w -> y
    let mut r = rng(21);
    let a = rand_mat(&mut r, 3, 3) - RMat::identity(3, 3) * 3.0;
    let p = StateSpace::new(a, rand_mat(&mut r, 3, 2), rand_mat(&mut r, 2, 3), RMat::zeros(2, 2)).unwrap();
    let res = hinf_synthesize_sys(&p, 1, 1, &HinfOptions::default()).unwrap();
    assert!(res.diagnostics.regularized);
    let cl = lft_lower(&p, &res.controller, 1, 1).unwrap();
    assert!(cl.is_stable().unwrap());
}

#[test]
fn unstabilizable_plant_is_rejected() {
    // unstable mode that the control cannot reach
    let a = RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let b = RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let c = RMat::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
    let d = RMat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let p = StateSpace::new(a, b, c, d).unwrap();
    assert!(matches!(
        hinf_synthesize_sys(&p, 1, 1, &HinfOptions::default()),
        Err(popobs::Error::RegularityFailure(_))
    ));
}

#[test]
fn kalman_random_residual_and_stability() {
    let mut r = rng(31);
    let a = rand_mat(&mut r, 4, 4);
    let bw = rand_mat(&mut r, 4, 2);
    let c = rand_mat(&mut r, 2, 4);
    let q = RMat::identity(2, 2) * 0.3;
    let rc = RMat::identity(2, 2) * 0.01;
    let k = kalman_steady_state(&a, &bw, &c, &q, &rc).unwrap();
    let p = &k.covariance;
    let res = &a * p + p * a.transpose() - p * c.transpose() * RMat::identity(2, 2) * 100.0 * &c * p + &bw * &q * bw.transpose();
    assert!(res.norm() <= 1e-8 * (1.0 + p.norm()));
    assert!(linalg::spectral_abscissa(&(&a - &k.gain * &c)).unwrap() < 0.0);
    assert!(linalg::min_sym_eig(p) > -1e-10);
}
