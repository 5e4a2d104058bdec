//! H∞ output-feedback synthesis (two-Riccati central controller with
//! γ-bisection) and steady-state Kalman gains.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, hstack, vstack, RMat};
use crate::lti::{self, StateSpace};
use crate::plant::GeneralizedPlant;
use crate::riccati::{care_residual, care_solve};

/// Relative negative-eigenvalue allowance for the Riccati solutions; slow
/// scaling states leave rounding at this level.
const PSD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HinfOptions {
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Relative bisection tolerance on γ.
    pub tol: f64,
}

impl Default for HinfOptions {
    fn default() -> Self {
        Self {
            gamma_min: 1e-3,
            gamma_max: 1e3,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDiagnostics {
    /// Relative residual of the state-feedback Riccati equation.
    pub x_residual: f64,
    /// Relative residual of the filter Riccati equation.
    pub y_residual: f64,
    /// `ρ(XY) / γ²` at the returned γ.
    pub coupling: f64,
    /// True when D12 or D21 had to be padded to full rank.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub controller: StateSpace,
    pub gamma: f64,
    pub iterations: usize,
    pub diagnostics: SynthesisDiagnostics,
}

/// Plant blocks with `D22 = 0` assumed.
#[derive(Debug, Clone)]
struct Blocks {
    a: RMat,
    b1: RMat,
    b2: RMat,
    c1: RMat,
    c2: RMat,
    d11: RMat,
    d12: RMat,
    d21: RMat,
}

impl Blocks {
    fn split(sys: &StateSpace, n_meas: usize, n_ctl: usize) -> (Self, RMat) {
        let n = sys.nx();
        let m1 = sys.nu() - n_ctl;
        let p1 = sys.ny() - n_meas;
        let blocks = Self {
            a: sys.a.clone(),
            b1: sys.b.view((0, 0), (n, m1)).into_owned(),
            b2: sys.b.view((0, m1), (n, n_ctl)).into_owned(),
            c1: sys.c.view((0, 0), (p1, n)).into_owned(),
            c2: sys.c.view((p1, 0), (n_meas, n)).into_owned(),
            d11: sys.d.view((0, 0), (p1, m1)).into_owned(),
            d12: sys.d.view((0, m1), (p1, n_ctl)).into_owned(),
            d21: sys.d.view((p1, 0), (n_meas, m1)).into_owned(),
        };
        let d22 = sys.d.view((p1, m1), (n_meas, n_ctl)).into_owned();
        (blocks, d22)
    }

    fn n(&self) -> usize {
        self.a.nrows()
    }
    fn m1(&self) -> usize {
        self.b1.ncols()
    }
    fn m2(&self) -> usize {
        self.b2.ncols()
    }
    fn p1(&self) -> usize {
        self.c1.nrows()
    }
    fn p2(&self) -> usize {
        self.c2.nrows()
    }
}

fn inv(m: &RMat) -> Option<RMat> {
    if m.nrows() == 0 {
        return Some(RMat::zeros(0, 0));
    }
    linalg::inverse_real(m)
}

fn rank_deficient(m: &RMat, full: usize) -> bool {
    if full == 0 {
        return false;
    }
    if m.nrows().min(m.ncols()) < full {
        return true;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    smax == 0.0 || smin < 1e-10 * smax.max(1.0)
}

/// True when `C (sI − A)⁻¹ B + D` vanishes identically.
fn transfer_is_zero(a: &RMat, b: &RMat, c: &RMat, d: &RMat) -> bool {
    let scale = 1.0 + a.norm() + b.norm() + c.norm() + d.norm();
    if d.norm() > 1e-14 * scale {
        return false;
    }
    let mut ak_b = b.clone();
    for _ in 0..a.nrows().max(1) {
        if (c * &ak_b).norm() > 1e-12 * scale * (1.0 + ak_b.norm()) {
            return false;
        }
        ak_b = a * ak_b;
    }
    true
}

/// PBH test at the closed right half-plane eigenvalues of `a`: rank of
/// `[A − λI, B]` must be full.
fn stabilizable(a: &RMat, b: &RMat) -> Result<bool> {
    let n = a.nrows();
    let scale = 1.0 + a.norm() + b.norm();
    for lam in linalg::eigenvalues(a)? {
        if lam.re < -1e-9 * scale {
            continue;
        }
        let mut m = linalg::CMat::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = a[(i, j)].into();
            }
            m[(i, i)] -= lam;
            for j in 0..b.ncols() {
                m[(i, n + j)] = b[(i, j)].into();
            }
        }
        let sv = m.svd(false, false).singular_values;
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if sv.len() < n || smin < 1e-9 * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Result of a successful γ test in normalized coordinates.
struct Central {
    controller: StateSpace,
    diagnostics: SynthesisDiagnostics,
}

/// Feasibility test and central controller at a fixed γ for a plant
/// normalized to `D12 = [0; I]`, `D21 = [0, I]`.
fn central_controller(p: &Blocks, gamma: f64) -> Result<Central> {
    let (n, m1, m2, p1, p2) = (p.n(), p.m1(), p.m2(), p.p1(), p.p2());
    let g2 = gamma * gamma;
    let d1111 = p.d11.view((0, 0), (p1 - m2, m1 - p2)).into_owned();
    let d1112 = p.d11.view((0, m1 - p2), (p1 - m2, p2)).into_owned();
    let d1121 = p.d11.view((p1 - m2, 0), (m2, m1 - p2)).into_owned();
    let d1122 = p.d11.view((p1 - m2, m1 - p2), (m2, p2)).into_owned();

    let bound = linalg::sigma_max_real(&hstack(&[&d1111, &d1112])).max(linalg::sigma_max_real(&vstack(&[&d1111, &d1121])));
    if gamma <= bound * (1.0 + 1e-12) {
        return Err(Error::NoStabilizingSolution(format!(
            "γ = {gamma} below feedthrough bound {bound}"
        )));
    }

    let b = hstack(&[&p.b1, &p.b2]);
    let c = vstack(&[&p.c1, &p.c2]);
    let d1dot = hstack(&[&p.d11, &p.d12]);
    let ddot1 = vstack(&[&p.d11, &p.d21]);

    let mut r = d1dot.transpose() * &d1dot;
    for i in 0..m1 {
        r[(i, i)] -= g2;
    }
    let mut rt = &ddot1 * ddot1.transpose();
    for i in 0..p1 {
        rt[(i, i)] -= g2;
    }

    let qx = p.c1.transpose() * &p.c1;
    let sx = p.c1.transpose() * &d1dot;
    let x = care_solve(&p.a, &b, &qx, &r, Some(&sx))?;
    let qy = &p.b1 * p.b1.transpose();
    let sy = &p.b1 * ddot1.transpose();
    let y = care_solve(&p.a.transpose(), &c.transpose(), &qy, &rt, Some(&sy))?;

    let xn = x.norm().max(1.0);
    let yn = y.norm().max(1.0);
    if linalg::min_sym_eig(&x) < -PSD_TOL * xn {
        return Err(Error::NoStabilizingSolution("X is not positive semidefinite".into()));
    }
    if linalg::min_sym_eig(&y) < -PSD_TOL * yn {
        return Err(Error::NoStabilizingSolution("Y is not positive semidefinite".into()));
    }
    let rho = if n == 0 { 0.0 } else { linalg::spectral_radius(&(&x * &y))? };
    if rho >= g2 * (1.0 - 1e-9) {
        return Err(Error::NoStabilizingSolution(format!("ρ(XY) = {rho} ≥ γ² = {g2}")));
    }

    let rinv = inv(&r).ok_or_else(|| Error::Numerical("R singular".into()))?;
    let rtinv = inv(&rt).ok_or_else(|| Error::Numerical("R̃ singular".into()))?;
    let f = -&rinv * (d1dot.transpose() * &p.c1 + b.transpose() * &x);
    let l = -(&p.b1 * ddot1.transpose() + &y * c.transpose()) * &rtinv;
    let f12 = f.view((m1 - p2, 0), (p2, n)).into_owned();
    let f2 = f.view((m1, 0), (m2, n)).into_owned();
    let l12 = l.view((0, p1 - m2), (n, m2)).into_owned();
    let l2 = l.view((0, p1), (n, p2)).into_owned();

    let zinv = RMat::identity(n, n) - &y * &x / g2;
    let z = inv(&zinv).ok_or_else(|| Error::Numerical("I − γ⁻²YX singular".into()))?;

    let k1 = p1 - m2;
    let k2 = m1 - p2;
    let gi_row = inv(&(RMat::identity(k1, k1) * g2 - &d1111 * d1111.transpose()))
        .ok_or_else(|| Error::Numerical("γ²I − D1111 D1111ᵀ singular".into()))?;
    let gi_col = inv(&(RMat::identity(k2, k2) * g2 - d1111.transpose() * &d1111))
        .ok_or_else(|| Error::Numerical("γ²I − D1111ᵀD1111 singular".into()))?;
    let dh11 = -&d1121 * d1111.transpose() * &gi_row * &d1112 - &d1122;
    let m12 = RMat::identity(m2, m2) - &d1121 * &gi_col * d1121.transpose();
    let m21 = RMat::identity(p2, p2) - d1112.transpose() * &gi_row * &d1112;
    let chol = |m: RMat, what: &str| -> Result<RMat> {
        if m.nrows() == 0 {
            return Ok(m);
        }
        Cholesky::new(linalg::symmetrize(&m))
            .map(|c| c.l())
            .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
    };
    let dh12 = chol(m12, "D̂12 D̂12ᵀ")?;
    let dh21 = chol(m21, "D̂21ᵀ D̂21")?.transpose();
    let dh12_inv = inv(&dh12).ok_or_else(|| Error::Numerical("D̂12 singular".into()))?;
    let dh21_inv = inv(&dh21).ok_or_else(|| Error::Numerical("D̂21 singular".into()))?;

    let bh2 = &z * (&p.b2 + &l12) * &dh12;
    let ch2 = -&dh21 * (&p.c2 + &f12);
    let bh1 = -&z * &l2 + &bh2 * &dh12_inv * &dh11;
    let ch1 = &f2 + &dh11 * &dh21_inv * &ch2;
    let ah = &p.a + &b * &f + &bh1 * &dh21_inv * &ch2;

    let x_res = care_residual(&p.a, &b, &qx, &r, Some(&sx), &x)?.norm() / (1.0 + x.norm());
    let y_res = care_residual(&p.a.transpose(), &c.transpose(), &qy, &rt, Some(&sy), &y)?.norm() / (1.0 + y.norm());
    Ok(Central {
        controller: StateSpace::new(ah, bh1, ch1, dh11)?,
        diagnostics: SynthesisDiagnostics {
            x_residual: x_res,
            y_residual: y_res,
            coupling: rho / g2,
            regularized: false,
        },
    })
}

/// Normalized problem together with the maps back to original coordinates.
struct Normalized {
    blocks: Blocks,
    /// `u = r12_inv u'`
    r12_inv: RMat,
    /// `y' = r21_inv y`
    r21_inv: RMat,
}

fn normalize(p: &Blocks) -> Result<Normalized> {
    let (m1, m2, p1, p2) = (p.m1(), p.m2(), p.p1(), p.p2());

    let svd12 = p.d12.clone().svd(true, true);
    let u12 = svd12.u.ok_or_else(|| Error::Numerical("SVD of D12".into()))?;
    let vt12 = svd12.v_t.ok_or_else(|| Error::Numerical("SVD of D12".into()))?;
    let s12 = RMat::from_diagonal(&svd12.singular_values);
    let theta = hstack(&[&linalg::orth_complement(&u12), &u12]);
    let r12 = &s12 * &vt12;
    let r12_inv = inv(&r12).ok_or_else(|| Error::RegularityFailure("D12 lost rank".into()))?;

    let svd21 = p.d21.transpose().svd(true, true);
    // D21ᵀ = U Σ Vᵀ  =>  D21 = V Σ Uᵀ
    let v21 = svd21.u.ok_or_else(|| Error::Numerical("SVD of D21".into()))?;
    let ut21 = svd21.v_t.ok_or_else(|| Error::Numerical("SVD of D21".into()))?;
    let s21 = RMat::from_diagonal(&svd21.singular_values);
    let psi = hstack(&[&linalg::orth_complement(&v21), &v21]);
    let r21 = ut21.transpose() * &s21;
    let r21_inv = inv(&r21).ok_or_else(|| Error::RegularityFailure("D21 lost rank".into()))?;

    let mut d12n = RMat::zeros(p1, m2);
    d12n.view_mut((p1 - m2, 0), (m2, m2)).copy_from(&RMat::identity(m2, m2));
    let mut d21n = RMat::zeros(p2, m1);
    d21n.view_mut((0, m1 - p2), (p2, p2)).copy_from(&RMat::identity(p2, p2));

    let blocks = Blocks {
        a: p.a.clone(),
        b1: &p.b1 * &psi,
        b2: &p.b2 * &r12_inv,
        c1: theta.transpose() * &p.c1,
        c2: &r21_inv * &p.c2,
        d11: theta.transpose() * &p.d11 * &psi,
        d12: d12n,
        d21: d21n,
    };
    Ok(Normalized {
        blocks,
        r12_inv,
        r21_inv,
    })
}

/// Pads rank-deficient `D12` / `D21` with `ε I` on new performance /
/// disturbance channels.
fn regularize(mut p: Blocks) -> (Blocks, bool) {
    let (n, m2, p2) = (p.n(), p.m2(), p.p2());
    let scale = 1.0 + p.d12.norm().max(p.d21.norm()).max(p.d11.norm());
    let eps = 1e-6 * scale;
    let mut changed = false;
    if rank_deficient(&p.d12, m2) {
        let m1 = p.m1();
        p.c1 = vstack(&[&p.c1, &RMat::zeros(m2, n)]);
        p.d11 = vstack(&[&p.d11, &RMat::zeros(m2, m1)]);
        p.d12 = vstack(&[&p.d12, &(RMat::identity(m2, m2) * eps)]);
        changed = true;
    }
    if rank_deficient(&p.d21, p2) {
        let p1 = p.p1();
        p.b1 = hstack(&[&p.b1, &RMat::zeros(n, p2)]);
        p.d11 = hstack(&[&p.d11, &RMat::zeros(p1, p2)]);
        p.d21 = hstack(&[&p.d21, &(RMat::identity(p2, p2) * eps)]);
        changed = true;
    }
    (p, changed)
}

/// γ-bisection on a plant given as one realization with the last `n_meas`
/// outputs and `n_ctl` inputs forming the measurement/control channels.
pub fn hinf_synthesize_sys(sys: &StateSpace, n_meas: usize, n_ctl: usize, opts: &HinfOptions) -> Result<SynthesisResult> {
    if n_meas > sys.ny() || n_ctl > sys.nu() {
        return Err(Error::dims("measurement/control partition exceeds plant size"));
    }
    if !(opts.gamma_min > 0.0 && opts.gamma_max > opts.gamma_min && opts.tol > 0.0) {
        return Err(Error::InvalidArgument("γ bracket must satisfy 0 < min < max, tol > 0".into()));
    }
    let (blocks, d22) = Blocks::split(sys, n_meas, n_ctl);
    let control_blocked = transfer_is_zero(&blocks.a, &blocks.b2, &blocks.c1, &blocks.d12)
        || transfer_is_zero(&blocks.a, &blocks.b1, &blocks.c2, &blocks.d21);
    if control_blocked {
        let k = StateSpace::zero(n_ctl, n_meas);
        let cl = lti::lft_lower(sys, &k, n_meas, n_ctl)?;
        if !cl.is_stable()? {
            return Err(Error::RegularityFailure(
                "control path is blocked and the open loop is unstable".into(),
            ));
        }
        let grid = lti::FrequencyGrid::spanning(&cl, 200)?;
        let norm = lti::hinf_norm_gridded(&cl, &grid)?.0.max(opts.gamma_min);
        return Ok(SynthesisResult {
            controller: k,
            gamma: norm,
            iterations: 0,
            diagnostics: SynthesisDiagnostics::default(),
        });
    }

    if !stabilizable(&blocks.a, &blocks.b2)? {
        return Err(Error::RegularityFailure("(A, B2) is not stabilizable".into()));
    }
    if !stabilizable(&blocks.a.transpose(), &blocks.c2.transpose())? {
        return Err(Error::RegularityFailure("(C2, A) is not detectable".into()));
    }

    let (blocks, regularized) = regularize(blocks);
    if rank_deficient(&blocks.d12, n_ctl) {
        return Err(Error::RegularityFailure("D12 does not have full column rank".into()));
    }
    if rank_deficient(&blocks.d21, n_meas) {
        return Err(Error::RegularityFailure("D21 does not have full row rank".into()));
    }
    let norm = normalize(&blocks)?;

    let test = |g: f64| central_controller(&norm.blocks, g);
    let mut iterations = 1;
    let mut best = match test(opts.gamma_max) {
        Ok(c) => (opts.gamma_max, c),
        Err(_) => return Err(Error::InfeasibleAtGammaMax(opts.gamma_max)),
    };
    let mut lo = opts.gamma_min;
    iterations += 1;
    if let Ok(c) = test(lo) {
        best = (lo, c);
    } else {
        let mut hi = opts.gamma_max;
        while hi / lo > 1.0 + opts.tol {
            let mid = (lo * hi).sqrt();
            iterations += 1;
            match test(mid) {
                Ok(c) => {
                    hi = mid;
                    best = (mid, c);
                }
                Err(_) => lo = mid,
            }
        }
    }

    // Back off slightly if the central controller at the bisection edge is
    // numerically poor (closed loop not stable).
    let to_original = |k: &StateSpace| -> Result<StateSpace> {
        let k = k.pre_post(&norm.r12_inv, &norm.r21_inv)?;
        if d22.norm() == 0.0 {
            Ok(k)
        } else {
            lti::feedback(&k, &StateSpace::static_gain(d22.clone()), -1.0)
        }
    };
    let mut gamma = best.0;
    let mut central = best.1;
    for attempt in 0..6 {
        let k = to_original(&central.controller)?;
        let cl = lti::lft_lower(sys, &k, n_meas, n_ctl)?;
        let margin = 1e-9;
        if linalg::spectral_abscissa(&cl.a)? < -margin || cl.nx() == 0 {
            let mut diagnostics = central.diagnostics;
            diagnostics.regularized = regularized;
            return Ok(SynthesisResult {
                controller: k,
                gamma,
                iterations,
                diagnostics,
            });
        }
        if attempt == 5 || gamma >= opts.gamma_max {
            break;
        }
        gamma = (gamma * 1.01).min(opts.gamma_max);
        iterations += 1;
        central = test(gamma)?;
    }
    Err(Error::Numerical("central controller does not stabilize the plant".into()))
}

/// H∞ synthesis on a partitioned plant; all Δ and performance channels are
/// treated as exogenous.
pub fn hinf_synthesize(plant: &GeneralizedPlant, opts: &HinfOptions) -> Result<SynthesisResult> {
    hinf_synthesize_sys(&plant.sys, plant.dims.meas, plant.dims.ctl, opts)
}

/// Whether the normalized two-Riccati conditions hold at `gamma`.
pub fn hinf_feasible(sys: &StateSpace, n_meas: usize, n_ctl: usize, gamma: f64) -> Result<bool> {
    let (blocks, _) = Blocks::split(sys, n_meas, n_ctl);
    let (blocks, _) = regularize(blocks);
    let norm = normalize(&blocks)?;
    Ok(central_controller(&norm.blocks, gamma).is_ok())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanGain {
    pub gain: RMat,
    pub covariance: RMat,
}

/// Stationary Kalman filter for `ẋ = Ax + B_w w`, `y = Cx + v` with
/// intensities `Q_c` and `R_c`.
pub fn kalman_steady_state(a: &RMat, b_w: &RMat, c: &RMat, q_c: &RMat, r_c: &RMat) -> Result<KalmanGain> {
    let n = a.nrows();
    if b_w.nrows() != n || c.ncols() != n || q_c.shape() != (b_w.ncols(), b_w.ncols()) || r_c.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::dims("kalman_steady_state shapes"));
    }
    let q = linalg::symmetrize(&(b_w * q_c * b_w.transpose()));
    let p = care_solve(&a.transpose(), &c.transpose(), &q, r_c, None)?;
    let rinv = linalg::inverse_real(r_c).ok_or_else(|| Error::InvalidArgument("R_c is singular".into()))?;
    let gain = &p * c.transpose() * rinv;
    if n > 0 && linalg::spectral_abscissa(&(a - &gain * c))? >= 0.0 {
        return Err(Error::NoStabilizingSolution("A − LC is not stable".into()));
    }
    Ok(KalmanGain { gain, covariance: p })
}
