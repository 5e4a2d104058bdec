//! Stable minimum-phase SISO fits to magnitude data.
//!
//! The magnitude squared is modeled as a ratio of cosine polynomials in the
//! bilinear frequency `θ = 2·atan(ω/ω_c)`, fitted in the log-Chebyshev sense
//! by bisection over linear feasibility programs, and factored back into a
//! stable minimum-phase transfer function.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, RMat};
use crate::lp::solve_lp;
use crate::lti::{self, FrequencyGrid, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMode {
    /// `|w| ≥ headroom · target` at every grid point, minimal log excess.
    Overbound { headroom: f64 },
    /// Minimal maximum `|ln(|w| / target)|`.
    TwoSided,
}

#[derive(Debug, Clone)]
pub struct MagnitudeFit {
    pub sys: StateSpace,
    /// `|w(jω_k)| / target_k`
    pub ratio: Vec<f64>,
    /// `max_k |ln ratio_k|`
    pub max_log_error: f64,
}

const DENSE: usize = 721;
const SHAPE_LO: f64 = 1e-2;
const SHAPE_HI: f64 = 4.0;
const DEN_FLOOR: f64 = 1e-6;
const ROOT_RADIUS: f64 = 1.0 - 1e-6;
/// Scalings enter synthesis, where lightly damped roots hurt regularity.
const SCALE_ROOT_RADIUS: f64 = 0.98;
/// Smallest fitted magnitude relative to the largest goal value.
const DYNAMIC_RANGE: f64 = 1e-4;
/// Fast roots are clamped to this multiple of the top grid frequency.
const FAST_LIMIT: f64 = 1e3;

fn cos_row(theta: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| (k as f64 * theta).cos()).collect()
}

fn trig_eval(coeffs: &[f64], theta: f64) -> f64 {
    coeffs.iter().enumerate().map(|(k, a)| a * (k as f64 * theta).cos()).sum()
}

/// Log-linear interpolation of `vals` over `ln ω`, held constant outside.
fn interp_log(omegas: &[f64], vals: &[f64], w: f64) -> f64 {
    let n = omegas.len();
    if !(w > omegas[0]) {
        return vals[0];
    }
    if w >= omegas[n - 1] {
        return vals[n - 1];
    }
    let k = omegas.partition_point(|&x| x <= w) - 1;
    let t = (w.ln() - omegas[k].ln()) / (omegas[k + 1].ln() - omegas[k].ln());
    (vals[k].ln() * (1.0 - t) + vals[k + 1].ln() * t).exp()
}

struct Problem {
    n: usize,
    fit_theta: Vec<f64>,
    fit_target: Vec<f64>,
    /// Extra multiplicative freedom on the magnitude-squared band per point.
    fit_slack: Vec<f64>,
    dense_theta: Vec<f64>,
    dense_target: Vec<f64>,
}

impl Problem {
    /// Best margin τ for the band `[lo, hi]` on the magnitude-squared ratio.
    /// Returns `(τ, numerator coeffs, denominator coeffs)`.
    fn solve(&self, lo: f64, hi: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let nv = (n + 1) + n + 1;
        let tau = nv - 1;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let mut push_band = |theta: f64, target: f64, lo: f64, hi: f64| {
            let cs = cos_row(theta, n);
            // lo·D − N/L + τ ≤ 0
            let mut r = vec![0.0; nv];
            for k in 0..=n {
                r[k] = -cs[k] / target;
            }
            for k in 1..=n {
                r[n + k] = lo * cs[k];
            }
            r[tau] = 1.0;
            rows.push(r);
            rhs.push(-lo);
            // N/L − hi·D + τ ≤ 0
            let mut r = vec![0.0; nv];
            for k in 0..=n {
                r[k] = cs[k] / target;
            }
            for k in 1..=n {
                r[n + k] = -hi * cs[k];
            }
            r[tau] = 1.0;
            rows.push(r);
            rhs.push(hi);
        };
        for ((th, l), sl) in self.fit_theta.iter().zip(&self.fit_target).zip(&self.fit_slack) {
            push_band(*th, *l, lo / sl, hi * sl);
        }
        for (th, l) in self.dense_theta.iter().zip(&self.dense_target) {
            push_band(*th, *l, SHAPE_LO * lo, SHAPE_HI * hi);
        }
        for th in &self.dense_theta {
            // D ≥ floor
            let cs = cos_row(*th, n);
            let mut r = vec![0.0; nv];
            for k in 1..=n {
                r[n + k] = -cs[k];
            }
            rows.push(r);
            rhs.push(1.0 - DEN_FLOOR);
        }
        let mut r = vec![0.0; nv];
        r[tau] = 1.0;
        rows.push(r);
        rhs.push(1.0);

        // Unit-norm rows keep the LP conditioned when the target spans many
        // decades. The margin column stays at 1, so the sign of τ is unchanged.
        for (r, b) in rows.iter_mut().zip(rhs.iter_mut()) {
            let nrm = r[..tau].iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > 0.0 {
                for v in r[..tau].iter_mut() {
                    *v /= nrm;
                }
                *b /= nrm;
            }
        }
        let g = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i][j]);
        let h = DVector::from_vec(rhs);
        let mut c = DVector::zeros(nv);
        c[tau] = -1.0;
        let sol = solve_lp(&c, &g, &h)?;
        let num = sol.x.rows(0, n + 1).iter().cloned().collect();
        let mut den = vec![1.0];
        den.extend(sol.x.rows(n + 1, n).iter().cloned());
        Ok((sol.x[tau], num, den))
    }
}

/// `Σ a_k T_k(x)` and its derivative by Clenshaw recurrence.
fn cheb_eval(a: &[f64], x: Complex64) -> (Complex64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    let (mut b1, mut b2) = (zero, zero);
    let (mut d1, mut d2) = (zero, zero);
    for k in (1..a.len()).rev() {
        let b0 = x * b1 * 2.0 - b2 + a[k];
        let d0 = x * d1 * 2.0 - d2 + b1 * 2.0;
        b2 = b1;
        b1 = b0;
        d2 = d1;
        d1 = d0;
    }
    (x * b1 - b2 + a[0], x * d1 - d2 + b1)
}

/// Roots in `x` of `Σ a_k T_k(x)` from the colleague matrix.
fn cheb_roots(a: &[f64]) -> Result<Vec<Complex64>> {
    let n = a.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![Complex64::new(-a[0] / a[1], 0.0)]);
    }
    let mut m = RMat::zeros(n, n);
    m[(0, 1)] = 1.0;
    for i in 1..n - 1 {
        m[(i, i - 1)] = 0.5;
        m[(i, i + 1)] = 0.5;
    }
    m[(n - 1, n - 2)] = 0.5;
    for j in 0..n {
        m[(n - 1, j)] -= a[j] / (2.0 * a[n]);
    }
    let mut roots = linalg::eigenvalues(&m)?;
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (v, d) = cheb_eval(a, *r);
            if d.norm() == 0.0 {
                break;
            }
            let next = *r - v / d;
            if cheb_eval(a, next).0.norm() < v.norm() {
                *r = next;
            } else {
                break;
            }
        }
    }
    Ok(roots)
}

/// Roots inside the unit disc of the spectral factor of a non-negative
/// cosine polynomial `Σ a_k cos kθ`: each root `x_i` of the polynomial in
/// `x = cos θ` contributes the `z` with `(z + 1/z)/2 = x_i` and `|z| ≤ 1`.
fn spectral_roots(a: &[f64], radius: f64) -> Result<Vec<Complex64>> {
    let n = a.len() - 1;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // each vanishing top coefficient contributes a root at z = 0
    let mut eff = n;
    while eff > 0 && a[eff].abs() <= 1e-13 * scale {
        eff -= 1;
    }
    let xs = cheb_roots(&a[..=eff])?;
    let mut on_circle = Vec::new();
    let mut inside = Vec::with_capacity(n);
    for x in xs {
        if !x.norm().is_finite() {
            return Err(Error::InfeasibleFit(
                "spectral factorization produced non-finite roots".into(),
            ));
        }
        if x.im.abs() <= 1e-9 && x.re.abs() <= 1.0 {
            on_circle.push(x.re);
            continue;
        }
        let w = (x * x - 1.0).sqrt();
        let (z1, z2) = (x - w, x + w);
        inside.push(if z1.norm() <= z2.norm() { z1 } else { z2 });
    }
    // Zeros on the circle must come in touching pairs for a non-negative
    // polynomial; each pair becomes one conjugate pair of roots.
    if on_circle.len() % 2 == 1 {
        return Err(Error::InfeasibleFit("fitted magnitude squared changes sign".into()));
    }
    on_circle.sort_by(f64::total_cmp);
    for pair in on_circle.chunks(2) {
        let x = (pair[0] + pair[1]) / 2.0;
        let y = (1.0 - x * x).max(0.0).sqrt();
        inside.push(Complex64::new(x, y));
        inside.push(Complex64::new(x, -y));
    }
    // pull roots on or near the circle strictly inside; the realized
    // magnitude is checked against the fit afterwards
    for r in inside.iter_mut() {
        let m = r.norm();
        if m > radius {
            *r *= radius / m;
        }
        if r.im.abs() <= 1e-12 {
            r.im = 0.0;
        }
    }
    inside.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), n - eff));
    Ok(inside)
}

/// Maps unit-disc roots to left half-plane roots, clamping very fast ones.
fn to_s_plane(roots: &[Complex64], wc: f64, w_fast: f64) -> Vec<Complex64> {
    roots
        .iter()
        .map(|&r| {
            let one = Complex64::new(1.0, 0.0);
            let den = r + one;
            let s = if den.norm() < 1e-300 {
                Complex64::new(-w_fast, 0.0)
            } else {
                (r - one) / den * wc
            };
            let s = if s.norm() > w_fast { s * (w_fast / s.norm()) } else { s };
            if s.im.abs() <= 1e-9 * (1.0 + s.norm()) {
                Complex64::new(s.re, 0.0)
            } else {
                s
            }
        })
        .collect()
}

/// Quadratic `[1, b, c]` and linear `[1, b]` factors.
type Factors = (Vec<[f64; 3]>, Vec<[f64; 2]>);

/// Real polynomial factors (highest power first) from conjugate-closed roots.
fn real_factors(roots: &[Complex64]) -> Result<Factors> {
    let mut quads = Vec::new();
    let mut lins = Vec::new();
    let mut n_upper = 0;
    let mut n_lower = 0;
    for r in roots {
        if r.im > 0.0 {
            quads.push([1.0, -2.0 * r.re, r.norm_sqr()]);
            n_upper += 1;
        } else if r.im < 0.0 {
            n_lower += 1;
        } else {
            lins.push([1.0, -r.re]);
        }
    }
    if n_upper != n_lower {
        return Err(Error::InfeasibleFit("roots are not conjugate-symmetric".into()));
    }
    // pair real roots into quadratics where possible
    lins.sort_by(|a, b| a[1].partial_cmp(&b[1]).unwrap());
    while lins.len() >= 2 {
        let x = lins.pop().unwrap();
        let y = lins.pop().unwrap();
        quads.push([1.0, x[1] + y[1], x[1] * y[1]]);
    }
    Ok((quads, lins))
}

/// Second-order section `(b2 s² + b1 s + b0) / (s² + a1 s + a0)` with the
/// first state scaled by the natural frequency.
fn quad_section(num: [f64; 3], den: [f64; 3]) -> StateSpace {
    let (a1, a0) = (den[1], den[2]);
    let wn = a0.sqrt();
    let (b2, b1, b0) = (num[0], num[1], num[2]);
    let a = RMat::from_row_slice(2, 2, &[0.0, wn, -wn, -a1]);
    let b = RMat::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = RMat::from_row_slice(1, 2, &[(b0 - b2 * a0) / wn, b1 - b2 * a1]);
    StateSpace {
        a,
        b,
        c,
        d: RMat::from_element(1, 1, b2),
    }
}

/// `(b1 s + b0) / (s − p)`
fn lin_section(num: [f64; 2], pole: f64) -> StateSpace {
    StateSpace {
        a: RMat::from_element(1, 1, pole),
        b: RMat::from_element(1, 1, 1.0),
        c: RMat::from_element(1, 1, num[1] + num[0] * pole),
        d: RMat::from_element(1, 1, num[0]),
    }
}

/// Cascade realization of `k · Π(s − z_i) / Π(s − p_i)` with equal numbers
/// of zeros and poles.
fn cascade(zeros: &[Complex64], poles: &[Complex64], gain: f64, w_ref: f64) -> Result<StateSpace> {
    let (zq, zl) = real_factors(zeros)?;
    let (pq, pl) = real_factors(poles)?;
    let mut zq = zq.into_iter();
    let mut zl = zl.into_iter();
    let mut sections: Vec<StateSpace> = Vec::new();
    for den in &pq {
        let num = match zq.next() {
            Some(q) => q,
            None => match zl.next() {
                Some(l) => [0.0, l[0], l[1]],
                None => [0.0, 0.0, 1.0],
            },
        };
        sections.push(quad_section(num, *den));
    }
    for den in &pl {
        let num = zl.next().unwrap_or([0.0, 1.0]);
        sections.push(lin_section(num, -den[1]));
    }
    if zq.next().is_some() || zl.next().is_some() {
        return Err(Error::InfeasibleFit("more zeros than poles".into()));
    }
    if sections.is_empty() {
        return Ok(StateSpace::static_gain(RMat::from_element(1, 1, gain)));
    }
    // unit magnitude at the reference frequency for each section, then
    // spread the overall gain evenly
    let share = gain.abs().powf(1.0 / sections.len() as f64);
    let mut out: Option<StateSpace> = None;
    for sec in sections {
        let mag = sec.eval_jw(w_ref)?[(0, 0)].norm();
        let sec = sec.scale_output(share / mag);
        out = Some(match out {
            None => sec,
            Some(acc) => lti::series(&acc, &sec)?,
        });
    }
    let mut sys = out.expect("non-empty");
    if gain < 0.0 {
        sys = sys.scale_output(-1.0);
    }
    Ok(sys)
}

fn magnitudes(sys: &StateSpace, omegas: &[f64]) -> Result<Vec<f64>> {
    omegas.iter().map(|&w| Ok(sys.eval_jw(w)?[(0, 0)].norm())).collect()
}

/// Fits a stable minimum-phase `w(s)` of the given order to positive
/// magnitude samples `target` on `grid`.
pub fn fit_magnitude(grid: &FrequencyGrid, target: &[f64], order: usize, mode: FitMode) -> Result<MagnitudeFit> {
    fit_with_slack(grid, target, None, order, mode)
}

/// Two-sided fit where point `k` may deviate from `target[k]` by a factor
/// `slack[k] ≥ 1` before it counts as error. `max_log_error` is still
/// measured against `target`.
pub fn fit_magnitude_banded(grid: &FrequencyGrid, target: &[f64], slack: &[f64], order: usize) -> Result<MagnitudeFit> {
    if slack.len() != target.len() {
        return Err(Error::LengthMismatch(slack.len(), target.len()));
    }
    if slack.iter().any(|v| !(v.is_finite() && *v >= 1.0)) {
        return Err(Error::InvalidArgument("slack factors must be finite and ≥ 1".into()));
    }
    fit_with_slack(grid, target, Some(slack), order, FitMode::TwoSided)
}

fn fit_with_slack(
    grid: &FrequencyGrid,
    target: &[f64],
    slack: Option<&[f64]>,
    order: usize,
    mode: FitMode,
) -> Result<MagnitudeFit> {
    let w = grid.omegas();
    if target.len() != w.len() {
        return Err(Error::LengthMismatch(target.len(), w.len()));
    }
    if target.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonPositiveEnvelope);
    }
    let headroom = match mode {
        FitMode::Overbound { headroom } => {
            if !(headroom >= 1.0 && headroom.is_finite()) {
                return Err(Error::InvalidArgument("headroom must be ≥ 1".into()));
            }
            headroom
        }
        FitMode::TwoSided => 1.0,
    };
    let goal: Vec<f64> = target.iter().map(|v| v * headroom).collect();
    let finish = |sys: StateSpace| -> Result<MagnitudeFit> {
        let mags = magnitudes(&sys, w)?;
        let ratio: Vec<f64> = mags.iter().zip(target).map(|(m, t)| m / t).collect();
        let max_log_error = ratio.iter().map(|r| r.ln().abs()).fold(0.0, f64::max);
        Ok(MagnitudeFit {
            sys,
            ratio,
            max_log_error,
        })
    };

    let gmax = goal.iter().cloned().fold(0.0, f64::max);
    let gmin = goal.iter().cloned().fold(f64::INFINITY, f64::min);
    if order == 0 {
        let k = match mode {
            FitMode::Overbound { .. } => gmax,
            FitMode::TwoSided => (gmax * gmin).sqrt(),
        };
        return finish(StateSpace::static_gain(RMat::from_element(1, 1, k)));
    }

    // Cosine-polynomial coefficients cannot resolve more than a few decades
    // of magnitude, so the shape is fitted to a floored copy of the goal.
    let shaped: Vec<f64> = goal.iter().map(|v| v.max(gmax * DYNAMIC_RANGE)).collect();
    let g0 = (shaped.iter().map(|v| v.ln()).sum::<f64>() / shaped.len() as f64).exp();
    let sq: Vec<f64> = shaped.iter().map(|v| (v / g0).powi(2)).collect();
    let wc = (w[0] * w[w.len() - 1]).sqrt();
    let fit_theta: Vec<f64> = w.iter().map(|&x| 2.0 * (x / wc).atan()).collect();
    let mut dense_theta = Vec::with_capacity(DENSE);
    let mut dense_target = Vec::with_capacity(DENSE);
    for j in 0..DENSE {
        let th = std::f64::consts::PI * j as f64 / (DENSE - 1) as f64;
        let om = wc * (th / 2.0).tan();
        dense_theta.push(th);
        dense_target.push(if j == DENSE - 1 {
            sq[sq.len() - 1]
        } else {
            interp_log(w, &sq, om)
        });
    }
    let prob = Problem {
        n: order,
        fit_theta,
        fit_target: sq.clone(),
        fit_slack: match slack {
            Some(sl) => sl.iter().map(|v| v * v).collect(),
            None => vec![1.0; w.len()],
        },
        dense_theta,
        dense_target,
    };
    let band = |t: f64| match mode {
        FitMode::Overbound { .. } => (1.0, t),
        FitMode::TwoSided => (1.0 / t.sqrt(), t.sqrt()),
    };
    let feasible = |t: f64| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let (lo, hi) = band(t);
        let (tau, num, den) = prob.solve(lo, hi)?;
        Ok((tau >= 0.0).then_some((num, den)))
    };

    let mut t_lo = 1.0;
    let mut t_hi = 10.0;
    let mut coeffs = loop {
        if let Some(c) = feasible(t_hi)? {
            break c;
        }
        t_lo = t_hi;
        t_hi *= 10.0;
        if t_hi > 1e12 {
            return Err(Error::InfeasibleFit(format!("order {order} cannot follow the target shape")));
        }
    };
    while t_hi / t_lo > 1.0 + 1e-3 {
        let mid = (t_lo * t_hi).sqrt();
        match feasible(mid)? {
            Some(c) => {
                t_hi = mid;
                coeffs = c;
            }
            None => t_lo = mid,
        }
    }
    let (num, den) = coeffs;

    let w_fast = FAST_LIMIT * w[w.len() - 1];
    let radius = match mode {
        FitMode::Overbound { .. } => ROOT_RADIUS,
        FitMode::TwoSided => SCALE_ROOT_RADIUS,
    };
    let zeros = to_s_plane(&spectral_roots(&num, radius)?, wc, w_fast);
    let poles = to_s_plane(&spectral_roots(&den, radius)?, wc, w_fast);
    if poles.iter().chain(&zeros).any(|r| !(r.re < 0.0)) {
        return Err(Error::InfeasibleFit("factorization produced a non-minimum-phase root".into()));
    }
    let unit = cascade(&zeros, &poles, 1.0, wc)?;
    let unit_mag = magnitudes(&unit, w)?;
    // gain: log-mean match to the fitted magnitude at the grid points
    let model: Vec<f64> = prob
        .fit_theta
        .iter()
        .map(|&th| (trig_eval(&num, th) / trig_eval(&den, th)).max(1e-300).sqrt() * g0)
        .collect();
    let log_gain = model.iter().zip(&unit_mag).map(|(m, u)| m.ln() - u.ln()).sum::<f64>() / w.len() as f64;
    let mut gain = log_gain.exp();
    let check = model
        .iter()
        .zip(&unit_mag)
        .map(|(m, u)| (u * gain / m).ln().abs())
        .fold(0.0, f64::max);
    if matches!(mode, FitMode::Overbound { .. }) && !(check < 1e-2) {
        return Err(Error::InfeasibleFit(format!(
            "spectral factors disagree with the fitted magnitude (log error {check:.3e})"
        )));
    }
    if let FitMode::Overbound { .. } = mode {
        let worst = unit_mag
            .iter()
            .zip(&goal)
            .map(|(u, g)| u * gain / g)
            .fold(f64::INFINITY, f64::min);
        gain *= (1.0 + 1e-12) / worst;
    }
    finish(cascade(&zeros, &poles, gain, wc)?)
}
