//! Continuous-time LTI state-space algebra.
//!
//! A [`StateSpace`] is the single carrier for plants, controllers, weights
//! and scalings. Interconnections never attempt minimal-realization cleanup,
//! so state dimension grows with every series/feedback/LFT.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, hstack, vstack, CMat, RMat};

/// Real realization `(A, B, C, D)` of `C (sI - A)^-1 B + D`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: RMat,
    pub b: RMat,
    pub c: RMat,
    pub d: RMat,
}

impl StateSpace {
    pub fn new(a: RMat, b: RMat, c: RMat, d: RMat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dims(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::dims(format!("C has {} columns, A has {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dims(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        let finite = |m: &RMat| m.iter().all(|x| x.is_finite());
        if !(finite(&a) && finite(&b) && finite(&c) && finite(&d)) {
            return Err(Error::InvalidArgument("non-finite realization entry".into()));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn static_gain(d: RMat) -> Self {
        let (ny, nu) = d.shape();
        Self {
            a: RMat::zeros(0, 0),
            b: RMat::zeros(0, nu),
            c: RMat::zeros(ny, 0),
            d,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::static_gain(RMat::identity(n, n))
    }

    pub fn zero(ny: usize, nu: usize) -> Self {
        Self::static_gain(RMat::zeros(ny, nu))
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    /// Transfer matrix at a complex point `s`.
    pub fn eval(&self, s: Complex64) -> Option<CMat> {
        let n = self.nx();
        let d = linalg::to_complex(&self.d);
        if n == 0 {
            return Some(d);
        }
        let mut m = linalg::to_complex(&self.a) * Complex64::new(-1.0, 0.0);
        for i in 0..n {
            m[(i, i)] += s;
        }
        let x = linalg::solve_complex(m, &linalg::to_complex(&self.b))?;
        Some(linalg::to_complex(&self.c) * x + d)
    }

    pub fn eval_jw(&self, omega: f64) -> Result<CMat> {
        self.eval(linalg::jw(omega)).ok_or(Error::SingularAtFrequency(omega))
    }

    /// `C (jωI - A)^-1 B + D` at every grid frequency.
    pub fn freq_response(&self, grid: &FrequencyGrid) -> Result<FrequencyResponse> {
        let values = grid.omegas().iter().map(|&w| self.eval_jw(w)).collect::<Result<Vec<_>>>()?;
        Ok(FrequencyResponse {
            grid: grid.clone(),
            values,
        })
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        linalg::eigenvalues(&self.a)
    }

    /// Asymptotic stability: every eigenvalue of `A` strictly in the open left
    /// half-plane (a tiny relative margin absorbs rounding on exact zeros).
    pub fn is_stable(&self) -> Result<bool> {
        if self.nx() == 0 {
            return Ok(true);
        }
        let margin = 1e-12 * (1.0 + self.a.norm());
        Ok(linalg::spectral_abscissa(&self.a)? < -margin)
    }

    /// State transform `x = T x_new`.
    pub fn similarity(&self, t: &RMat) -> Result<Self> {
        let ti = linalg::inverse_real(t).ok_or_else(|| Error::InvalidArgument("singular similarity transform".into()))?;
        Self::new(&ti * &self.a * t, &ti * &self.b, &self.c * t, self.d.clone())
    }

    pub fn dc_gain(&self) -> Result<RMat> {
        let g = self.eval(Complex64::new(0.0, 0.0)).ok_or(Error::SingularAtFrequency(0.0))?;
        Ok(linalg::real_part(&g))
    }

    /// Keeps the listed outputs (rows) and inputs (columns), in order.
    pub fn select(&self, outputs: &[usize], inputs: &[usize]) -> Self {
        let b = RMat::from_fn(self.nx(), inputs.len(), |i, j| self.b[(i, inputs[j])]);
        let c = RMat::from_fn(outputs.len(), self.nx(), |i, j| self.c[(outputs[i], j)]);
        let d = RMat::from_fn(outputs.len(), inputs.len(), |i, j| self.d[(outputs[i], inputs[j])]);
        Self {
            a: self.a.clone(),
            b,
            c,
            d,
        }
    }

    pub fn scale_output(&self, k: f64) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.c * k,
            d: &self.d * k,
        }
    }

    /// `left * G * right` for static matrices.
    pub fn pre_post(&self, left: &RMat, right: &RMat) -> Result<Self> {
        if left.ncols() != self.ny() || right.nrows() != self.nu() {
            return Err(Error::dims("pre/post multiplication"));
        }
        Self::new(self.a.clone(), &self.b * right, left * &self.c, left * &self.d * right)
    }

    /// Block-diagonal append: inputs and outputs are stacked.
    pub fn append(&self, other: &Self) -> Self {
        Self {
            a: block_diag(&[&self.a, &other.a]),
            b: block_diag(&[&self.b, &other.b]),
            c: block_diag(&[&self.c, &other.c]),
            d: block_diag(&[&self.d, &other.d]),
        }
    }

    pub fn append_all(items: &[&Self]) -> Self {
        let mut it = items.iter();
        let first = match it.next() {
            Some(s) => (*s).clone(),
            None => return Self::zero(0, 0),
        };
        it.fold(first, |acc, s| acc.append(s))
    }

    /// SISO system repeated on the diagonal `n` times.
    pub fn diag_repeat(&self, n: usize) -> Self {
        let items: Vec<&Self> = std::iter::repeat_n(self, n).collect();
        Self::append_all(&items)
    }

    pub fn is_siso(&self) -> bool {
        self.nu() == 1 && self.ny() == 1
    }
}

/// `g2 · g1`: the output of `g1` drives `g2`.
pub fn series(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    if g1.ny() != g2.nu() {
        return Err(Error::dims(format!(
            "series: g1 has {} outputs, g2 has {} inputs",
            g1.ny(),
            g2.nu()
        )));
    }
    let (n1, n2) = (g1.nx(), g2.nx());
    let mut a = RMat::zeros(n1 + n2, n1 + n2);
    a.view_mut((0, 0), (n1, n1)).copy_from(&g1.a);
    a.view_mut((n1, 0), (n2, n1)).copy_from(&(&g2.b * &g1.c));
    a.view_mut((n1, n1), (n2, n2)).copy_from(&g2.a);
    let b = vstack(&[&g1.b, &(&g2.b * &g1.d)]);
    let c = hstack(&[&(&g2.d * &g1.c), &g2.c]);
    let d = &g2.d * &g1.d;
    StateSpace::new(a, b, c, d)
}

/// `g1 + g2` (shared inputs, summed outputs).
pub fn parallel(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    if g1.nu() != g2.nu() || g1.ny() != g2.ny() {
        return Err(Error::dims("parallel: shapes differ"));
    }
    StateSpace::new(
        block_diag(&[&g1.a, &g2.a]),
        vstack(&[&g1.b, &g2.b]),
        hstack(&[&g1.c, &g2.c]),
        &g1.d + &g2.d,
    )
}

/// Static wiring around a block-diagonal collection of subsystems.
///
/// With block inputs `u_b`, block outputs `y_b`, external inputs `w` and
/// external outputs `z`:
///
/// ```text
/// u_b = f y_b + g w
/// z   = h y_b + j w
/// ```
#[derive(Debug, Clone)]
pub struct Wiring {
    pub f: RMat,
    pub g: RMat,
    pub h: RMat,
    pub j: RMat,
}

pub fn connect(blocks: &StateSpace, wiring: &Wiring) -> Result<StateSpace> {
    let Wiring { f, g, h, j } = wiring;
    let (nyb, nub) = (blocks.ny(), blocks.nu());
    if f.shape() != (nub, nyb) || g.nrows() != nub || h.ncols() != nyb || j.nrows() != h.nrows() || j.ncols() != g.ncols() {
        return Err(Error::dims("connect: wiring shapes"));
    }
    let loop_m = RMat::identity(nub, nub) - f * &blocks.d;
    let m = linalg::inverse_real(&loop_m).ok_or(Error::AlgebraicLoop)?;
    let mf = &m * f;
    let mg = &m * g;
    let a = &blocks.a + &blocks.b * &mf * &blocks.c;
    let b = &blocks.b * &mg;
    let yc = &blocks.c + &blocks.d * &mf * &blocks.c;
    let c = h * yc;
    let d = h * &blocks.d * &mg + j;
    StateSpace::new(a, b, c, d)
}

/// Closed loop `g (I - sign·h g)^-1`: `h` feeds the output of `g` back to
/// its input with the given sign (`-1.0` for negative feedback).
pub fn feedback(g: &StateSpace, h: &StateSpace, sign: f64) -> Result<StateSpace> {
    if h.nu() != g.ny() || h.ny() != g.nu() {
        return Err(Error::dims("feedback: h must map g's outputs to g's inputs"));
    }
    let (nu, ny) = (g.nu(), g.ny());
    let blocks = g.append(h);
    let mut f = RMat::zeros(nu + ny, ny + nu);
    f.view_mut((0, ny), (nu, nu)).copy_from(&(RMat::identity(nu, nu) * sign));
    f.view_mut((nu, 0), (ny, ny)).copy_from(&RMat::identity(ny, ny));
    let gw = vstack(&[&RMat::identity(nu, nu), &RMat::zeros(ny, nu)]);
    let hw = hstack(&[&RMat::identity(ny, ny), &RMat::zeros(ny, nu)]);
    connect(
        &blocks,
        &Wiring {
            f,
            g: gw,
            h: hw,
            j: RMat::zeros(ny, nu),
        },
    )
}

/// Lower LFT `F_l(P, K)`. The last `n_meas` outputs and `n_ctl` inputs of
/// `p` are closed through `k` (`n_ctl x n_meas`).
pub fn lft_lower(p: &StateSpace, k: &StateSpace, n_meas: usize, n_ctl: usize) -> Result<StateSpace> {
    if k.nu() != n_meas || k.ny() != n_ctl || n_meas > p.ny() || n_ctl > p.nu() {
        return Err(Error::dims(format!(
            "lft_lower: K is {}x{}, partition ({n_meas}, {n_ctl}) of P {}x{}",
            k.ny(),
            k.nu(),
            p.ny(),
            p.nu()
        )));
    }
    let nz = p.ny() - n_meas;
    let nw = p.nu() - n_ctl;
    let blocks = p.append(k);
    // block inputs: [w (nw), u (n_ctl), k_in (n_meas)]
    // block outputs: [z (nz), y (n_meas), k_out (n_ctl)]
    let nub = nw + n_ctl + n_meas;
    let nyb = nz + n_meas + n_ctl;
    let mut f = RMat::zeros(nub, nyb);
    f.view_mut((nw, nz + n_meas), (n_ctl, n_ctl))
        .copy_from(&RMat::identity(n_ctl, n_ctl));
    f.view_mut((nw + n_ctl, nz), (n_meas, n_meas))
        .copy_from(&RMat::identity(n_meas, n_meas));
    let mut g = RMat::zeros(nub, nw);
    g.view_mut((0, 0), (nw, nw)).copy_from(&RMat::identity(nw, nw));
    let mut h = RMat::zeros(nz, nyb);
    h.view_mut((0, 0), (nz, nz)).copy_from(&RMat::identity(nz, nz));
    connect(
        &blocks,
        &Wiring {
            f,
            g,
            h,
            j: RMat::zeros(nz, nw),
        },
    )
}

/// Strictly increasing, positive angular frequencies (rad/s).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl<'de> Deserialize<'de> for FrequencyGrid {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let omegas = Vec::<f64>::deserialize(de)?;
        FrequencyGrid::new(omegas).map_err(serde::de::Error::custom)
    }
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidArgument("empty frequency grid".into()));
        }
        if omegas.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("grid frequencies must be positive".into()));
        }
        if omegas.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        Ok(Self { omegas })
    }

    /// `n` log-spaced points between `lo` and `hi` rad/s (inclusive).
    pub fn logspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![lo]);
        }
        let (l0, l1) = (lo.log10(), hi.log10());
        let step = (l1 - l0) / (n - 1) as f64;
        Self::new((0..n).map(|k| 10f64.powf(l0 + step * k as f64)).collect())
    }

    /// Log grid specified in hertz, stored in rad/s.
    pub fn logspace_hz(f_lo: f64, f_hi: f64, n: usize) -> Result<Self> {
        let tau = std::f64::consts::TAU;
        Self::logspace(tau * f_lo, tau * f_hi, n)
    }

    /// Log grid covering two decades beyond the slowest and fastest nonzero
    /// pole magnitudes of `sys` (at least 1e-2 .. 1e2 rad/s).
    pub fn spanning(sys: &StateSpace, n: usize) -> Result<Self> {
        let mut lo: f64 = 1e-2;
        let mut hi: f64 = 1e2;
        for p in sys.poles()? {
            let m = p.norm();
            if m > 1e-9 {
                lo = lo.min(m / 100.0);
                hi = hi.max(m * 100.0);
            }
        }
        Self::logspace(lo, hi, n)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// Complex response matrices sampled on a grid.
#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    pub grid: FrequencyGrid,
    pub values: Vec<CMat>,
}

impl FrequencyResponse {
    pub fn new(grid: FrequencyGrid, values: Vec<CMat>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch(values.len(), grid.len()));
        }
        if let Some(first) = values.first() {
            if values.iter().any(|v| v.shape() != first.shape()) {
                return Err(Error::dims("response matrices differ in shape"));
            }
        }
        Ok(Self { grid, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.first().map(|v| v.shape()).unwrap_or((0, 0))
    }

    pub fn sigma_max(&self) -> Vec<f64> {
        self.values.iter().map(linalg::sigma_max).collect()
    }

    /// CSV with columns `omega_rad_s, re_i_j, im_i_j` in row-major channel order.
    pub fn to_csv(&self) -> String {
        let (ny, nu) = self.shape();
        let mut out = String::from("omega_rad_s");
        for i in 0..ny {
            for j in 0..nu {
                let _ = write!(out, ",re_{}_{},im_{}_{}", i + 1, j + 1, i + 1, j + 1);
            }
        }
        out.push('\n');
        for (w, v) in self.grid.omegas().iter().zip(&self.values) {
            let _ = write!(out, "{w:.12e}");
            for i in 0..ny {
                for j in 0..nu {
                    let z = v[(i, j)];
                    let _ = write!(out, ",{:.12e},{:.12e}", z.re, z.im);
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Minimizes a unimodal function on `[lo, hi]` by golden-section search.
pub(crate) fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a) > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Peak `σ̄(G(jω))` over the grid, refined by golden-section search in
/// `log ω` between the neighbours of the grid maximizer.
pub fn hinf_norm_gridded(sys: &StateSpace, grid: &FrequencyGrid) -> Result<(f64, f64)> {
    if !sys.is_stable()? {
        return Err(Error::UnstableSystem);
    }
    if sys.nx() == 0 {
        return Ok((linalg::sigma_max_real(&sys.d), grid.omegas()[0]));
    }
    let w = grid.omegas();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &om) in w.iter().enumerate() {
        let s = linalg::sigma_max(&sys.eval_jw(om)?);
        if s > best.0 {
            best = (s, k);
        }
    }
    let k = best.1;
    let lo = w[k.saturating_sub(1)].ln();
    let hi = w[(k + 1).min(w.len() - 1)].ln();
    let mut peak = (best.0, w[k]);
    if hi > lo {
        let (x, neg) = golden_min(
            |lw| {
                sys.eval_jw(lw.exp())
                    .map(|g| -linalg::sigma_max(&g))
                    .unwrap_or(f64::NEG_INFINITY)
            },
            lo,
            hi,
            1e-10,
        );
        if -neg > peak.0 {
            peak = (-neg, x.exp());
        }
    }
    Ok(peak)
}

/// Discrete-time realization produced by zero-order-hold sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    pub sys: StateSpace,
    pub dt: f64,
}

/// ZOH discretization through the exponential of `[[A, B], [0, 0]] dt`.
pub fn discretize_zoh(sys: &StateSpace, dt: f64) -> Result<DiscreteStateSpace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("sample time {dt} must be positive")));
    }
    let (n, m) = (sys.nx(), sys.nu());
    let mut big = DMatrix::<f64>::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * dt));
    big.view_mut((0, n), (n, m)).copy_from(&(&sys.b * dt));
    let e = big.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    Ok(DiscreteStateSpace {
        sys: StateSpace::new(ad, bd, sys.c.clone(), sys.d.clone())?,
        dt,
    })
}

impl DiscreteStateSpace {
    /// `C (zI - A)^-1 B + D` at `z = exp(jω dt)`.
    pub fn freq_response(&self, grid: &FrequencyGrid) -> Result<FrequencyResponse> {
        let values = grid
            .omegas()
            .iter()
            .map(|&w| {
                let z = Complex64::from_polar(1.0, w * self.dt);
                self.sys.eval(z).ok_or(Error::SingularAtFrequency(w))
            })
            .collect::<Result<Vec<_>>>()?;
        FrequencyResponse::new(grid.clone(), values)
    }

    /// Runs `x[k+1] = A x[k] + B u[k]`, `y[k] = C x[k] + D u[k]` from `x0`.
    /// `inputs` holds one row per sample.
    pub fn simulate(&self, inputs: &RMat, x0: Option<&nalgebra::DVector<f64>>) -> RMat {
        let n = self.sys.nx();
        let mut x = x0.cloned().unwrap_or_else(|| nalgebra::DVector::zeros(n));
        let mut out = RMat::zeros(inputs.nrows(), self.sys.ny());
        for k in 0..inputs.nrows() {
            let u = inputs.row(k).transpose();
            let y = &self.sys.c * &x + &self.sys.d * &u;
            out.row_mut(k).copy_from(&y.transpose());
            x = &self.sys.a * &x + &self.sys.b * &u;
        }
        out
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.sys.nx() == 0 || linalg::spectral_radius(&self.sys.a)? < 1.0)
    }
}

fn mat_to_rows(m: &RMat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn rows_to_mat(rows: &[Vec<f64>], ncols: usize) -> std::result::Result<RMat, String> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(RMat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct StateSpaceJson {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

impl Serialize for StateSpace {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        StateSpaceJson {
            a: mat_to_rows(&self.a),
            b: mat_to_rows(&self.b),
            c: mat_to_rows(&self.c),
            d: mat_to_rows(&self.d),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for StateSpace {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = StateSpaceJson::deserialize(de)?;
        let nx = j.a.len();
        let ny = j.d.len().max(j.c.len());
        let nu =
            j.d.first()
                .map(|r| r.len())
                .or_else(|| j.b.first().map(|r| r.len()))
                .unwrap_or(0);
        let a = rows_to_mat(&j.a, nx).map_err(D::Error::custom)?;
        let b = rows_to_mat(&j.b, nu).map_err(D::Error::custom)?;
        let c = if j.c.is_empty() {
            RMat::zeros(ny, nx)
        } else {
            rows_to_mat(&j.c, nx).map_err(D::Error::custom)?
        };
        let d = if j.d.is_empty() {
            RMat::zeros(ny, nu)
        } else {
            rows_to_mat(&j.d, nu).map_err(D::Error::custom)?
        };
        let b = if j.b.is_empty() { RMat::zeros(nx, nu) } else { b };
        StateSpace::new(a, b, c, d).map_err(D::Error::custom)
    }
}
