//! Structured singular value upper bound for one uncertainty block plus one
//! performance block, and the rational D-scale fit used by DK iteration.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::lti::{golden_min, series, FrequencyGrid, FrequencyResponse, StateSpace};
use crate::magfit::{fit_magnitude, fit_magnitude_banded, FitMode};
use crate::plant::GeneralizedPlant;

pub const D_MIN: f64 = 1e-6;
pub const D_MAX: f64 = 1e6;
const COARSE: usize = 25;
const LOG_TOL: f64 = 1e-6;

/// Shapes of the two full blocks. `delta` is `(rows, cols)` of Δ, so `N`
/// has `delta.1 + perf.1` rows and `delta.0 + perf.0` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub delta: (usize, usize),
    pub perf: (usize, usize),
}

impl BlockStructure {
    pub fn for_plant(p: &GeneralizedPlant) -> Self {
        Self {
            delta: (p.dims.delta_in, p.dims.delta_out),
            perf: (p.dims.perf_in, p.dims.perf_out),
        }
    }

    fn n_rows(&self) -> usize {
        self.delta.1 + self.perf.1
    }

    fn n_cols(&self) -> usize {
        self.delta.0 + self.perf.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsvReport {
    pub grid: FrequencyGrid,
    pub mu_upper: Vec<f64>,
    pub d_opt: Vec<f64>,
    /// `(ω*, μ*)` at the largest upper bound.
    pub peak: (f64, f64),
    /// True where the scalar search stopped at the edge of `[D_MIN, D_MAX]`.
    pub edge: Vec<bool>,
}

impl SsvReport {
    /// CSV with columns `omega_rad_s, mu_upper, d_opt`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_rad_s,mu_upper,d_opt\n");
        for ((w, m), d) in self.grid.omegas().iter().zip(&self.mu_upper).zip(&self.d_opt) {
            let _ = writeln!(out, "{w:.12e},{m:.12e},{d:.12e}");
        }
        out
    }

    pub fn has_edge_solution(&self) -> bool {
        self.edge.iter().any(|e| *e)
    }
}

/// `σ̄(diag(d I, I) N diag(d⁻¹ I, I))`
pub fn scaled_sigma(n: &CMat, rows_delta: usize, cols_delta: usize, d: f64) -> f64 {
    let mut m = n.clone();
    let (r, c) = m.shape();
    for i in 0..rows_delta {
        for j in cols_delta..c {
            m[(i, j)] *= d;
        }
    }
    for i in rows_delta..r {
        for j in 0..cols_delta {
            m[(i, j)] /= d;
        }
    }
    linalg::sigma_max(&m)
}

/// Minimizes the scaled maximum singular value over `d ∈ [D_MIN, D_MAX]`.
/// Returns `(μ upper bound, d, at_edge)`.
pub fn mu_upper_point(n: &CMat, blocks: &BlockStructure) -> (f64, f64, bool) {
    let (rd, cd) = (blocks.delta.1, blocks.delta.0);
    let f = |ld: f64| scaled_sigma(n, rd, cd, ld.exp());
    let (lo, hi) = (D_MIN.ln(), D_MAX.ln());
    let step = (hi - lo) / (COARSE - 1) as f64;
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..COARSE {
        let v = f(lo + step * k as f64);
        if v < best.0 {
            best = (v, k);
        }
    }
    let k = best.1;
    let a = lo + step * k.saturating_sub(1) as f64;
    let b = lo + step * (k + 1).min(COARSE - 1) as f64;
    let (mut ld, mut val) = golden_min(f, a, b, LOG_TOL);
    if best.0 < val {
        ld = lo + step * k as f64;
        val = best.0;
    }
    // a flat objective may leave golden section away from the bracket end
    for edge in [lo, hi] {
        let v = f(edge);
        if v < val {
            ld = edge;
            val = v;
        }
    }
    let at_edge = (ld - lo).abs() < 1e-3 || (hi - ld).abs() < 1e-3;
    (val, ld.exp(), at_edge)
}

pub fn mu_upper_two_blocks(n: &FrequencyResponse, blocks: &BlockStructure) -> Result<SsvReport> {
    let (r, c) = n.shape();
    if r != blocks.n_rows() || c != blocks.n_cols() {
        return Err(Error::dims(format!(
            "N is {r}x{c}, block structure expects {}x{}",
            blocks.n_rows(),
            blocks.n_cols()
        )));
    }
    let mut mu_upper = Vec::with_capacity(n.values.len());
    let mut d_opt = Vec::with_capacity(n.values.len());
    let mut edge = Vec::with_capacity(n.values.len());
    for v in &n.values {
        let (m, d, e) = mu_upper_point(v, blocks);
        mu_upper.push(m);
        d_opt.push(d);
        edge.push(e);
    }
    let (k, peak) = mu_upper
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    Ok(SsvReport {
        peak: (n.grid.omegas()[k], peak),
        grid: n.grid.clone(),
        mu_upper,
        d_opt,
        edge,
    })
}

/// Robust performance on the grid: `μ < 1` at every point.
pub fn rp_check(report: &SsvReport) -> bool {
    rp_check_below(report, 1.0)
}

pub fn rp_check_below(report: &SsvReport, level: f64) -> bool {
    report.mu_upper.iter().all(|m| *m < level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DScaleFit {
    pub sys: StateSpace,
    /// `max_k |ln(|d(jω_k)| / d_k)|`
    pub max_log_error: f64,
}

/// Stable minimum-phase `d(s)` following `|d(jω_k)| ≈ samples_k`.
pub fn fit_dscale(samples: &[f64], grid: &FrequencyGrid, order: usize) -> Result<DScaleFit> {
    if samples.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidArgument("D samples must be positive".into()));
    }
    let fit = fit_magnitude(grid, samples, order, FitMode::TwoSided)?;
    Ok(DScaleFit {
        sys: fit.sys,
        max_log_error: fit.max_log_error,
    })
}

/// Range of log-scalings at one frequency keeping the scaled norm at or
/// below `level`, found by bisection outward from `d_best`. The scaled norm
/// is quasi-convex in `ln d`.
pub fn dscale_interval(n: &CMat, blocks: &BlockStructure, d_best: f64, level: f64) -> (f64, f64) {
    let (rd, cd) = (blocks.delta.1, blocks.delta.0);
    let f = |ld: f64| scaled_sigma(n, rd, cd, ld.exp());
    let center = d_best.ln();
    let search = |edge: f64| -> f64 {
        if f(edge) <= level {
            return edge;
        }
        let (mut inside, mut outside) = (center, edge);
        for _ in 0..60 {
            let mid = 0.5 * (inside + outside);
            if f(mid) <= level {
                inside = mid;
            } else {
                outside = mid;
            }
            if (outside - inside).abs() < LOG_TOL {
                break;
            }
        }
        inside
    };
    (search(D_MIN.ln()).exp(), search(D_MAX.ln()).exp())
}

/// Scaling fit that only has to stay inside a per-frequency tolerance band.
///
/// At each grid point the band holds the scalings whose scaled norm does not
/// exceed `μ_k + share·(μ_peak − μ_k)`, with at least a relative allowance
/// of `floor` above `μ_k`. Frequencies far below the peak therefore leave
/// the fit free, and the reported error is measured against `d_opt`.
pub fn fit_dscale_banded(
    n: &FrequencyResponse,
    blocks: &BlockStructure,
    report: &SsvReport,
    order: usize,
    share: f64,
    floor: f64,
) -> Result<DScaleFit> {
    if n.values.len() != report.mu_upper.len() {
        return Err(Error::LengthMismatch(n.values.len(), report.mu_upper.len()));
    }
    let peak = report.peak.1;
    let mut center = Vec::with_capacity(n.values.len());
    let mut slack = Vec::with_capacity(n.values.len());
    for ((v, m), d) in n.values.iter().zip(&report.mu_upper).zip(&report.d_opt) {
        let level = (m + share * (peak - m)).max(m * (1.0 + floor));
        let (lo, hi) = dscale_interval(v, blocks, *d, level);
        center.push((lo * hi).sqrt());
        slack.push((hi / lo).sqrt().max(1.0));
    }
    let fit = fit_magnitude_banded(&report.grid, &center, &slack, order)?;
    let mags: Vec<f64> = report
        .grid
        .omegas()
        .iter()
        .map(|&w| Ok(fit.sys.eval_jw(w)?[(0, 0)].norm()))
        .collect::<Result<_>>()?;
    let max_log_error = mags
        .iter()
        .zip(&report.d_opt)
        .map(|(m, d)| (m / d).ln().abs())
        .fold(0.0, f64::max);
    Ok(DScaleFit {
        sys: fit.sys,
        max_log_error,
    })
}

/// Inverse of a biproper SISO system.
pub fn invert_siso(d: &StateSpace) -> Result<StateSpace> {
    let dd = d.d[(0, 0)];
    let scale = 1.0 + d.c.norm() + d.b.norm();
    if !(dd.abs() > 1e-12 * scale) {
        return Err(Error::NonInvertibleScale);
    }
    let inv = 1.0 / dd;
    StateSpace::new(
        &d.a - &d.b * &d.c * inv,
        &d.b * inv,
        &d.c * (-inv),
        RMat::from_element(1, 1, inv),
    )
}

/// Absorbs `diag(d·I, I) · P · diag(d⁻¹·I, I)` on the Δ channels.
pub fn scale_plant(p: &GeneralizedPlant, d: &StateSpace) -> Result<GeneralizedPlant> {
    if !d.is_siso() {
        return Err(Error::dims("D scale must be SISO"));
    }
    let dinv = invert_siso(d)?;
    let dims = p.dims;
    let rest_in = p.sys.nu() - dims.delta_in;
    let rest_out = p.sys.ny() - dims.delta_out;
    let pre = dinv.diag_repeat(dims.delta_in).append(&StateSpace::identity(rest_in));
    let post = d.diag_repeat(dims.delta_out).append(&StateSpace::identity(rest_out));
    let sys = series(&series(&pre, &p.sys)?, &post)?;
    GeneralizedPlant::new(sys, dims)
}
