//! Input-output observers, their error dynamics and the weighted
//! generalized plant used for correction-filter synthesis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hstack, RMat};
use crate::lti::{connect, series, StateSpace, Wiring};
use crate::plant::{GeneralizedPlant, PlantDims};
use crate::uncertainty::UncertaintyWeight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    /// Input disturbance shaping (n_u × n_u).
    pub w_d: StateSpace,
    /// Measurement noise shaping (n_y × n_y).
    pub w_n: StateSpace,
    /// Estimation error penalty (n_x × n_x).
    pub w_e: StateSpace,
    /// Correction effort penalty (n_u × n_u).
    pub w_nu: StateSpace,
    /// Optional state disturbance shaping (n_x × n_x). When present the
    /// generalized plant gains a `w3` input added to `e_x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_dx: Option<StateSpace>,
}

/// First-order weight shapes. Corner frequencies are in hertz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    /// DC gain of the low-pass input disturbance weight.
    pub d_gain: f64,
    pub d_bw_hz: f64,
    /// Low-frequency noise level.
    pub n_floor: f64,
    /// High-frequency noise level (equal to `n_floor` for a flat weight).
    pub n_hf: f64,
    pub n_bw_hz: f64,
    /// DC gain of the low-pass error weight.
    pub e_gain: f64,
    pub e_bw_hz: f64,
    /// High-frequency gain of the correction weight.
    pub nu_gain: f64,
    /// DC gain of the correction weight.
    pub nu_dc: f64,
    pub nu_bw_hz: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            d_gain: 3.5,
            d_bw_hz: 2.0,
            n_floor: 0.05,
            n_hf: 0.05,
            n_bw_hz: 20.0,
            e_gain: 3.5,
            e_bw_hz: 1.0,
            nu_gain: 1.0,
            nu_dc: 0.01,
            nu_bw_hz: 10.0,
        }
    }
}

/// `(hf·s + dc·ω) / (s + ω)`; a static gain when `hf == dc`.
pub fn first_order(dc: f64, hf: f64, corner_hz: f64) -> StateSpace {
    if dc == hf {
        return StateSpace::static_gain(RMat::from_element(1, 1, dc));
    }
    let w = std::f64::consts::TAU * corner_hz;
    StateSpace {
        a: RMat::from_element(1, 1, -w),
        b: RMat::from_element(1, 1, w),
        c: RMat::from_element(1, 1, dc - hf),
        d: RMat::from_element(1, 1, hf),
    }
}

pub fn default_weights(p: &WeightParams, n_u: usize, n_x: usize, n_y: usize) -> Result<WeightSet> {
    let corners = [p.d_bw_hz, p.n_bw_hz, p.e_bw_hz, p.nu_bw_hz];
    if corners.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidArgument("weight corner frequencies must be positive".into()));
    }
    Ok(WeightSet {
        w_d: first_order(p.d_gain, 0.0, p.d_bw_hz).diag_repeat(n_u),
        w_n: first_order(p.n_floor, p.n_hf, p.n_bw_hz).diag_repeat(n_y),
        w_e: first_order(p.e_gain, 0.0, p.e_bw_hz).diag_repeat(n_x),
        w_nu: first_order(p.nu_dc, p.nu_gain, p.nu_bw_hz).diag_repeat(n_u),
        w_dx: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverRealization {
    /// Inputs `[u; y]`, outputs `x̂`.
    pub sys: StateSpace,
    /// Open form with inputs `[u; ρ]` and outputs `x̂`, where the caller
    /// closes `ρ = y − C x̂`. Used for sampled-data evaluation.
    pub innovation: StateSpace,
    pub measurement: RMat,
    pub source_label: String,
}

fn check_shapes(g: &StateSpace, c: &RMat, k: &StateSpace) -> Result<(usize, usize, usize)> {
    let (n_u, n_x, n_y) = (g.nu(), g.ny(), c.nrows());
    if c.ncols() != n_x || k.nu() != n_y || k.ny() != n_u {
        return Err(Error::dims(format!(
            "G is {n_x}x{n_u}, C is {}x{}, K is {}x{}",
            c.nrows(),
            c.ncols(),
            k.ny(),
            k.nu()
        )));
    }
    Ok((n_u, n_x, n_y))
}

fn block(rows: usize, cols: usize, parts: &[(usize, usize, RMat)]) -> RMat {
    let mut m = RMat::zeros(rows, cols);
    for (r, c, b) in parts {
        m.view_mut((*r, *c), b.shape()).copy_from(b);
    }
    m
}

/// `x̂ = G (u + K (y − C x̂))`.
pub fn build_observer(g: &StateSpace, c: &RMat, k: &StateSpace, label: &str) -> Result<ObserverRealization> {
    let (n_u, n_x, n_y) = check_shapes(g, c, k)?;
    let blocks = g.append(k);
    let eye = RMat::identity;
    // block inputs [u_G, u_K], outputs [x̂, ν]; external inputs [u, y]
    let wiring = Wiring {
        f: block(n_u + n_y, n_x + n_u, &[(0, n_x, eye(n_u, n_u)), (n_u, 0, -c)]),
        g: block(n_u + n_y, n_u + n_y, &[(0, 0, eye(n_u, n_u)), (n_u, n_u, eye(n_y, n_y))]),
        h: block(n_x, n_x + n_u, &[(0, 0, eye(n_x, n_x))]),
        j: RMat::zeros(n_x, n_u + n_y),
    };
    let sys = connect(&blocks, &wiring)?;
    if !sys.is_stable()? {
        return Err(Error::UnstableObserver);
    }
    let open = Wiring {
        f: block(n_u + n_y, n_x + n_u, &[(0, n_x, eye(n_u, n_u))]),
        ..wiring
    };
    Ok(ObserverRealization {
        sys,
        innovation: connect(&blocks, &open)?,
        measurement: c.clone(),
        source_label: label.to_string(),
    })
}

/// `ξ̇ = A ξ + B u + L (y − C_y ξ)`, `x̂ = C ξ + D u` for a model `(A, B, C, D)`
/// whose outputs are mapped to measurements by `c`.
pub fn build_gain_observer(model: &StateSpace, c: &RMat, gain: &RMat, label: &str) -> Result<ObserverRealization> {
    let (n, n_u, n_y) = (model.nx(), model.nu(), c.nrows());
    if c.ncols() != model.ny() || gain.shape() != (n, n_y) {
        return Err(Error::dims("gain observer: C or L shape"));
    }
    let innovation = StateSpace::new(
        model.a.clone(),
        hstack(&[&model.b, gain]),
        model.c.clone(),
        hstack(&[&model.d, &RMat::zeros(model.ny(), n_y)]),
    )?;
    let cy = c * &model.c;
    let dy = c * &model.d;
    // ρ = y − C_y ξ − D_y u
    let sys = StateSpace::new(
        &model.a - gain * &cy,
        hstack(&[&(&model.b - gain * &dy), gain]),
        model.c.clone(),
        hstack(&[&model.d, &RMat::zeros(model.ny(), n_y)]),
    )?;
    if !sys.is_stable()? {
        return Err(Error::UnstableObserver);
    }
    debug_assert_eq!(sys.nu(), n_u + n_y);
    Ok(ObserverRealization {
        sys,
        innovation,
        measurement: c.clone(),
        source_label: label.to_string(),
    })
}

/// Error dynamics with inputs `[d_u, d_x, n]` and outputs `[e_x, e_y]`.
pub fn build_error_dynamics(g: &StateSpace, c: &RMat, k: &StateSpace) -> Result<StateSpace> {
    let (n_u, n_x, n_y) = check_shapes(g, c, k)?;
    let blocks = g.append(k);
    let eye = RMat::identity;
    // block inputs [u_G = d_u − ν, u_K = e_y], outputs [G(·), ν]
    let wiring = Wiring {
        f: block(n_u + n_y, n_x + n_u, &[(0, n_x, -eye(n_u, n_u)), (n_u, 0, c.clone())]),
        g: block(
            n_u + n_y,
            n_u + n_x + n_y,
            &[(0, 0, eye(n_u, n_u)), (n_u, n_u, c.clone()), (n_u, n_u + n_x, eye(n_y, n_y))],
        ),
        h: block(n_x + n_y, n_x + n_u, &[(0, 0, eye(n_x, n_x)), (n_x, 0, c.clone())]),
        j: block(
            n_x + n_y,
            n_u + n_x + n_y,
            &[
                (0, n_u, eye(n_x, n_x)),
                (n_x, n_u, c.clone()),
                (n_x, n_u + n_x, eye(n_y, n_y)),
            ],
        ),
    };
    connect(&blocks, &wiring)
}

/// Weighted error channels `[w1, w2] → [W_e e_x, W_ν ν]` composed from the
/// error dynamics with `d_u = W_d w1`, `n = W_n w2` and `d_x = 0`.
pub fn weighted_error_dynamics(g: &StateSpace, c: &RMat, k: &StateSpace, weights: &WeightSet) -> Result<StateSpace> {
    let (n_u, n_x, n_y) = check_shapes(g, c, k)?;
    let err = build_error_dynamics(g, c, k)?;
    let inputs: Vec<usize> = (0..n_u).chain(n_u + n_x..n_u + n_x + n_y).collect();
    let outputs: Vec<usize> = (0..n_x + n_y).collect();
    let err = err.select(&outputs, &inputs);
    let pre = weights.w_d.append(&weights.w_n);
    let post = weights.w_e.append(&series(k, &weights.w_nu)?);
    series(&series(&pre, &err)?, &post)
}

/// Generalized plant with inputs `[w_Δ, w1, w2, ν]` and outputs
/// `[z_Δ, z1, z2, ρ]`:
///
/// ```text
/// v   = W_d w1 − ν + w_Δ      e_x = G0 v
/// z_Δ = W_Δ v                 z1  = W_e e_x
/// z2  = W_ν ν                 ρ   = C e_x + W_n w2
/// ```
///
/// With `weights.w_dx` set, a `w3` input (after `w2`) adds `W_dx w3` to `e_x`.
pub fn build_generalized_plant(
    g0: &StateSpace,
    c: &RMat,
    w_delta: &UncertaintyWeight,
    weights: &WeightSet,
) -> Result<GeneralizedPlant> {
    let (n_u, n_x, n_y) = (g0.nu(), g0.ny(), c.nrows());
    if c.ncols() != n_x {
        return Err(Error::dims("C columns must match G0 outputs"));
    }
    if !w_delta.w.is_siso() {
        return Err(Error::dims("uncertainty weight must be SISO"));
    }
    let mut shapes = vec![
        (&weights.w_d, n_u, n_u, "W_d"),
        (&weights.w_n, n_y, n_y, "W_n"),
        (&weights.w_e, n_x, n_x, "W_e"),
        (&weights.w_nu, n_u, n_u, "W_nu"),
    ];
    if let Some(w) = &weights.w_dx {
        shapes.push((w, n_x, n_x, "W_dx"));
    }
    for (w, ny, nu, name) in shapes {
        if w.ny() != ny || w.nu() != nu {
            return Err(Error::dims(format!("{name} must be {ny}x{nu}, got {}x{}", w.ny(), w.nu())));
        }
    }
    let n_dx = if weights.w_dx.is_some() { n_x } else { 0 };
    let wd = w_delta.w.diag_repeat(n_u);
    let w_dx = weights.w_dx.clone().unwrap_or_else(|| StateSpace::zero(0, 0));
    let blocks = StateSpace::append_all(&[&weights.w_d, g0, &wd, &weights.w_e, &weights.w_nu, &weights.w_n, &w_dx]);
    // block input offsets
    let (i_wd, i_g0, i_wdl, i_we, i_wnu, i_wn, i_dx) =
        (0, n_u, 2 * n_u, 3 * n_u, 3 * n_u + n_x, 4 * n_u + n_x, 4 * n_u + n_x + n_y);
    let n_bin = i_dx + n_dx;
    // block output offsets
    let (o_wd, o_g0, o_wdl, o_we, o_wnu, o_wn, o_dx) = (
        0,
        n_u,
        n_u + n_x,
        2 * n_u + n_x,
        2 * n_u + 2 * n_x,
        3 * n_u + 2 * n_x,
        3 * n_u + 2 * n_x + n_y,
    );
    let n_bout = o_dx + n_dx;
    // external inputs
    let (x_dl, x_w1, x_w2, x_w3) = (0, n_u, 2 * n_u, 2 * n_u + n_y);
    let x_nu = x_w3 + n_dx;
    let n_ext_in = x_nu + n_u;
    let (z_dl, z_1, z_2, z_rho) = (0, n_u, n_u + n_x, 2 * n_u + n_x);
    let n_ext_out = z_rho + n_y;

    let eye = RMat::identity;
    let iu = eye(n_u, n_u);
    let ix = eye(n_x, n_x);
    let mut f_parts = vec![(i_g0, o_wd, iu.clone()), (i_wdl, o_wd, iu.clone()), (i_we, o_g0, ix.clone())];
    let mut g_parts = vec![
        (i_wd, x_w1, iu.clone()),
        (i_g0, x_dl, iu.clone()),
        (i_g0, x_nu, -&iu),
        (i_wdl, x_dl, iu.clone()),
        (i_wdl, x_nu, -&iu),
        (i_wnu, x_nu, iu.clone()),
        (i_wn, x_w2, eye(n_y, n_y)),
    ];
    let mut h_parts = vec![
        (z_dl, o_wdl, iu.clone()),
        (z_1, o_we, ix.clone()),
        (z_2, o_wnu, iu.clone()),
        (z_rho, o_g0, c.clone()),
        (z_rho, o_wn, eye(n_y, n_y)),
    ];
    if n_dx > 0 {
        f_parts.push((i_we, o_dx, ix.clone()));
        g_parts.push((i_dx, x_w3, ix.clone()));
        h_parts.push((z_rho, o_dx, c.clone()));
    }
    let sys = connect(
        &blocks,
        &Wiring {
            f: block(n_bin, n_bout, &f_parts),
            g: block(n_bin, n_ext_in, &g_parts),
            h: block(n_ext_out, n_bout, &h_parts),
            j: RMat::zeros(n_ext_out, n_ext_in),
        },
    )?;
    GeneralizedPlant::new(
        sys,
        PlantDims {
            delta_out: n_u,
            perf_out: n_x + n_u,
            delta_in: n_u,
            perf_in: n_u + n_y + n_dx,
            meas: n_y,
            ctl: n_u,
        },
    )
}
