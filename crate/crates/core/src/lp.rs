//! Small dense linear programs `min cᵀx  s.t.  Gx ≤ h` by a Mehrotra
//! predictor-corrector primal-dual interior-point method.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

/// Solves `min cᵀx` subject to `Gx ≤ h`. The problem must be bounded with
/// a strictly feasible interior.
pub fn solve_lp(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Result<LpSolution> {
    let (m, n) = g.shape();
    if c.len() != n || h.len() != m {
        return Err(Error::dims("solve_lp: c, G, h shapes"));
    }
    let gt = g.transpose();

    // least-squares start, then shift slacks into the interior
    let gtg = &gt * g + DMatrix::identity(n, n) * 1e-10;
    let mut x = Cholesky::new(gtg)
        .map(|ch| ch.solve(&(&gt * h)))
        .unwrap_or_else(|| DVector::zeros(n));
    let mut s = h - g * &x;
    let smin = s.min();
    if smin < 1.0 {
        s.add_scalar_mut(1.0 - smin);
    }
    let mut z = DVector::from_element(m, 1.0);

    let hn = 1.0 + h.norm();
    let cn = 1.0 + c.norm();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for it in 0..150 {
        let rd = c + &gt * &z;
        let rp = g * &x + &s - h;
        let mu = s.dot(&z) / m as f64;
        let obj = c.dot(&x);
        let pres = rp.norm() / hn;
        let dres = rd.norm() / cn;
        if pres < 1e-9 && best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, x.clone()));
        }
        if pres < 1e-10 && dres < 1e-9 && mu < 1e-11 * (1.0 + obj.abs()) {
            return Ok(LpSolution {
                x,
                objective: obj,
                iterations: it,
            });
        }

        let w = z.component_div(&s);
        let mut gw = g.clone();
        for (i, mut row) in gw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut normal = &gt * &gw;
        let reg = 1e-13 * normal.trace().max(1.0) / n as f64;
        for i in 0..n {
            normal[(i, i)] += reg;
        }
        let chol = match Cholesky::new(normal) {
            Some(c) => c,
            None => break,
        };
        let solve = |rc: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
            let rc_s = rc.component_div(&s);
            let rhs = -&rd - &gt * w.component_mul(&rp) + &gt * &rc_s;
            let dx = chol.solve(&rhs);
            let gdx = g * &dx;
            let dz = w.component_mul(&(&gdx + &rp)) - &rc_s;
            let ds = -&rp - gdx;
            (dx, ds, dz)
        };

        let rc_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = solve(&rc_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        let rc = rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, ds, dz) = solve(&rc);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        if !(alpha > 1e-14) {
            break;
        }
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    match best {
        Some((objective, x)) => Ok(LpSolution {
            x,
            objective,
            iterations: 150,
        }),
        None => Err(Error::Numerical("interior-point LP did not converge".into())),
    }
}
