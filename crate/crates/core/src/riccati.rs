//! Continuous algebraic Riccati equations through the stable invariant
//! subspace of the Hamiltonian.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};

/// Residual `AᵀX + XA − (XB + S)R⁻¹(BᵀX + Sᵀ) + Q`.
pub fn care_residual(a: &RMat, b: &RMat, q: &RMat, r: &RMat, s: Option<&RMat>, x: &RMat) -> Result<RMat> {
    let rinv = linalg::inverse_real(r).ok_or_else(|| Error::InvalidArgument("R is singular".into()))?;
    let mut xbs = x * b;
    if let Some(s) = s {
        xbs += s;
    }
    Ok(a.transpose() * x + x * a - &xbs * rinv * xbs.transpose() + q)
}

/// Stabilizing solution of `AᵀX + XA − (XB + S)R⁻¹(BᵀX + Sᵀ) + Q = 0`.
///
/// `R` only needs to be invertible (indefinite `R` is allowed). The stable
/// invariant subspace of the Hamiltonian is extracted from an ordered
/// complex Schur form, then polished with Newton steps while they reduce the
/// residual.
pub fn care_solve(a: &RMat, b: &RMat, q: &RMat, r: &RMat, s: Option<&RMat>) -> Result<RMat> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dims("care_solve: A, B, Q, R shapes"));
    }
    if let Some(s) = s {
        if s.shape() != (n, m) {
            return Err(Error::dims("care_solve: S must be n x m"));
        }
    }
    if n == 0 {
        return Ok(RMat::zeros(0, 0));
    }
    let rinv = linalg::inverse_real(&linalg::symmetrize(r)).ok_or_else(|| Error::InvalidArgument("R is singular".into()))?;
    let (abar, qbar) = match s {
        Some(s) => (
            a - b * &rinv * s.transpose(),
            linalg::symmetrize(&(q - s * &rinv * s.transpose())),
        ),
        None => (a.clone(), linalg::symmetrize(q)),
    };
    let g = linalg::symmetrize(&(b * &rinv * b.transpose()));

    let mut h = RMat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&abar);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&qbar));
    h.view_mut((n, n), (n, n)).copy_from(&(-abar.transpose()));

    let (z, t, count) = linalg::ordered_schur(linalg::to_complex(&h), |l: Complex64| l.re < 0.0)?;
    if (0..2 * n).any(|i| {
        let l = t[(i, i)];
        l.re.abs() < 1e-8 * l.norm().max(1.0)
    }) {
        return Err(Error::ImaginaryAxisEigenvalue);
    }
    if count != n {
        return Err(Error::NoStabilizingSolution(format!(
            "{count} stable Hamiltonian eigenvalues, expected {n}"
        )));
    }
    let z11: CMat = z.view((0, 0), (n, n)).into_owned();
    let z21: CMat = z.view((n, 0), (n, n)).into_owned();
    // X Z11 = Z21  <=>  Z11ᴴ Xᴴ = Z21ᴴ
    let sv = z11.clone().svd(false, false).singular_values;
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < 1e-12 {
        return Err(Error::NoStabilizingSolution("stable subspace basis Z11 is singular".into()));
    }
    let xh = linalg::solve_complex(z11.adjoint(), &z21.adjoint())
        .ok_or_else(|| Error::NoStabilizingSolution("stable subspace basis Z11 is singular".into()))?;
    let xc = xh.adjoint();
    let mut x = linalg::symmetrize(&linalg::real_part(&xc));

    let residual = |x: &RMat| -> f64 { (abar.transpose() * x + x * &abar - x * &g * x + &qbar).norm() };
    let mut res = residual(&x);
    for _ in 0..4 {
        let scale = 1.0 + x.norm();
        if res <= 1e-13 * scale {
            break;
        }
        let acl = &abar - &g * &x;
        let rhs = &qbar + &x * &g * &x;
        let next = match linalg::lyapunov(&acl, &rhs) {
            Ok(xn) => linalg::symmetrize(&xn),
            Err(_) => break,
        };
        let r_next = residual(&next);
        if r_next.is_finite() && r_next < res {
            x = next;
            res = r_next;
        } else {
            break;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoStabilizingSolution("non-finite solution".into()));
    }
    Ok(x)
}
