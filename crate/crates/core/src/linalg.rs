//! Dense linear-algebra helpers shared by the LTI, Riccati and mu code.
//!
//! Everything works on `nalgebra::DMatrix`, real or `Complex64`.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn real_part(m: &CMat) -> RMat {
    m.map(|z| z.re)
}

pub fn max_abs_imag(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

/// Largest singular value; zero for empty matrices.
pub fn sigma_max(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn sigma_max_real(m: &RMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn sigma_min_real(m: &RMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Solves `a x = b` by LU with partial pivoting, rejecting numerically
/// singular systems (pivot ratio below `1e-14`).
pub fn solve_complex(a: CMat, b: &CMat) -> Option<CMat> {
    let n = a.nrows();
    if n == 0 {
        return Some(CMat::zeros(0, b.ncols()));
    }
    let lu = a.lu();
    let u = lu.u();
    let mut dmax: f64 = 0.0;
    let mut dmin = f64::INFINITY;
    for i in 0..n {
        let v = u[(i, i)].norm();
        dmax = dmax.max(v);
        dmin = dmin.min(v);
    }
    if !(dmin > 1e-14 * dmax) {
        return None;
    }
    lu.solve(b)
}

pub fn solve_real(a: RMat, b: &RMat) -> Option<RMat> {
    let n = a.nrows();
    if n == 0 {
        return Some(RMat::zeros(0, b.ncols()));
    }
    let lu = a.lu();
    let u = lu.u();
    let mut dmax: f64 = 0.0;
    let mut dmin = f64::INFINITY;
    for i in 0..n {
        let v = u[(i, i)].abs();
        dmax = dmax.max(v);
        dmin = dmin.min(v);
    }
    if !(dmin > 1e-14 * dmax) {
        return None;
    }
    lu.solve(b)
}

pub fn inverse_real(a: &RMat) -> Option<RMat> {
    let n = a.nrows();
    solve_real(a.clone(), &RMat::identity(n, n))
}

/// Moore-Penrose pseudo-inverse through the SVD.
pub fn pinv_complex(m: &CMat) -> CMat {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-13 * (m.nrows().max(m.ncols()) as f64);
    svd.pseudo_inverse(tol).unwrap_or_else(|_| CMat::zeros(m.ncols(), m.nrows()))
}

/// Complex Schur form `a = z t z^H` with `t` upper triangular.
pub fn complex_schur(a: CMat) -> Result<(CMat, CMat)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((CMat::zeros(0, 0), CMat::zeros(0, 0)));
    }
    // The QR sweep can stall at machine epsilon on badly scaled inputs.
    let schur = [f64::EPSILON, 1e-14, 1e-12]
        .iter()
        .find_map(|&eps| Schur::try_new(a.clone(), eps, 20_000 + 200 * n))
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (z, mut t) = schur.unpack();
    for j in 0..n {
        for i in (j + 1)..n {
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    Ok((z, t))
}

/// Swaps the adjacent diagonal entries `k` and `k + 1` of the triangular
/// factor, updating the Schur vectors.
fn swap_adjacent(t: &mut CMat, z: &mut CMat, k: usize) {
    let n = t.nrows();
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let c = t[(k, k + 1)];
    // Eigenvector of the 2x2 block for eigenvalue b becomes the first column.
    let x1 = c;
    let x2 = b - a;
    let nrm = (x1.norm_sqr() + x2.norm_sqr()).sqrt();
    if nrm == 0.0 {
        return;
    }
    let x1 = x1 / nrm;
    let x2 = x2 / nrm;
    // q = [[x1, -conj(x2)], [x2, conj(x1)]]
    let q = [[x1, -x2.conj()], [x2, x1.conj()]];
    // rows: t[k..k+2, :] = q^H t[k..k+2, :]
    for j in 0..n {
        let r0 = t[(k, j)];
        let r1 = t[(k + 1, j)];
        t[(k, j)] = q[0][0].conj() * r0 + q[1][0].conj() * r1;
        t[(k + 1, j)] = q[0][1].conj() * r0 + q[1][1].conj() * r1;
    }
    // cols: t[:, k..k+2] = t[:, k..k+2] q ; same for z
    for m in [&mut *t, &mut *z] {
        for i in 0..n {
            let c0 = m[(i, k)];
            let c1 = m[(i, k + 1)];
            m[(i, k)] = c0 * q[0][0] + c1 * q[1][0];
            m[(i, k + 1)] = c0 * q[0][1] + c1 * q[1][1];
        }
    }
    t[(k + 1, k)] = Complex64::new(0.0, 0.0);
    t[(k, k)] = b;
    t[(k + 1, k + 1)] = a;
}

/// Ordered complex Schur form: eigenvalues satisfying `select` are moved to
/// the leading block. Returns `(z, t, number_selected)`.
pub fn ordered_schur(a: CMat, select: impl Fn(Complex64) -> bool) -> Result<(CMat, CMat, usize)> {
    let (mut z, mut t) = complex_schur(a)?;
    let n = t.nrows();
    let mut count = 0;
    for j in 0..n {
        if select(t[(j, j)]) {
            let mut k = j;
            while k > count {
                swap_adjacent(&mut t, &mut z, k - 1);
                k -= 1;
            }
            count += 1;
        }
    }
    Ok((z, t, count))
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &RMat) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(s) = Schur::try_new(a.clone(), f64::EPSILON, 20_000 + 200 * n) {
        return Ok(s.complex_eigenvalues().iter().cloned().collect());
    }
    let (_, t) = complex_schur(to_complex(a))?;
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Largest real part of the eigenvalues (`-inf` for an empty matrix).
pub fn spectral_abscissa(a: &RMat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

pub fn spectral_radius(a: &RMat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Solves `a^T x + x a + q = 0` for real `a`, `q` (Bartels-Stewart on the
/// complex Schur form).
pub fn lyapunov(a: &RMat, q: &RMat) -> Result<RMat> {
    let n = a.nrows();
    if n == 0 {
        return Ok(RMat::zeros(0, 0));
    }
    let (u, t) = complex_schur(to_complex(a))?;
    let qt = u.adjoint() * to_complex(q) * &u;
    let mut y = CMat::zeros(n, n);
    for j in 0..n {
        // (T^H + t_jj I) y_j = -q_j - sum_{i<j} t_ij y_i
        let mut rhs: DVector<Complex64> = -qt.column(j).into_owned();
        for i in 0..j {
            let tij = t[(i, j)];
            if tij != Complex64::new(0.0, 0.0) {
                rhs -= y.column(i) * tij;
            }
        }
        let tjj = t[(j, j)];
        for r in 0..n {
            let mut acc = rhs[r];
            for c in 0..r {
                acc -= t[(c, r)].conj() * y[(c, j)];
            }
            let diag = t[(r, r)].conj() + tjj;
            if diag.norm() < 1e-14 * (1.0 + tjj.norm()) {
                return Err(Error::Numerical(
                    "Lyapunov operator is singular (eigenvalues symmetric about the imaginary axis)".into(),
                ));
            }
            y[(r, j)] = acc / diag;
        }
    }
    let x = real_part(&(&u * y * u.adjoint()));
    Ok(symmetrize(&x))
}

pub fn symmetrize(x: &RMat) -> RMat {
    (x + x.transpose()) * 0.5
}

/// Orthonormal basis for the orthogonal complement of the column space of
/// `u1`, assumed to have orthonormal columns.
pub fn orth_complement(u1: &RMat) -> RMat {
    let p = u1.nrows();
    let k = u1.ncols();
    if k >= p {
        return RMat::zeros(p, 0);
    }
    let proj = RMat::identity(p, p) - u1 * u1.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let cols: Vec<_> = idx[..p - k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    RMat::from_columns(&cols)
}

/// Block-diagonal stacking of real matrices (handles empty blocks).
pub fn block_diag(blocks: &[&RMat]) -> RMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = RMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn hstack(blocks: &[&RMat]) -> RMat {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = RMat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&RMat]) -> RMat {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = RMat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// `j * omega`
pub fn jw(omega: f64) -> Complex64 {
    J * omega
}

/// Minimum eigenvalue of a symmetric matrix (`+inf` when empty).
pub fn min_sym_eig(x: &RMat) -> f64 {
    if x.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(x))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_mat(n: usize, m: usize, seed: u64) -> RMat {
        // small LCG keeps these tests free of RNG dependencies
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        RMat::from_fn(n, m, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn ordered_schur_moves_selected_eigenvalues_first() {
        let a = rand_mat(12, 12, 3);
        let (z, t, k) = ordered_schur(to_complex(&a), |l| l.re < 0.0).unwrap();
        let n_neg = eigenvalues(&a).unwrap().iter().filter(|l| l.re < 0.0).count();
        assert_eq!(k, n_neg);
        for i in 0..12 {
            assert_eq!(t[(i, i)].re < 0.0, i < k);
        }
        let rec = &z * &t * z.adjoint() - to_complex(&a);
        assert!(rec.norm() < 1e-10);
        let orth = z.adjoint() * &z - CMat::identity(12, 12);
        assert!(orth.norm() < 1e-12);
    }

    #[test]
    fn lyapunov_residual() {
        let mut a = rand_mat(7, 7, 9);
        a -= RMat::identity(7, 7) * 4.0;
        let q = {
            let m = rand_mat(7, 7, 10);
            &m * m.transpose()
        };
        let x = lyapunov(&a, &q).unwrap();
        let res = a.transpose() * &x + &x * &a + &q;
        assert!(res.norm() < 1e-10 * (1.0 + x.norm()));
    }

    #[test]
    fn orth_complement_spans_the_rest() {
        let m = rand_mat(5, 2, 4);
        let q = m.clone().qr().q();
        let c = orth_complement(&q);
        assert_eq!(c.shape(), (5, 3));
        assert!((q.transpose() * &c).norm() < 1e-12);
        assert!((c.transpose() * &c - RMat::identity(3, 3)).norm() < 1e-12);
    }
}
