#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use popobs::linalg::{self, CMat, RMat};
use popobs::StateSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> RMat {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn rand_cmat(rng: &mut impl Rng, r: usize, c: usize) -> CMat {
    DMatrix::from_fn(r, c, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Random system whose poles have real part at most `-margin`.
pub fn rand_stable(rng: &mut impl Rng, n: usize, m: usize, p: usize, margin: f64) -> StateSpace {
    let mut a = rand_mat(rng, n, n) * 2.0;
    if n > 0 {
        let abscissa = linalg::spectral_abscissa(&a).unwrap();
        a -= RMat::identity(n, n) * (abscissa + margin);
    }
    StateSpace::new(a, rand_mat(rng, n, m), rand_mat(rng, p, n), rand_mat(rng, p, m)).unwrap()
}

/// Characteristic polynomial coefficients of `a`, highest power first
/// (Faddeev-LeVerrier).
pub fn charpoly(a: &RMat) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = RMat::zeros(n, n);
    let mut c = 1.0;
    for k in 1..=n {
        m = a * &m + RMat::identity(n, n) * c;
        let am = a * &m;
        c = -am.trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

pub fn polyval(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// SISO transfer function from determinants:
/// `det(sI - A + BC) / det(sI - A) - 1 + D`.
pub fn siso_tf_eval(sys: &StateSpace, s: Complex64) -> Complex64 {
    let den = charpoly(&sys.a);
    let num = charpoly(&(&sys.a - &sys.b * &sys.c));
    polyval(&num, s) / polyval(&den, s) - 1.0 + sys.d[(0, 0)]
}

pub fn rel_err(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> popobs::FrequencyGrid {
    popobs::FrequencyGrid::logspace(lo, hi, n).unwrap()
}
