//! Dense complex linear algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);

/// `Re tr(A W)`, the real inner product of two Hermitian matrices.
pub fn inner(a: &CMat, w: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), w.shape());
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            let y = w[(j, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// `Re(w^H A w)`.
pub fn quad(a: &CMat, w: &CVec) -> f64 {
    let aw = a * w;
    w.iter().zip(aw.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn outer(w: &CVec) -> CMat {
    w * w.adjoint()
}

/// Kronecker product of two vectors, `a` as the outer index.
pub fn kron(a: &CVec, b: &CVec) -> CVec {
    CVec::from_fn(a.len() * b.len(), |k, _| a[k / b.len()] * b[k % b.len()])
}

pub fn hadamard(a: &CVec, b: &CVec) -> CVec {
    a.component_mul(b)
}

pub fn conj(v: &CVec) -> CVec {
    v.map(|x| x.conj())
}

/// Largest entry of `|M - M^H|`.
pub fn hermitian_asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn lambda_max(m: &CMat) -> f64 {
    eigh(m).0.first().copied().unwrap_or(0.0)
}

pub fn lambda_min(m: &CMat) -> f64 {
    eigh(m).0.last().copied().unwrap_or(0.0)
}

pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Frobenius norm.
pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// One draw from CN(0, 1): real and imaginary parts each of variance 1/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| complex_normal(rng))
}

/// Real-valued matrix of the same shape, helper for tests and the realified solver.
pub fn re_part(m: &CMat) -> DMatrix<f64> {
    m.map(|x| x.re)
}

pub fn im_part(m: &CMat) -> DMatrix<f64> {
    m.map(|x| x.im)
}
