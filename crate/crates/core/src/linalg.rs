//! Small complex linear-algebra helpers shared by the channel, precoder and
//! antenna modules. Everything is dense `nalgebra` storage.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Circularly-symmetric complex Gaussian draw with total variance `var`.
pub fn cn_sample<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let scale = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(scale * re, scale * im)
}

/// Matrix of i.i.d. `CN(0, var)` entries, filled row by row.
pub fn cn_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, var: f64) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = cn_sample(rng, var);
        }
    }
    m
}

/// Thin SVD `m = U diag(s) V^H` with singular values in descending order.
pub struct SortedSvd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

pub fn svd_sorted(m: &CMatrix) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v = svd.v_t.expect("svd requested v_t").adjoint();
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut su = CMatrix::zeros(u.nrows(), k);
    let mut sv = CMatrix::zeros(v.nrows(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v.column(src));
        s.push(svd.singular_values[src]);
    }
    SortedSvd { u: su, s, v: sv }
}

/// Eigen-decomposition of a Hermitian matrix: `a = Q diag(d) Q^H`.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    // Symmetrize so round-off in the caller's accumulation cannot leak an
    // anti-Hermitian part into the solver.
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// `x^H A x` for Hermitian `A`, returned as its real part.
pub fn quad_form(a: &CMatrix, x: &[C64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = ZERO;
        for j in 0..n {
            row += a[(i, j)] * x[j];
        }
        acc += (x[i].conj() * row).re;
    }
    acc
}

/// `sum_i a_i * b_i` without conjugation.
#[inline]
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x * y)
}

/// `sum_i conj(a_i) * b_i`.
#[inline]
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Frobenius norm of `a - b`.
pub fn frob_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frob(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
