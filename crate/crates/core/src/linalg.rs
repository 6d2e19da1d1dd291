//! Dense complex linear algebra shared by every other module.
//!
//! Matrices are `nalgebra` column-major `DMatrix<Complex64>`. On top of the
//! library this module adds the few contracts the rest of the crate leans on:
//! column stacking, Kronecker products, Hermitian eigendecomposition with a
//! Hermitian check, PSD inverse square roots and the `hvec` isometry between
//! Hermitian matrices and real vectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative tolerance of the Hermitian check.
pub const HERMITIAN_RTOL: f64 = 1e-12;
/// Eigenvalues below `-PSD_RTOL * lambda_max` reject a matrix as not PSD.
pub const PSD_RTOL: f64 = 1e-8;

pub const fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Column-stacked vector: `vec(A)[i + j * rows] = A[(i, j)]`.
pub fn vec_cols(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> CMatrix {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    CMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().sum()
}

/// Real trace inner product `Re tr(A B)`.
pub fn trace_prod_re(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

pub fn is_hermitian(a: &CMatrix, rtol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = max_abs(a);
    let n = a.nrows();
    for j in 0..n {
        for i in 0..=j {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > rtol * scale {
                return false;
            }
        }
    }
    true
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c64(0.5, 0.0)
}

pub fn ensure_hermitian(a: &CMatrix, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(invalid(format!(
            "{what}: expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_hermitian(a, HERMITIAN_RTOL) {
        return Err(invalid(format!("{what}: matrix is not Hermitian")));
    }
    Ok(())
}

pub fn ensure_finite(a: &CMatrix, what: &str) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what}: non-finite entry")))
    }
}

/// Hermitian eigendecomposition `A = V diag(w) V^H` with ascending eigenvalues.
///
/// The input is symmetrized before factoring; callers that need the
/// Hermitian check should run [`ensure_hermitian`] first.
pub fn eigh(a: &CMatrix) -> (DVector<f64>, CMatrix) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let w = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut v = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &eig.eigenvectors.column(src));
    }
    (w, v)
}

/// `V diag(f(w)) V^H`.
pub fn eig_apply(w: &DVector<f64>, v: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let mut scaled = v.clone();
    for (j, &wj) in w.iter().enumerate() {
        let s = f(wj);
        scaled.column_mut(j).scale_mut(s);
    }
    let out = &scaled * v.adjoint();
    hermitian_part(&out)
}

/// Rejects matrices with an eigenvalue below `-PSD_RTOL * lambda_max`.
pub fn check_psd_spectrum(w: &DVector<f64>) -> Result<()> {
    let largest = w.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    if let Some(&lo) = w.iter().min_by(|a, b| a.total_cmp(b)) {
        if lo < -PSD_RTOL * largest {
            return Err(Error::NotPsd {
                eigenvalue: lo,
                largest,
            });
        }
    }
    Ok(())
}

/// `T = (S + reg I)^{-1/2}` for Hermitian PSD `S`.
///
/// Eigenvalues of `S + reg I` are floored at `reg`. With `reg == 0` and a
/// near-singular `S` (condition estimate above 1e12) the floor falls back to
/// `1e-10 * tr(S) / dim`.
pub fn inv_sqrt_psd(s: &CMatrix, reg: f64) -> Result<CMatrix> {
    if reg < 0.0 || !reg.is_finite() {
        return Err(invalid(format!(
            "regularizer must be finite and nonnegative, got {reg}"
        )));
    }
    ensure_hermitian(s, "inv_sqrt_psd")?;
    let (w, v) = eigh(s);
    check_psd_spectrum(&w)?;
    let n = w.len();
    let lmax = w.max();
    let lmin = w.min();
    let mut floor = reg;
    if reg == 0.0 && (lmin <= 0.0 || lmax / lmin > 1e12) {
        floor = 1e-10 * w.sum().max(0.0) / n as f64;
    }
    if !(floor > 0.0) && lmin <= 0.0 {
        return Err(Error::NotInvertible(
            "inv_sqrt_psd: singular input and no regularization".into(),
        ));
    }
    Ok(eig_apply(&w, &v, |l| {
        1.0 / (l.max(0.0) + reg).max(floor).sqrt()
    }))
}

/// A factor `L` with `L L^H = A` for Hermitian PSD `A`. Eigenvalues below
/// `1e-14 * lambda_max` are treated as round-off and dropped.
pub fn psd_factor(a: &CMatrix) -> CMatrix {
    let (w, v) = eigh(a);
    let floor = 1e-14 * w.max().max(0.0);
    let v_adj = v.adjoint();
    let mut l = v;
    for (j, &wj) in w.iter().enumerate() {
        l.column_mut(j)
            .scale_mut(if wj > floor { wj.sqrt() } else { 0.0 });
    }
    // Hermitian square root: unlike the bare eigenvector factor it varies
    // continuously with `a`.
    l * v_adj
}

/// Unit-norm eigenvector of the largest eigenvalue, and that eigenvalue.
pub fn dominant_eig(a: &CMatrix) -> (f64, CVector) {
    let (w, v) = eigh(a);
    let k = w.len() - 1;
    (w[k], v.column(k).into_owned())
}

/// Number of real coordinates of an `n x n` Hermitian matrix.
pub const fn hvec_len(n: usize) -> usize {
    n * n
}

/// Position of the real coordinates of entry `(i, j)`, `i <= j`, in `hvec`.
///
/// Column `j` occupies `j^2 .. (j+1)^2`: pairs `(sqrt2 Re, sqrt2 Im)` for
/// `i < j` followed by the diagonal entry.
pub const fn hvec_index(i: usize, j: usize) -> usize {
    if i == j {
        j * j + 2 * j
    } else {
        j * j + 2 * i
    }
}

/// Isometry from Hermitian matrices to `R^{n^2}`: `hvec(A) . hvec(B) = tr(A B)`.
pub fn hvec(a: &CMatrix) -> Vec<f64> {
    let n = a.nrows();
    let mut out = vec![0.0; hvec_len(n)];
    hvec_into(a, &mut out);
    out
}

pub fn hvec_into(a: &CMatrix, out: &mut [f64]) {
    let n = a.nrows();
    debug_assert_eq!(out.len(), n * n);
    let s2 = std::f64::consts::SQRT_2;
    for j in 0..n {
        for i in 0..j {
            // average the two triangles so slightly non-Hermitian input maps
            // to its Hermitian part
            let z = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            let k = hvec_index(i, j);
            out[k] = s2 * z.re;
            out[k + 1] = s2 * z.im;
        }
        out[hvec_index(j, j)] = a[(j, j)].re;
    }
}

pub fn unhvec(x: &[f64], n: usize) -> CMatrix {
    debug_assert_eq!(x.len(), n * n);
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut a = CMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let k = hvec_index(i, j);
            let z = c64(x[k] * r2, x[k + 1] * r2);
            a[(i, j)] = z;
            a[(j, i)] = z.conj();
        }
        a[(j, j)] = c64(x[hvec_index(j, j)], 0.0);
    }
    a
}

/// Circularly-symmetric standard complex Gaussian sample, `E|z|^2 = 1`.
pub fn randn_c<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn randn_cvector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| randn_c(rng))
}

pub fn randn_cmatrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| randn_c(rng))
}

/// Random Hermitian PSD matrix `M M^H + shift I`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, shift: f64) -> CMatrix {
    let m = randn_cmatrix(rng, n, n);
    let mut s = &m * m.adjoint();
    for i in 0..n {
        s[(i, i)] += c64(shift, 0.0);
    }
    hermitian_part(&s)
}

/// `v v^H`.
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

pub fn real_diag(d: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(
        d.len(),
        d.iter().map(|&x| c64(x, 0.0)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, vals: &[(f64, f64)]) -> CMatrix {
        CMatrix::from_row_iterator(rows, cols, vals.iter().map(|&(r, i)| c64(r, i)))
    }

    #[test]
    fn vec_stacks_columns() {
        let a = m(2, 2, &[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        let v = vec_cols(&a);
        let got: Vec<f64> = v.iter().map(|z| z.re).collect();
        assert_eq!(got, vec![1.0, 3.0, 2.0, 4.0]);
        let one = m(1, 1, &[(2.5, -1.0)]);
        assert_eq!(vec_cols(&one)[0], c64(2.5, -1.0));
        assert_eq!(unvec(&v, 2, 2), a);
    }

    #[test]
    fn vec_matches_trace_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = randn_cmatrix(&mut rng, 3, 2);
            let b = randn_cmatrix(&mut rng, 3, 2);
            let lhs = trace(&(a.adjoint() * &b));
            let rhs = vec_cols(&a).dotc(&vec_cols(&b));
            assert!((lhs - rhs).norm() <= 1e-12);
        }
    }

    #[test]
    fn kron_identity_and_scalar_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = randn_cmatrix(&mut rng, 2, 3);
        let k = kron(&CMatrix::identity(2, 2), &b);
        assert_eq!(k.shape(), (4, 6));
        assert_eq!(k.view((0, 0), (2, 3)), b.view((0, 0), (2, 3)));
        assert_eq!(k.view((2, 3), (2, 3)), b.view((0, 0), (2, 3)));
        assert!(k
            .view((0, 3), (2, 3))
            .iter()
            .all(|z| *z == C64::new(0.0, 0.0)));
        let two = CMatrix::from_element(1, 1, c64(2.0, 0.0));
        assert_eq!(kron(&two, &b), &b * c64(2.0, 0.0));
    }

    #[test]
    fn kron_vec_identity_for_four_factor_trace() {
        // tr(X1 X2 X3 X4^H) = vec^H(X4) (X3^T kron X1) vec(X2)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<CMatrix> = (0..4).map(|_| randn_cmatrix(&mut rng, 2, 2)).collect();
            let lhs = trace(&(&x[0] * &x[1] * &x[2] * x[3].adjoint()));
            let k = kron(&x[2].transpose(), &x[0]);
            let rhs = vec_cols(&x[3]).dotc(&(k * vec_cols(&x[1])));
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let i3 = CMatrix::identity(3, 3);
        let t = inv_sqrt_psd(&i3, 0.0).unwrap();
        assert!(max_abs(&(t - &i3)) <= 1e-14);
        let d = real_diag(&[4.0, 9.0]);
        let t = inv_sqrt_psd(&d, 0.0).unwrap();
        assert!(max_abs(&(t - real_diag(&[0.5, 1.0 / 3.0]))) <= 1e-14);
    }

    #[test]
    fn inv_sqrt_whitens_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_psd(&mut rng, 6, 0.1);
        let t = inv_sqrt_psd(&s, 0.0).unwrap();
        let id = &t * &s * &t;
        assert!(max_abs(&(id - CMatrix::identity(6, 6))) <= 1e-9);
        // (T^{-1})^2 = S
        let tinv = t.clone().try_inverse().unwrap();
        let back = &tinv * &tinv;
        assert!(max_abs(&(back - &s)) <= 1e-9 * max_abs(&s));
    }

    #[test]
    fn inv_sqrt_rejects_bad_input() {
        let mut a = CMatrix::identity(2, 2);
        a[(0, 1)] = c64(1.0, 0.0);
        assert!(matches!(inv_sqrt_psd(&a, 0.0), Err(Error::Validation(_))));
        let neg = real_diag(&[1.0, -0.5]);
        assert!(matches!(inv_sqrt_psd(&neg, 0.0), Err(Error::NotPsd { .. })));
        assert!(inv_sqrt_psd(&CMatrix::identity(2, 2), -1.0).is_err());
    }

    #[test]
    fn inv_sqrt_regularizes_rank_deficient() {
        let v = CVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 1.0), c64(0.5, 0.0)]);
        let s = outer(&v);
        let t = inv_sqrt_psd(&s, 0.0).unwrap();
        assert!(t.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        let t = inv_sqrt_psd(&s, 1e-3).unwrap();
        let mut sr = s.clone();
        for i in 0..3 {
            sr[(i, i)] += c64(1e-3, 0.0);
        }
        assert!(max_abs(&(&t * &sr * &t - CMatrix::identity(3, 3))) <= 1e-9);
    }

    #[test]
    fn eigh_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 7, 33, 64] {
            let a = hermitian_part(&randn_cmatrix(&mut rng, n, n));
            let (w, v) = eigh(&a);
            let back = eig_apply(&w, &v, |x| x);
            assert!(max_abs(&(back - &a)) <= 1e-10 * max_abs(&a), "n = {n}");
            assert!(w.iter().zip(w.iter().skip(1)).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn hvec_is_an_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = hermitian_part(&randn_cmatrix(&mut rng, 5, 5));
        let b = hermitian_part(&randn_cmatrix(&mut rng, 5, 5));
        let ha = hvec(&a);
        let hb = hvec(&b);
        let dot: f64 = ha.iter().zip(&hb).map(|(x, y)| x * y).sum();
        assert!((dot - trace_prod_re(&a, &b)).abs() <= 1e-12);
        assert!(max_abs(&(unhvec(&ha, 5) - &a)) <= 1e-15);
        // coordinates are laid out column by column
        let mut seen = vec![false; 25];
        for j in 0..5 {
            for i in 0..=j {
                seen[hvec_index(i, j)] = true;
                if i < j {
                    seen[hvec_index(i, j) + 1] = true;
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }
}
