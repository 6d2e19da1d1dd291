//! Lifting of the beamformer/phase quadratics.
//!
//! For one receive antenna `r`, the stacked channel `Y_r = [D_r; diag(G_r) H]`
//! turns the effective channel `D_r + theta diag(G_r) H` into `t Y_r` with the
//! row vector `t = [1, theta]`. With `E = t^H t` and `F = f f^H`,
//!
//! `|t Y_r f|^2 = tr(Y_r^H E Y_r F) = tr(Y_r F Y_r^H E)`,
//!
//! which is linear in `F` for fixed `E` and linear in `E` for fixed `F`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{c64, trace_prod_re, CMatrix, CVector, C64};

/// `E = t^H t`, `t = [1, theta]`.
pub fn lift_phase(theta: &CVector) -> CMatrix {
    let m = theta.len();
    let mut t = CVector::from_element(m + 1, c64(1.0, 0.0));
    t.rows_mut(1, m).copy_from(theta);
    let tc = t.map(|z| z.conj());
    &tc * t.transpose()
}

/// `F = f f^H`.
pub fn beam_gram(f: &CVector) -> CMatrix {
    f * f.adjoint()
}

/// Stacked channels `[D_r; diag(G_r) H]`, one per receive antenna.
pub fn build_upsilon(d: &CMatrix, g: &CMatrix, h: &CMatrix) -> Result<Vec<CMatrix>> {
    let (nr, nt) = d.shape();
    let m = h.nrows();
    if g.shape() != (nr, m) || h.ncols() != nt {
        return Err(invalid(format!(
            "stacked channel shapes: d {:?}, g {:?}, h {:?}",
            d.shape(),
            g.shape(),
            h.shape()
        )));
    }
    Ok((0..nr)
        .map(|r| {
            let mut y = CMatrix::zeros(m + 1, nt);
            y.row_mut(0).copy_from(&d.row(r));
            for k in 0..m {
                let gk = g[(r, k)];
                for j in 0..nt {
                    y[(k + 1, j)] = gk * h[(k, j)];
                }
            }
            y
        })
        .collect())
}

/// `sum_r Y_r^H E Y_r`: the coefficient of `F` for fixed `E`.
pub fn gram_for_beam(ups: &[CMatrix], e: &CMatrix) -> CMatrix {
    let nt = ups[0].ncols();
    let mut acc = CMatrix::zeros(nt, nt);
    for y in ups {
        acc += y.adjoint() * e * y;
    }
    crate::linalg::hermitian_part(&acc)
}

/// `sum_r Y_r F Y_r^H`: the coefficient of `E` for fixed `F`.
pub fn gram_for_phase(ups: &[CMatrix], f: &CMatrix) -> CMatrix {
    let n = ups[0].nrows();
    let mut acc = CMatrix::zeros(n, n);
    for y in ups {
        acc += y * f * y.adjoint();
    }
    crate::linalg::hermitian_part(&acc)
}

/// `sum_r tr(Y_r^H E Y_r F)`.
pub fn lifted_quadratic(ups: &[CMatrix], e: &CMatrix, f: &CMatrix) -> f64 {
    ups.iter()
        .map(|y| trace_prod_re(&(y.adjoint() * e * y), f))
        .sum()
}

/// Which leading blocks of `vec(dY^H)` carry error: only the direct row
/// (`N_t` entries) or the whole stacked channel (`(M+1) N_t` entries).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorScope {
    Direct,
    Full,
}

impl ErrorScope {
    pub fn blocks(self, m_plus_1: usize) -> usize {
        match self {
            ErrorScope::Direct => 1,
            ErrorScope::Full => m_plus_1,
        }
    }

    pub fn dim(self, ups: &CMatrix) -> usize {
        self.blocks(ups.nrows()) * ups.ncols()
    }

    /// `vec(dY^H)` restricted to the scope.
    pub fn error_vector(self, delta_ups: &CMatrix) -> CVector {
        let b = self.blocks(delta_ups.nrows());
        let xh = delta_ups.adjoint();
        CVector::from_column_slice(xh.columns(0, b).into_owned().as_slice())
    }
}

/// Parameters of `|t (Y + dY) f|^2 = x^H U x + 2 Re(u^H x) + u0` with
/// `x = T vec(dY^H)`.
#[derive(Clone, Debug)]
pub struct BernsteinParams {
    pub u_mat: CMatrix,
    pub u_vec: CVector,
    pub u0: f64,
}

/// The same parameters as linear functions of `F` for fixed `E` and `T`:
/// `U_ab = tr(F M_ab)`, `u_a = tr(F N_a)`, `u0 = tr(F C0)`.
#[derive(Clone, Debug)]
pub struct BernsteinCoefficients {
    /// Row-major `d x d` grid of (generally non-Hermitian) `N_t x N_t` matrices.
    pub m: Vec<CMatrix>,
    pub n: Vec<CMatrix>,
    pub c0: CMatrix,
    pub dim: usize,
}

impl BernsteinCoefficients {
    pub fn m(&self, a: usize, b: usize) -> &CMatrix {
        &self.m[a * self.dim + b]
    }

    /// `(U, u, u0)` at the variable value `x` (a beam Gram or a lifted phase).
    pub fn evaluate(&self, x: &CMatrix) -> BernsteinParams {
        let tr = |k: &CMatrix| -> C64 { (0..x.nrows()).map(|i| (x.row(i) * k.column(i))[0]).sum() };
        let d = self.dim;
        let u_mat = CMatrix::from_fn(d, d, |a, b| tr(self.m(a, b)));
        let u_vec = CVector::from_fn(d, |a, _| tr(&self.n[a]));
        BernsteinParams {
            u_mat,
            u_vec,
            u0: trace_prod_re(&self.c0, x),
        }
    }
}

fn inverse(t: &CMatrix) -> Result<CMatrix> {
    let scale = crate::linalg::max_abs(t);
    if !(scale > 0.0) {
        return Err(Error::Numerical("whitening matrix is zero".into()));
    }
    let inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("whitening matrix is singular".into()))?;
    // reject numerically singular inverses
    let cond = scale * crate::linalg::max_abs(&inv);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Numerical(format!(
            "whitening matrix is numerically singular (cond ~ {cond:e})"
        )));
    }
    Ok(inv)
}

pub fn bernstein_coefficients(
    ups_tilde: &CMatrix,
    e: &CMatrix,
    t_whiten: &CMatrix,
    scope: ErrorScope,
) -> Result<BernsteinCoefficients> {
    let (mp1, nt) = ups_tilde.shape();
    let b = scope.blocks(mp1);
    let d = b * nt;
    if e.shape() != (mp1, mp1) {
        return Err(invalid(format!(
            "lifted phase is {:?}, expected {mp1}x{mp1}",
            e.shape()
        )));
    }
    if t_whiten.shape() != (d, d) {
        return Err(invalid(format!(
            "whitening matrix is {:?}, expected {d}x{d}",
            t_whiten.shape()
        )));
    }
    let s = inverse(t_whiten)?;
    let esub = e.view((0, 0), (b, b)).into_owned();
    let a: Vec<CMatrix> = (0..d)
        .map(|k| CMatrix::from_column_slice(nt, b, s.column(k).as_slice()))
        .collect();
    let ae: Vec<CMatrix> = a.iter().map(|ak| ak * &esub).collect();
    let w = (ups_tilde.adjoint() * e).columns(0, b).into_owned();
    let mut m = Vec::with_capacity(d * d);
    for aa in &a {
        let aah = aa.adjoint();
        for aeb in &ae {
            m.push(aeb * &aah);
        }
    }
    let n = a.iter().map(|ak| &w * ak.adjoint()).collect();
    let c0 = crate::linalg::hermitian_part(&(ups_tilde.adjoint() * e * ups_tilde));
    Ok(BernsteinCoefficients { m, n, c0, dim: d })
}

/// Direct evaluation: `U = T^{-H} (E_s^T (x) F) T^{-1}`, `u = T^{-H} vec(F Y^H E)_s`,
/// `u0 = tr(E Y F Y^H)`, where `_s` restricts to the error scope.
/// Coefficients of `(U, u, u0)` as linear functions of `E` for a fixed beam
/// Gram `f`; evaluate with `E`.
pub fn bernstein_phase_coefficients(
    ups_tilde: &CMatrix,
    f: &CMatrix,
    t_whiten: &CMatrix,
    scope: ErrorScope,
) -> Result<BernsteinCoefficients> {
    let (mp1, nt) = ups_tilde.shape();
    let b = scope.blocks(mp1);
    let d = b * nt;
    if f.shape() != (nt, nt) {
        return Err(invalid(format!(
            "beam Gram is {:?}, expected {nt}x{nt}",
            f.shape()
        )));
    }
    if t_whiten.shape() != (d, d) {
        return Err(invalid(format!(
            "whitening matrix is {:?}, expected {d}x{d}",
            t_whiten.shape()
        )));
    }
    let s = inverse(t_whiten)?;
    let a: Vec<CMatrix> = (0..d)
        .map(|k| CMatrix::from_column_slice(nt, b, s.column(k).as_slice()))
        .collect();
    let fa: Vec<CMatrix> = a.iter().map(|ak| f * ak).collect();
    let mut m = Vec::with_capacity(d * d);
    for aa in &a {
        let aah = aa.adjoint();
        for fab in &fa {
            let mut q = CMatrix::zeros(mp1, mp1);
            q.view_mut((0, 0), (b, b)).copy_from(&(&aah * fab));
            m.push(q);
        }
    }
    let fy = f * ups_tilde.adjoint();
    let n = a
        .iter()
        .map(|ak| {
            let mut k = CMatrix::zeros(mp1, mp1);
            k.rows_mut(0, b).copy_from(&(ak.adjoint() * &fy));
            k
        })
        .collect();
    let c0 = crate::linalg::hermitian_part(&(ups_tilde * f * ups_tilde.adjoint()));
    Ok(BernsteinCoefficients { m, n, c0, dim: d })
}

pub fn bernstein_params(
    ups_tilde: &CMatrix,
    e: &CMatrix,
    f: &CMatrix,
    t_whiten: &CMatrix,
    scope: ErrorScope,
) -> Result<BernsteinParams> {
    let (mp1, nt) = ups_tilde.shape();
    let b = scope.blocks(mp1);
    let d = b * nt;
    if f.shape() != (nt, nt) || e.shape() != (mp1, mp1) || t_whiten.shape() != (d, d) {
        return Err(invalid("bernstein_params: inconsistent shapes"));
    }
    let s = inverse(t_whiten)?;
    let esub = e.view((0, 0), (b, b)).transpose();
    let k = crate::linalg::kron(&esub, f);
    let u_mat = crate::linalg::hermitian_part(&(s.adjoint() * k * &s));
    let v = (f * ups_tilde.adjoint() * e).columns(0, b).into_owned();
    let u_vec = s.adjoint() * CVector::from_column_slice(v.as_slice());
    let u0 = trace_prod_re(&(e * ups_tilde), &(f * ups_tilde.adjoint()));
    Ok(BernsteinParams { u_mat, u_vec, u0 })
}

impl BernsteinParams {
    /// `x^H U x + 2 Re(u^H x) + u0`.
    pub fn quadratic(&self, x: &CVector) -> f64 {
        (x.adjoint() * &self.u_mat * x)[0].re + 2.0 * self.u_vec.dotc(x).re + self.u0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{randn_cmatrix, randn_cvector, random_psd};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_theta(rng: &mut ChaCha8Rng, m: usize) -> CVector {
        randn_cvector(rng, m).map(|z| z / z.norm())
    }

    /// `|| (D + G diag(theta) H) f ||^2`, computed without any lifting.
    fn physical(d: &CMatrix, g: &CMatrix, h: &CMatrix, theta: &CVector, f: &CVector) -> f64 {
        let gt = CMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * theta[j]);
        ((d + gt * h) * f).norm_squared()
    }

    #[test]
    fn upsilon_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = randn_cmatrix(&mut rng, 2, 2);
        let h = randn_cmatrix(&mut rng, 3, 2);
        let ups = build_upsilon(&d, &CMatrix::zeros(2, 3), &h).unwrap();
        for (r, y) in ups.iter().enumerate() {
            assert_eq!(y.row(0), d.row(r));
            assert!(y.rows(1, 3).iter().all(|z| z.norm() == 0.0));
        }
        let g = randn_cmatrix(&mut rng, 2, 3);
        let ups = build_upsilon(&CMatrix::zeros(2, 2), &g, &h).unwrap();
        assert!(ups[1].row(0).iter().all(|z| z.norm() == 0.0));
        let theta = unit_theta(&mut rng, 3);
        let ups = build_upsilon(&d, &g, &h).unwrap();
        let gt = CMatrix::from_fn(2, 3, |i, j| g[(i, j)] * theta[j]);
        let eff = &d + gt * &h;
        let mut t = CVector::from_element(4, c64(1.0, 0.0));
        t.rows_mut(1, 3).copy_from(&theta);
        for (r, y) in ups.iter().enumerate() {
            let lhs = t.transpose() * y;
            assert!((lhs - eff.row(r)).camax() < 1e-12);
        }
        assert!(build_upsilon(&d, &randn_cmatrix(&mut rng, 1, 3), &h).is_err());
    }

    #[test]
    fn lifted_quadratic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = randn_cmatrix(&mut rng, 1, 3);
        let h = randn_cmatrix(&mut rng, 4, 3);
        let f = randn_cvector(&mut rng, 3);
        let ups = build_upsilon(&d, &CMatrix::zeros(1, 4), &h).unwrap();
        let mut e0 = CMatrix::zeros(5, 5);
        e0[(0, 0)] = c64(1.0, 0.0);
        let v = lifted_quadratic(&ups, &e0, &beam_gram(&f));
        assert!((v - (&d * &f).norm_squared()).abs() < 1e-12);
        assert_eq!(
            lifted_quadratic(
                &ups,
                &lift_phase(&unit_theta(&mut rng, 4)),
                &CMatrix::zeros(3, 3)
            ),
            0.0
        );
    }

    #[test]
    fn bernstein_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = randn_cmatrix(&mut rng, 4, 2);
        let e = lift_phase(&unit_theta(&mut rng, 3));
        let f = beam_gram(&randn_cvector(&mut rng, 2));
        let t = CMatrix::identity(8, 8);
        let p = bernstein_params(&y, &e, &f, &t, ErrorScope::Full).unwrap();
        let zero = CVector::zeros(8);
        let direct = lifted_quadratic(std::slice::from_ref(&y), &e, &f);
        assert!((p.quadratic(&zero) - direct).abs() <= 1e-12 * direct);
        let z = bernstein_params(
            &y,
            &CMatrix::zeros(4, 4),
            &CMatrix::zeros(2, 2),
            &t,
            ErrorScope::Full,
        )
        .unwrap();
        assert_eq!(z.u_mat.norm() + z.u_vec.norm() + z.u0.abs(), 0.0);
    }

    #[test]
    fn singular_whitening_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = randn_cmatrix(&mut rng, 4, 2);
        let e = lift_phase(&unit_theta(&mut rng, 3));
        let f = beam_gram(&randn_cvector(&mut rng, 2));
        let mut t = CMatrix::identity(2, 2);
        t[(1, 1)] = c64(0.0, 0.0);
        assert!(matches!(
            bernstein_params(&y, &e, &f, &t, ErrorScope::Direct),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn bernstein_reconstructs_perturbed_norm() {
        for scope in [ErrorScope::Full, ErrorScope::Direct] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let (m, nt) = (3, 2);
            let y = randn_cmatrix(&mut rng, m + 1, nt);
            let theta = unit_theta(&mut rng, m);
            let e = lift_phase(&theta);
            let fv = randn_cvector(&mut rng, nt);
            let f = beam_gram(&fv);
            let d = scope.dim(&y);
            let t = randn_cmatrix(&mut rng, d, d) + CMatrix::identity(d, d) * c64(2.0, 0.0);
            let p = bernstein_params(&y, &e, &f, &t, scope).unwrap();
            let coeffs = bernstein_coefficients(&y, &e, &t, scope).unwrap();
            let q = coeffs.evaluate(&f);
            let r = bernstein_phase_coefficients(&y, &f, &t, scope)
                .unwrap()
                .evaluate(&e);
            assert!((&r.u_mat - &p.u_mat).camax() <= 1e-10 * (1.0 + p.u_mat.camax()));
            assert!((&r.u_vec - &p.u_vec).camax() <= 1e-10 * (1.0 + p.u_vec.camax()));
            assert!((r.u0 - p.u0).abs() <= 1e-10 * (1.0 + p.u0.abs()));
            assert!((&q.u_mat - &p.u_mat).camax() <= 1e-10 * (1.0 + p.u_mat.camax()));
            assert!((&q.u_vec - &p.u_vec).camax() <= 1e-10 * (1.0 + p.u_vec.camax()));
            assert!((q.u0 - p.u0).abs() <= 1e-10 * (1.0 + p.u0.abs()));
            let mut tt = CVector::from_element(m + 1, c64(1.0, 0.0));
            tt.rows_mut(1, m).copy_from(&theta);
            for _ in 0..100 {
                let mut dy = randn_cmatrix(&mut rng, m + 1, nt);
                if scope == ErrorScope::Direct {
                    dy.rows_mut(1, m).fill(c64(0.0, 0.0));
                }
                let x = &t * scope.error_vector(&dy);
                let want = (tt.transpose() * (&y + &dy) * &fv)[0].norm_sqr();
                let got = p.quadratic(&x);
                assert!(
                    (got - want).abs() <= 1e-9 * want.max(1.0),
                    "{got} vs {want}"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lift_matches_physical_norm(seed in any::<u64>(), nt in 1usize..5, m in 1usize..5, nr in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = randn_cmatrix(&mut rng, nr, nt);
            let g = randn_cmatrix(&mut rng, nr, m);
            let h = randn_cmatrix(&mut rng, m, nt);
            let theta = unit_theta(&mut rng, m);
            let f = randn_cvector(&mut rng, nt);
            let ups = build_upsilon(&d, &g, &h).unwrap();
            let lifted = lifted_quadratic(&ups, &lift_phase(&theta), &beam_gram(&f));
            let want = physical(&d, &g, &h, &theta, &f);
            prop_assert!((lifted - want).abs() <= 1e-9 * want.max(1e-300));
        }

        #[test]
        fn trace_orderings_agree(seed in any::<u64>(), nt in 1usize..5, m in 1usize..5, nr in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ups = build_upsilon(
                &randn_cmatrix(&mut rng, nr, nt),
                &randn_cmatrix(&mut rng, nr, m),
                &randn_cmatrix(&mut rng, m, nt),
            ).unwrap();
            let e = random_psd(&mut rng, m + 1, 0.0);
            let f = random_psd(&mut rng, nt, 0.0);
            let a = trace_prod_re(&gram_for_beam(&ups, &e), &f);
            let b = trace_prod_re(&gram_for_phase(&ups, &f), &e);
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300));
        }

        #[test]
        fn lifted_phase_has_unit_diagonal(seed in any::<u64>(), m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = lift_phase(&unit_theta(&mut rng, m));
            for i in 0..=m {
                prop_assert!((e[(i, i)] - c64(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }
}
