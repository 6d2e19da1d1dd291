//! Cone algebra for the product cone `R_+^l x Q^{q_1} x ... x H_+^{n_1} x ...`
//! in its real vector layout, and Nesterov-Todd scalings.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{c64, eigh, hvec, hvec_index, unhvec, CMatrix};

#[derive(Clone, Debug, Default)]
pub(crate) struct Layout {
    pub nonneg: usize,
    /// (offset, length) per second-order cone.
    pub soc: Vec<(usize, usize)>,
    /// (offset, matrix order) per Hermitian PSD block of `n^2` coordinates.
    pub psd: Vec<(usize, usize)>,
    pub total: usize,
}

impl Layout {
    pub fn new(nonneg: usize, soc: &[usize], psd: &[usize]) -> Self {
        let mut off = nonneg;
        let mut socs = Vec::with_capacity(soc.len());
        for &d in soc {
            socs.push((off, d));
            off += d;
        }
        let mut psds = Vec::with_capacity(psd.len());
        for &n in psd {
            psds.push((off, n));
            off += n * n;
        }
        Self {
            nonneg,
            soc: socs,
            psd: psds,
            total: off,
        }
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len() + self.psd.iter().map(|&(_, n)| n).sum::<usize>()
    }

    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.total];
        e[..self.nonneg].fill(1.0);
        for &(off, _) in &self.soc {
            e[off] = 1.0;
        }
        for &(off, n) in &self.psd {
            for i in 0..n {
                e[off + hvec_index(i, i)] = 1.0;
            }
        }
        e
    }

    /// Largest "negativity" of `u`: the smallest `a` with `u + a e` on the
    /// cone boundary. Negative when `u` is interior.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &x in &u[..self.nonneg] {
            worst = worst.max(-x);
        }
        for &(off, d) in &self.soc {
            let t = u[off];
            let r = norm(&u[off + 1..off + d]);
            worst = worst.max(r - t);
        }
        for &(off, n) in &self.psd {
            let m = unhvec(&u[off..off + n * n], n);
            let (w, _) = eigh(&m);
            worst = worst.max(-w[0]);
        }
        worst
    }

    /// Jordan product `u o v`.
    pub fn jordan(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.total];
        for i in 0..self.nonneg {
            out[i] = u[i] * v[i];
        }
        for &(off, d) in &self.soc {
            let (u0, v0) = (u[off], v[off]);
            out[off] = dot(&u[off..off + d], &v[off..off + d]);
            for k in 1..d {
                out[off + k] = u0 * v[off + k] + v0 * u[off + k];
            }
        }
        for &(off, n) in &self.psd {
            let a = unhvec(&u[off..off + n * n], n);
            let b = unhvec(&v[off..off + n * n], n);
            let p = &a * &b;
            let sym = (&p + p.adjoint()) * c64(0.5, 0.0);
            out[off..off + n * n].copy_from_slice(&hvec(&sym));
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
struct SocScaling {
    beta: f64,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
struct PsdScaling {
    r: CMatrix,
    rinv: CMatrix,
    lambda: Vec<f64>,
}

/// Nesterov-Todd scaling `W` with `W z = W^{-T} s = lambda`.
///
/// Nonnegative block: `W = diag(sqrt(s / z))`. Second-order cone:
/// `W = beta (2 v v^T - J)`. Hermitian PSD block: `W(Z) = R^H Z R` with
/// `R^H Z R = R^{-1} S R^{-H} = diag(lambda)`.
#[derive(Clone, Debug)]
pub(crate) struct Scaling {
    nonneg: Vec<f64>,
    soc: Vec<SocScaling>,
    psd: Vec<PsdScaling>,
    pub lambda: Vec<f64>,
}

#[derive(Debug)]
pub(crate) struct NotInterior;

impl Scaling {
    pub fn identity(layout: &Layout) -> Self {
        let soc = layout
            .soc
            .iter()
            .map(|&(_, d)| {
                let mut v = vec![0.0; d];
                v[0] = 1.0;
                SocScaling { beta: 1.0, v }
            })
            .collect();
        let psd = layout
            .psd
            .iter()
            .map(|&(_, n)| PsdScaling {
                r: CMatrix::identity(n, n),
                rinv: CMatrix::identity(n, n),
                lambda: vec![1.0; n],
            })
            .collect();
        Self {
            nonneg: vec![1.0; layout.nonneg],
            soc,
            psd,
            lambda: layout.identity(),
        }
    }

    pub fn compute(layout: &Layout, s: &[f64], z: &[f64]) -> Result<Self, NotInterior> {
        let mut lambda = vec![0.0; layout.total];
        let mut nonneg = Vec::with_capacity(layout.nonneg);
        for i in 0..layout.nonneg {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return Err(NotInterior);
            }
            nonneg.push((s[i] / z[i]).sqrt());
            lambda[i] = (s[i] * z[i]).sqrt();
        }

        let mut soc = Vec::with_capacity(layout.soc.len());
        for &(off, d) in &layout.soc {
            let sb = &s[off..off + d];
            let zb = &z[off..off + d];
            let sjs = jnorm2(sb);
            let zjz = jnorm2(zb);
            if !(sjs > 0.0 && zjz > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                return Err(NotInterior);
            }
            let (sn, zn) = (sjs.sqrt(), zjz.sqrt());
            let gamma = ((1.0 + dot(sb, zb) / (sn * zn)) / 2.0).sqrt();
            let mut wbar = vec![0.0; d];
            wbar[0] = (sb[0] / sn + zb[0] / zn) / (2.0 * gamma);
            for k in 1..d {
                wbar[k] = (sb[k] / sn - zb[k] / zn) / (2.0 * gamma);
            }
            let beta = (sjs / zjz).sqrt().sqrt();
            let denom = (2.0 * (wbar[0] + 1.0)).sqrt();
            let mut v = wbar;
            v[0] += 1.0;
            for x in v.iter_mut() {
                *x /= denom;
            }
            let sc = SocScaling { beta, v };
            let lz = soc_w(&sc, zb);
            lambda[off..off + d].copy_from_slice(&lz);
            soc.push(sc);
        }

        let mut psd = Vec::with_capacity(layout.psd.len());
        for &(off, n) in &layout.psd {
            let sm = unhvec(&s[off..off + n * n], n);
            let zm = unhvec(&z[off..off + n * n], n);
            let ls = nalgebra::Cholesky::new(sm).ok_or(NotInterior)?.unpack();
            let lz = nalgebra::Cholesky::new(zm).ok_or(NotInterior)?.unpack();
            let prod = lz.adjoint() * &ls;
            let svd = nalgebra::SVD::new(prod, true, true);
            let u = svd.u.ok_or(NotInterior)?;
            let vt = svd.v_t.ok_or(NotInterior)?;
            let sv = svd.singular_values;
            if sv.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(NotInterior);
            }
            // R = L_s V diag(sv)^{-1/2},  R^{-1} = diag(sv)^{-1/2} U^H L_z^H
            let mut r = ls * vt.adjoint();
            let mut rinv = u.adjoint() * lz.adjoint();
            for k in 0..n {
                let f = 1.0 / sv[k].sqrt();
                r.column_mut(k).scale_mut(f);
                rinv.row_mut(k).scale_mut(f);
            }
            for k in 0..n {
                lambda[off + hvec_index(k, k)] = sv[k];
            }
            psd.push(PsdScaling {
                r,
                rinv,
                lambda: sv.iter().copied().collect(),
            });
        }
        Ok(Self {
            nonneg,
            soc,
            psd,
            lambda,
        })
    }

    fn apply(&self, layout: &Layout, u: &[f64], kind: Op) -> Vec<f64> {
        let mut out = vec![0.0; layout.total];
        for i in 0..layout.nonneg {
            out[i] = match kind {
                Op::W | Op::Wt => u[i] * self.nonneg[i],
                Op::Winv | Op::Wit => u[i] / self.nonneg[i],
            };
        }
        for (sc, &(off, d)) in self.soc.iter().zip(&layout.soc) {
            let ub = &u[off..off + d];
            let r = match kind {
                Op::W | Op::Wt => soc_w(sc, ub),
                Op::Winv | Op::Wit => soc_winv(sc, ub),
            };
            out[off..off + d].copy_from_slice(&r);
        }
        for (sc, &(off, n)) in self.psd.iter().zip(&layout.psd) {
            let m = unhvec(&u[off..off + n * n], n);
            let r = match kind {
                Op::W => sc.r.adjoint() * m * &sc.r,
                Op::Wt => &sc.r * m * sc.r.adjoint(),
                Op::Winv => sc.rinv.adjoint() * m * &sc.rinv,
                Op::Wit => &sc.rinv * m * sc.rinv.adjoint(),
            };
            crate::linalg::hvec_into(&r, &mut out[off..off + n * n]);
        }
        out
    }

    pub fn w(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.apply(layout, u, Op::W)
    }

    pub fn wt(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.apply(layout, u, Op::Wt)
    }

    pub fn winv(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.apply(layout, u, Op::Winv)
    }

    pub fn wit(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.apply(layout, u, Op::Wit)
    }

    /// `W^{-T} G` for a dense `q x p` matrix.
    pub fn wit_matrix(&self, layout: &Layout, g: &DMatrix<f64>) -> DMatrix<f64> {
        let p = g.ncols();
        let mut out = DMatrix::<f64>::zeros(layout.total, p);
        for i in 0..layout.nonneg {
            let f = 1.0 / self.nonneg[i];
            for j in 0..p {
                out[(i, j)] = g[(i, j)] * f;
            }
        }
        for (sc, &(off, d)) in self.soc.iter().zip(&layout.soc) {
            // W^{-1} = (2 J v v^T J - J) / beta
            let mut jv = sc.v.clone();
            for x in jv.iter_mut().skip(1) {
                *x = -*x;
            }
            for j in 0..p {
                let col = g.view((off, j), (d, 1));
                let a: f64 = (0..d).map(|k| jv[k] * col[k]).sum();
                for k in 0..d {
                    let jg = if k == 0 { col[k] } else { -col[k] };
                    out[(off + k, j)] = (2.0 * a * jv[k] - jg) / sc.beta;
                }
            }
        }
        for (sc, &(off, n)) in self.psd.iter().zip(&layout.psd) {
            let op = congruence_matrix(&sc.rinv);
            let block = op * g.rows(off, n * n);
            out.rows_mut(off, n * n).copy_from(&block);
        }
        out
    }

    /// `lambda o u`.
    #[cfg(test)]
    pub fn lambda_prod(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; layout.total];
        for i in 0..layout.nonneg {
            out[i] = self.lambda[i] * u[i];
        }
        for &(off, d) in &layout.soc {
            let l = &self.lambda[off..off + d];
            let ub = &u[off..off + d];
            out[off] = dot(l, ub);
            for k in 1..d {
                out[off + k] = l[0] * ub[k] + ub[0] * l[k];
            }
        }
        for (sc, &(off, n)) in self.psd.iter().zip(&layout.psd) {
            for j in 0..n {
                for i in 0..=j {
                    let f = 0.5 * (sc.lambda[i] + sc.lambda[j]);
                    let k = hvec_index(i, j);
                    out[off + k] = f * u[off + k];
                    if i < j {
                        out[off + k + 1] = f * u[off + k + 1];
                    }
                }
            }
        }
        out
    }

    /// Solves `lambda o x = u`.
    pub fn lambda_div(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; layout.total];
        for i in 0..layout.nonneg {
            out[i] = u[i] / self.lambda[i];
        }
        for &(off, d) in &layout.soc {
            let l = &self.lambda[off..off + d];
            let ub = &u[off..off + d];
            let det = l[0] * l[0] - dot(&l[1..], &l[1..]);
            let x0 = (l[0] * ub[0] - dot(&l[1..], &ub[1..])) / det;
            out[off] = x0;
            for k in 1..d {
                out[off + k] = (ub[k] - x0 * l[k]) / l[0];
            }
        }
        for (sc, &(off, n)) in self.psd.iter().zip(&layout.psd) {
            for j in 0..n {
                for i in 0..=j {
                    let f = 0.5 * (sc.lambda[i] + sc.lambda[j]);
                    let k = hvec_index(i, j);
                    out[off + k] = u[off + k] / f;
                    if i < j {
                        out[off + k + 1] = u[off + k + 1] / f;
                    }
                }
            }
        }
        out
    }

    /// Largest `a` with `lambda + a * d` in the cone (may be infinite).
    pub fn max_step(&self, layout: &Layout, d: &[f64]) -> f64 {
        let mut amax = f64::INFINITY;
        for i in 0..layout.nonneg {
            if d[i] < 0.0 {
                amax = amax.min(-self.lambda[i] / d[i]);
            }
        }
        for &(off, len) in &layout.soc {
            amax = amax.min(soc_max_step(
                &self.lambda[off..off + len],
                &d[off..off + len],
            ));
        }
        for (sc, &(off, n)) in self.psd.iter().zip(&layout.psd) {
            let mut m = unhvec(&d[off..off + n * n], n);
            for j in 0..n {
                for i in 0..n {
                    m[(i, j)] /= (sc.lambda[i] * sc.lambda[j]).sqrt();
                }
            }
            let (w, _) = eigh(&m);
            if w[0] < 0.0 {
                amax = amax.min(-1.0 / w[0]);
            }
        }
        amax
    }
}

#[derive(Clone, Copy)]
enum Op {
    W,
    Wt,
    Winv,
    Wit,
}

fn jnorm2(u: &[f64]) -> f64 {
    u[0] * u[0] - dot(&u[1..], &u[1..])
}

fn soc_w(sc: &SocScaling, u: &[f64]) -> Vec<f64> {
    // beta (2 v v^T u - J u)
    let a = dot(&sc.v, u);
    let mut out: Vec<f64> = sc.v.iter().map(|&vk| 2.0 * a * vk).collect();
    out[0] -= u[0];
    for k in 1..u.len() {
        out[k] += u[k];
    }
    out.iter_mut().for_each(|x| *x *= sc.beta);
    out
}

fn soc_winv(sc: &SocScaling, u: &[f64]) -> Vec<f64> {
    // (2 J v v^T J u - J u) / beta
    let d = u.len();
    let mut jv = sc.v.clone();
    for x in jv.iter_mut().skip(1) {
        *x = -*x;
    }
    let a = dot(&jv, u);
    let mut out = vec![0.0; d];
    for k in 0..d {
        let ju = if k == 0 { u[k] } else { -u[k] };
        out[k] = (2.0 * a * jv[k] - ju) / sc.beta;
    }
    out
}

fn soc_max_step(l: &[f64], d: &[f64]) -> f64 {
    // (l0 + a d0)^2 - ||l1 + a d1||^2 = qa a^2 + qb a + qc, qc > 0
    let qa = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let qb = 2.0 * (l[0] * d[0] - dot(&l[1..], &d[1..]));
    let qc = l[0] * l[0] - dot(&l[1..], &l[1..]);
    let mut amax = f64::INFINITY;
    if qa.abs() <= 1e-300 {
        if qb < 0.0 {
            amax = -qc / qb;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let t = -0.5 * (qb + qb.signum() * sq);
            let mut roots = [t / qa, if t != 0.0 { qc / t } else { f64::INFINITY }];
            roots.sort_by(|a, b| a.total_cmp(b));
            if let Some(&r) = roots.iter().find(|&&r| r > 0.0) {
                amax = r;
            }
        }
    }
    // the leading coordinate may also reach zero first (only possible at the tip)
    if d[0] < 0.0 {
        amax = amax.min(-l[0] / d[0]);
    }
    amax
}

/// Matrix (in hvec coordinates) of `U -> A U A^H`.
pub(crate) fn congruence_matrix(a: &CMatrix) -> DMatrix<f64> {
    let n = a.nrows();
    let nn = n * n;
    let s2 = std::f64::consts::SQRT_2;
    let mut out = DMatrix::<f64>::zeros(nn, nn);
    let cols: Vec<DVector<num_complex::Complex64>> =
        (0..n).map(|i| a.column(i).into_owned()).collect();
    // image of basis element E_ij (+ E_ji) is built from outer products of columns of A
    for j in 0..n {
        for i in 0..=j {
            let ai = &cols[i];
            let aj = &cols[j];
            let k = hvec_index(i, j);
            if i == j {
                fill_outer(&mut out, k, n, |r, c| ai[r] * ai[c].conj(), 1.0, s2);
            } else {
                // (E_ij + E_ji)/sqrt2 -> (a_i a_j^H + a_j a_i^H)/sqrt2
                fill_outer(
                    &mut out,
                    k,
                    n,
                    |r, c| ai[r] * aj[c].conj() + aj[r] * ai[c].conj(),
                    std::f64::consts::FRAC_1_SQRT_2,
                    s2,
                );
                // i(E_ij - E_ji)/sqrt2 -> i(a_i a_j^H - a_j a_i^H)/sqrt2
                fill_outer(
                    &mut out,
                    k + 1,
                    n,
                    |r, c| (ai[r] * aj[c].conj() - aj[r] * ai[c].conj()) * c64(0.0, 1.0),
                    std::f64::consts::FRAC_1_SQRT_2,
                    s2,
                );
            }
        }
    }
    out
}

fn fill_outer(
    out: &mut DMatrix<f64>,
    col: usize,
    n: usize,
    entry: impl Fn(usize, usize) -> num_complex::Complex64,
    scale: f64,
    s2: f64,
) {
    for c in 0..n {
        for r in 0..c {
            let z = entry(r, c) * scale;
            let k = hvec_index(r, c);
            out[(k, col)] = s2 * z.re;
            out[(k + 1, col)] = s2 * z.im;
        }
        out[(hvec_index(c, c), col)] = (entry(c, c) * scale).re;
    }
}
