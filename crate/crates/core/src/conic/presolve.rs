//! Lowering of the IR to `min c'x  s.t.  Gx + s = h, s in K` with equality
//! constraints eliminated.
//!
//! PSD variables whose constraint coefficients all live in a proper subspace
//! are restricted to it (`X = B Y B^H`) when the objective cannot gain from the
//! orthogonal complement.

use nalgebra::{DMatrix, DVector};

use super::cones::Layout;
use super::{AffineExpr, ConicProgram, Sense, Sign, SolveStatus};
use crate::linalg::{eigh, hvec, unhvec, CMatrix};

const RANGE_RTOL: f64 = 1e-10;
const PIVOT_RTOL: f64 = 1e-12;

pub(crate) struct Reduced {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub layout: Layout,
}

struct MatSlot {
    offset: usize,
    dim: usize,
    k: usize,
    basis: Option<CMatrix>,
}

pub(crate) struct Prepared {
    mats: Vec<MatSlot>,
    scalar_offset: usize,
    n_scalars: usize,
    x0: DVector<f64>,
    null: DMatrix<f64>,
    reduced: Result<Reduced, SolveStatus>,
}

impl Prepared {
    pub fn reduced(&self) -> Result<&Reduced, SolveStatus> {
        self.reduced.as_ref().map_err(|s| *s)
    }

    /// Full-space point `x0 + N z`.
    pub fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        if z.is_empty() {
            return self.x0.clone();
        }
        &self.x0 + &self.null * z
    }

    pub fn zero_point(&self) -> DVector<f64> {
        self.x0.clone()
    }

    pub fn unpack(&self, x: &DVector<f64>) -> (Vec<CMatrix>, Vec<f64>) {
        let mats = self
            .mats
            .iter()
            .map(|m| {
                if m.k == 0 {
                    return CMatrix::zeros(m.dim, m.dim);
                }
                let y = unhvec(&x.as_slice()[m.offset..m.offset + m.k * m.k], m.k);
                match &m.basis {
                    Some(b) => crate::linalg::hermitian_part(&(b * y * b.adjoint())),
                    None => y,
                }
            })
            .collect();
        let scalars =
            x.as_slice()[self.scalar_offset..self.scalar_offset + self.n_scalars].to_vec();
        (mats, scalars)
    }
}

/// Orthonormal basis of the subspace a PSD variable can be restricted to
/// without changing the optimum, or `None` if no reduction applies.
fn range_basis(p: &ConicProgram, var: usize) -> Option<CMatrix> {
    let n = p.matrix_vars[var].dim;
    let mut acc = CMatrix::zeros(n, n);
    let mut touched = false;
    for e in p.exprs_without_objective() {
        for (v, a) in &e.mat_terms {
            if v.0 != var {
                continue;
            }
            let fro2 = a.norm_squared();
            if fro2 > 0.0 {
                acc += (a * a) * crate::linalg::c64(1.0 / fro2, 0.0);
                touched = true;
            }
        }
    }
    let (w, v) = eigh(&acc);
    let wmax = w[n - 1];
    let keep: Vec<usize> = if touched {
        (0..n).filter(|&i| w[i] > RANGE_RTOL * wmax).collect()
    } else {
        vec![]
    };
    if keep.len() == n {
        return None;
    }
    let mut b = CMatrix::zeros(n, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        b.set_column(j, &v.column(i));
    }

    // The objective must split along range/complement with a PSD complement
    // block, so that dropping the complement never increases the cost.
    let mut c = CMatrix::zeros(n, n);
    for (v, a) in &p.objective.mat_terms {
        if v.0 == var {
            c += a;
        }
    }
    let proj_perp = CMatrix::identity(n, n) - &b * b.adjoint();
    let cnorm = c.norm().max(f64::MIN_POSITIVE);
    let cross = &proj_perp * &c * &b;
    if cross.norm() > 1e-9 * cnorm {
        return None;
    }
    let comp = &proj_perp * &c * &proj_perp;
    let (wc, _) = eigh(&crate::linalg::hermitian_part(&comp));
    if wc[0] < -1e-9 * cnorm {
        return None;
    }
    Some(b)
}

impl ConicProgram {
    fn exprs_without_objective(&self) -> impl Iterator<Item = &AffineExpr> {
        self.linear.iter().map(|c| &c.expr).chain(
            self.soc
                .iter()
                .flat_map(|s| s.rows.iter().chain(std::iter::once(&s.bound))),
        )
    }
}

struct RowBuilder<'a> {
    slots: &'a [MatSlot],
    scalar_offset: usize,
    nvars: usize,
}

impl RowBuilder<'_> {
    fn row(&self, e: &AffineExpr) -> (Vec<f64>, f64) {
        let mut a = vec![0.0; self.nvars];
        for (v, coeff) in &e.mat_terms {
            let slot = &self.slots[v.0];
            if slot.k == 0 {
                continue;
            }
            let reduced;
            let m = match &slot.basis {
                Some(b) => {
                    reduced = b.adjoint() * coeff * b;
                    &reduced
                }
                None => coeff,
            };
            for (dst, src) in a[slot.offset..slot.offset + slot.k * slot.k]
                .iter_mut()
                .zip(hvec(m))
            {
                *dst += src;
            }
        }
        for (v, c) in &e.scalar_terms {
            a[self.scalar_offset + v.0] += c;
        }
        (a, e.constant)
    }
}

pub(crate) fn prepare(p: &ConicProgram) -> Prepared {
    let mut slots = Vec::with_capacity(p.matrix_vars.len());
    let mut off = 0;
    for (i, d) in p.matrix_vars.iter().enumerate() {
        let basis = if d.psd { range_basis(p, i) } else { None };
        let k = basis.as_ref().map_or(d.dim, |b| b.ncols());
        slots.push(MatSlot {
            offset: off,
            dim: d.dim,
            k,
            basis,
        });
        off += k * k;
    }
    let scalar_offset = off;
    let nvars = off + p.scalar_vars.len();
    let rb = RowBuilder {
        slots: &slots,
        scalar_offset,
        nvars,
    };

    let mut eq_rows: Vec<Vec<f64>> = Vec::new();
    let mut eq_rhs: Vec<f64> = Vec::new();
    let mut nonneg_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (j, s) in p.scalar_vars.iter().enumerate() {
        let mut a = vec![0.0; nvars];
        match s.sign {
            Sign::Free => continue,
            Sign::NonNeg => a[scalar_offset + j] = -1.0,
            Sign::NonPos => a[scalar_offset + j] = 1.0,
        }
        nonneg_rows.push((a, 0.0));
    }
    for c in &p.linear {
        let (a, k) = rb.row(&c.expr);
        match c.sense {
            Sense::Le => nonneg_rows.push((a, c.rhs - k)),
            Sense::Ge => nonneg_rows.push((a.iter().map(|x| -x).collect(), k - c.rhs)),
            Sense::Eq => {
                eq_rows.push(a);
                eq_rhs.push(c.rhs - k);
            }
        }
    }

    let mut soc_dims = Vec::new();
    let mut soc_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for s in &p.soc {
        soc_dims.push(s.rows.len() + 1);
        for e in std::iter::once(&s.bound).chain(&s.rows) {
            let (a, k) = rb.row(e);
            soc_rows.push((a.iter().map(|x| -x).collect(), k));
        }
    }
    let psd_dims: Vec<usize> = slots
        .iter()
        .zip(&p.matrix_vars)
        .filter(|(s, d)| d.psd && s.k > 0)
        .map(|(s, _)| s.k)
        .collect();
    let layout = Layout::new(nonneg_rows.len(), &soc_dims, &psd_dims);

    let q = layout.total;
    let mut g = DMatrix::<f64>::zeros(q, nvars);
    let mut h = DVector::<f64>::zeros(q);
    for (i, (a, b)) in nonneg_rows.iter().chain(&soc_rows).enumerate() {
        g.row_mut(i).copy_from_slice(a);
        h[i] = *b;
    }
    let mut row = nonneg_rows.len() + soc_rows.len();
    for (s, d) in slots.iter().zip(&p.matrix_vars) {
        if d.psd && s.k > 0 {
            for t in 0..s.k * s.k {
                g[(row + t, s.offset + t)] = -1.0;
            }
            row += s.k * s.k;
        }
    }

    let (c_full, _) = rb.row(&p.objective);
    let c_full = DVector::from_vec(c_full);

    let elim = eliminate(&eq_rows, &eq_rhs, nvars);
    let mut prepared = Prepared {
        mats: slots,
        scalar_offset,
        n_scalars: p.scalar_vars.len(),
        x0: DVector::zeros(nvars),
        null: DMatrix::zeros(nvars, 0),
        reduced: Err(SolveStatus::Infeasible),
    };
    let Some((x0, null)) = elim else {
        return prepared;
    };
    let h_r = &h - &g * &x0;
    let g_r = &g * &null;
    let c_r = null.transpose() * &c_full;
    prepared.x0 = x0;
    prepared.null = null;

    prepared.reduced = if c_r.is_empty() {
        let tol = 1e-9 * (1.0 + h.amax());
        if q == 0 || layout.max_violation(h_r.as_slice()) <= tol {
            Err(SolveStatus::Optimal)
        } else {
            Err(SolveStatus::Infeasible)
        }
    } else if q == 0 {
        if c_r.amax() <= 1e-12 * (1.0 + c_full.amax()) {
            Err(SolveStatus::Optimal)
        } else {
            Err(SolveStatus::Unbounded)
        }
    } else {
        Ok(Reduced {
            c: c_r,
            g: g_r,
            h: h_r,
            layout,
        })
    };
    prepared
}

/// Solves `A x = b` by Gauss-Jordan elimination with complete pivoting.
/// Returns a particular solution and a basis of the null space (as columns),
/// or `None` when the system is inconsistent.
fn eliminate(rows: &[Vec<f64>], rhs: &[f64], n: usize) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let m = rows.len();
    if m == 0 {
        return Some((DVector::zeros(n), DMatrix::identity(n, n)));
    }
    let mut a = DMatrix::<f64>::zeros(m, n);
    for (i, r) in rows.iter().enumerate() {
        a.row_mut(i).copy_from_slice(r);
    }
    let mut b = DVector::from_column_slice(rhs);
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let bscale = 1.0 + b.amax();

    let mut col_perm: Vec<usize> = (0..n).collect();
    let mut rank = 0;
    while rank < m.min(n) {
        // complete pivot over the trailing block
        let mut best = (0.0, rank, rank);
        for j in rank..n {
            for i in rank..m {
                let v = a[(i, j)].abs();
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        if best.0 <= PIVOT_RTOL * scale {
            break;
        }
        let (_, pi, pj) = best;
        a.swap_rows(rank, pi);
        b.swap_rows(rank, pi);
        a.swap_columns(rank, pj);
        col_perm.swap(rank, pj);

        let piv = a[(rank, rank)];
        for j in rank..n {
            a[(rank, j)] /= piv;
        }
        b[rank] /= piv;
        for i in 0..m {
            if i == rank {
                continue;
            }
            let f = a[(i, rank)];
            if f == 0.0 {
                continue;
            }
            for j in rank..n {
                let v = a[(rank, j)];
                a[(i, j)] -= f * v;
            }
            let v = b[rank];
            b[i] -= f * v;
        }
        rank += 1;
    }
    for i in rank..m {
        if b[i].abs() > 1e-9 * bscale {
            return None;
        }
    }

    // permuted variables: [basic (rank) | free (n - rank)]
    // basic = b[..rank] - A[..rank, rank..] * free
    let nfree = n - rank;
    let mut x0 = DVector::<f64>::zeros(n);
    let mut null = DMatrix::<f64>::zeros(n, nfree);
    for i in 0..rank {
        let var = col_perm[i];
        x0[var] = b[i];
        for f in 0..nfree {
            null[(var, f)] = -a[(i, rank + f)];
        }
    }
    for f in 0..nfree {
        null[(col_perm[rank + f], f)] = 1.0;
    }
    Some((x0, null))
}
