//! Homogeneous self-dual primal-dual interior-point method with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector step.
//!
//! Primal: `min c'x  s.t. Gx + s = h, s in K`.
//! Dual:   `max -h'z s.t. G'z + c = 0, z in K`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::cones::{dot, norm, Layout, Scaling};
use super::presolve::Reduced;
use super::{SolveStatus, SolverSettings};

const STEP: f64 = 0.99;
const REFINE_STEPS: usize = 3;
/// Relative weight of the regularization rows appended to `M`.
const REG: f64 = 1e-7;
/// Relative KKT residual above which the Cholesky path is abandoned.
const KKT_RTOL: f64 = 1e-10;
/// Iterations without a better near-optimal point before giving up.
const STALL_ITERS: usize = 5;

pub(crate) struct IpmOutput {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub iterations: usize,
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    /// Thin QR of `[M; reg I]`: `M'M x = r` is then solved with the
    /// conditioning of `M` rather than of `M'M`.
    Qr {
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    },
}

/// Factorized KKT system `[0 G'; G -W'W]` for one scaling.
struct Kkt<'a> {
    g: &'a DMatrix<f64>,
    layout: &'a Layout,
    w: &'a Scaling,
    m: DMatrix<f64>,
    factor: Factor,
}

/// Probe solution `(dx, dz)`.
type Probe = (Vec<f64>, Vec<f64>);

impl<'a> Kkt<'a> {
    /// Factors by Cholesky of `M'M`, switching to QR when the refined solve of
    /// the probe system `(bx, bz)` is inaccurate. Returns the probe solution.
    fn factor(
        g: &'a DMatrix<f64>,
        layout: &'a Layout,
        w: &'a Scaling,
        bx: &[f64],
        bz: &[f64],
    ) -> Option<(Self, Probe)> {
        let m = w.wit_matrix(layout, g);
        let p = m.ncols();
        let cmax = (0..p)
            .map(|j| m.column(j).norm())
            .fold(0.0_f64, f64::max)
            .max(1.0);
        let mut hm = m.transpose() * &m;
        // static regularization keeps rank-deficient directions factorable
        for i in 0..p {
            hm[(i, i)] += (REG * cmax).powi(2);
        }
        if let Some(chol) = Cholesky::new(hm) {
            let kkt = Self {
                g,
                layout,
                w,
                m: m.clone(),
                factor: Factor::Cholesky(chol),
            };
            let (sol, rel) = kkt.solve_with_residual(bx, bz);
            if rel <= KKT_RTOL {
                return Some((kkt, sol));
            }
        }
        let mut aug = DMatrix::<f64>::zeros(m.nrows() + p, p);
        aug.rows_mut(0, m.nrows()).copy_from(&m);
        for i in 0..p {
            aug[(m.nrows() + i, i)] = REG * cmax;
        }
        let qr = aug.qr();
        let r = qr.r();
        let dmin = (0..p)
            .map(|i| r[(i, i)].abs())
            .fold(f64::INFINITY, f64::min);
        if !(dmin > 0.0) || !dmin.is_finite() {
            return None;
        }
        let q = qr.q().rows(0, m.nrows()).into_owned();
        let kkt = Self {
            g,
            layout,
            w,
            m,
            factor: Factor::Qr { q, r },
        };
        let (sol, _) = kkt.solve_with_residual(bx, bz);
        Some((kkt, sol))
    }

    fn solve_once(&self, bx: &[f64], bz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let wbz = DVector::from_vec(self.w.wit(self.layout, bz));
        let bxv = DVector::from_column_slice(bx);
        let x = match &self.factor {
            Factor::Cholesky(chol) => chol.solve(&(bxv + self.m.transpose() * &wbz)),
            Factor::Qr { q, r } => {
                // R'R x = bx + R'Q'wbz
                let zero = || DVector::zeros(bx.len());
                let y = r.tr_solve_upper_triangular(&bxv).unwrap_or_else(zero);
                r.solve_upper_triangular(&(y + q.transpose() * &wbz))
                    .unwrap_or_else(zero)
            }
        };
        let t = &self.m * &x - wbz;
        let z = self.w.winv(self.layout, t.as_slice());
        (x.as_slice().to_vec(), z)
    }

    fn residual(&self, bx: &[f64], bz: &[f64], x: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rx: Vec<f64> = (self.g.transpose() * DVector::from_column_slice(z))
            .iter()
            .zip(bx)
            .map(|(a, b)| b - a)
            .collect();
        let wtwz = self.w.wt(self.layout, &self.w.w(self.layout, z));
        let gx = self.g * DVector::from_column_slice(x);
        let rz: Vec<f64> = (0..bz.len()).map(|i| bz[i] - (gx[i] - wtwz[i])).collect();
        (rx, rz)
    }

    /// Solves `G'z = bx, Gx - W'W z = bz` with a few refinement steps, and
    /// reports the final relative residual.
    fn solve_with_residual(&self, bx: &[f64], bz: &[f64]) -> ((Vec<f64>, Vec<f64>), f64) {
        let (mut x, mut z) = self.solve_once(bx, bz);
        let scale = norm(bx).max(norm(bz)).max(f64::MIN_POSITIVE);
        let mut rel = f64::INFINITY;
        for step in 0..=REFINE_STEPS {
            let (rx, rz) = self.residual(bx, bz, &x, &z);
            rel = norm(&rx).max(norm(&rz)) / scale;
            if rel <= 1e-15 || step == REFINE_STEPS {
                break;
            }
            let (dx, dz) = self.solve_once(&rx, &rz);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            z.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        }
        ((x, z), rel)
    }

    fn solve(&self, bx: &[f64], bz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.solve_with_residual(bx, bz).0
    }
}

struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    pres: f64,
    dres: f64,
    gap: f64,
    relgap: Option<f64>,
    pinf: Option<f64>,
    dinf: Option<f64>,
}

fn matvec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).as_slice().to_vec()
}

fn matvec_t(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a.transpose() * DVector::from_column_slice(x))
        .as_slice()
        .to_vec()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

pub(crate) fn solve(r: &Reduced, settings: &SolverSettings) -> IpmOutput {
    let layout = &r.layout;
    let g = &r.g;
    let c = r.c.as_slice();
    let h = r.h.as_slice();
    let q = layout.total;
    let degree = layout.degree() as f64;
    let resx0 = norm(c).max(1.0);
    let resz0 = norm(h).max(1.0);
    let e = layout.identity();

    let fail = |x: Vec<f64>, it: usize| IpmOutput {
        status: SolveStatus::NumericalFailure,
        x: DVector::from_vec(x),
        iterations: it,
    };

    // Initial point from the W = I system.
    let ident = Scaling::identity(layout);
    let Some((kkt0, (x, sneg))) = Kkt::factor(g, layout, &ident, &vec![0.0; c.len()], h) else {
        return fail(vec![0.0; c.len()], 0);
    };
    let mut s: Vec<f64> = sneg.iter().map(|v| -v).collect();
    let negc: Vec<f64> = c.iter().map(|v| -v).collect();
    let (_, mut z) = kkt0.solve(&negc, &vec![0.0; q]);
    for v in [&mut s, &mut z] {
        let ts = layout.max_violation(v);
        let nrm = norm(v);
        if ts >= -1e-8 * nrm.max(1.0) {
            axpy(1.0 + ts, &e, v);
        }
    }
    let mut it = Iterate {
        x,
        s,
        z,
        tau: 1.0,
        kappa: 1.0,
    };
    let mut best_near: Option<(f64, Vec<f64>)> = None;
    let mut last_near = 0;

    for iter in 0..=settings.max_iters {
        let gx = matvec(g, &it.x);
        let gtz = matvec_t(g, &it.z);
        let cx = dot(c, &it.x);
        let hz = dot(h, &it.z);
        let rx: Vec<f64> = (0..c.len()).map(|i| gtz[i] + c[i] * it.tau).collect();
        let hrz: Vec<f64> = (0..q).map(|i| it.s[i] + gx[i]).collect();
        let rz: Vec<f64> = (0..q).map(|i| hrz[i] - h[i] * it.tau).collect();
        let rt = it.kappa + cx + hz;

        let gap = dot(&it.s, &it.z);
        let pcost = cx / it.tau;
        let dcost = -hz / it.tau;
        let res = Residuals {
            pres: norm(&rz) / it.tau / resz0,
            dres: norm(&rx) / it.tau / resx0,
            gap,
            relgap: if pcost < 0.0 {
                Some(gap / -pcost)
            } else if dcost > 0.0 {
                Some(gap / dcost)
            } else {
                None
            },
            pinf: (hz < 0.0).then(|| norm(&gtz) / resx0 / -hz),
            dinf: (cx < 0.0).then(|| norm(&hrz) / resz0 / -cx),
        };
        let gap_scaled = res.gap / (it.tau * it.tau);
        let gap_ok = |tol_abs: f64, tol_rel: f64| {
            gap_scaled <= tol_abs || res.relgap.is_some_and(|g| g / it.tau.powi(2) <= tol_rel)
        };

        let unscaled = |x: &[f64], tau: f64| x.iter().map(|v| v / tau).collect::<Vec<f64>>();
        // Round-off can push a converged iterate off the cone; such a point
        // is never reported.
        let interior = layout.max_violation(&it.s) <= 0.0 && layout.max_violation(&it.z) <= 0.0;
        if interior
            && res.pres <= settings.feastol
            && res.dres <= settings.feastol
            && gap_ok(settings.abstol, settings.reltol)
        {
            return IpmOutput {
                status: SolveStatus::Optimal,
                x: DVector::from_vec(unscaled(&it.x, it.tau)),
                iterations: iter,
            };
        }
        if res.pinf.is_some_and(|v| v <= settings.feastol) {
            return IpmOutput {
                status: SolveStatus::Infeasible,
                x: DVector::from_vec(it.x),
                iterations: iter,
            };
        }
        if res.dinf.is_some_and(|v| v <= settings.feastol) {
            return IpmOutput {
                status: SolveStatus::Unbounded,
                x: DVector::from_vec(it.x),
                iterations: iter,
            };
        }
        let near_tol = 10.0 * settings.feastol;
        if interior
            && res.pres <= near_tol
            && res.dres <= near_tol
            && gap_ok(10.0 * settings.abstol, 10.0 * settings.reltol)
        {
            let score = res.pres.max(res.dres);
            if best_near.as_ref().is_none_or(|(b, _)| score < *b) {
                best_near = Some((score, unscaled(&it.x, it.tau)));
                last_near = iter;
            }
        }
        if best_near.is_some() && iter - last_near >= STALL_ITERS {
            break;
        }
        if iter == settings.max_iters {
            break;
        }

        let Ok(w) = Scaling::compute(layout, &it.s, &it.z) else {
            break;
        };
        let Some((kkt, (x2, z2))) = Kkt::factor(g, layout, &w, &negc, h) else {
            break;
        };
        let denom_base = dot(c, &x2) + dot(h, &z2);

        let mu = (dot(&w.lambda, &w.lambda) + it.tau * it.kappa) / (degree + 1.0);
        let lambda_sq = layout.jordan(&w.lambda, &w.lambda);

        // Solves the Newton system for the given complementarity right-hand
        // sides `ds_rhs = lambda \ r4` and `dk_rhs = r5` and residual weight.
        let direction = |eta: f64, ds_rhs: &[f64], dk_rhs: f64| {
            let f = -(1.0 - eta);
            let r1: Vec<f64> = rx.iter().map(|v| f * v).collect();
            let r2: Vec<f64> = rz.iter().map(|v| f * v).collect();
            let r3 = f * rt;
            let wt_ds = w.wt(layout, ds_rhs);
            let bz: Vec<f64> = (0..q).map(|i| r2[i] - wt_ds[i]).collect();
            let (x1, z1) = kkt.solve(&r1, &bz);
            let dtau = (r3 - dot(c, &x1) - dot(h, &z1) - dk_rhs / it.tau)
                / (denom_base - it.kappa / it.tau);
            let mut dx = x1;
            axpy(dtau, &x2, &mut dx);
            let mut dz = z1;
            axpy(dtau, &z2, &mut dz);
            let wdz = w.w(layout, &dz);
            let ds_scaled: Vec<f64> = (0..q).map(|i| ds_rhs[i] - wdz[i]).collect();
            let ds = w.wt(layout, &ds_scaled);
            let dkappa = (dk_rhs - it.kappa * dtau) / it.tau;
            (dx, dz, ds, dtau, dkappa, ds_scaled, wdz)
        };
        let max_step = |ds_scaled: &[f64], wdz: &[f64], dtau: f64, dkappa: f64| {
            let mut a = w.max_step(layout, ds_scaled).min(w.max_step(layout, wdz));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // predictor
        let aff_rhs: Vec<f64> = w.lambda.iter().map(|v| -v).collect();
        let (_, _, _, dtau_a, dkappa_a, dss_a, wdz_a) =
            direction(0.0, &aff_rhs, -it.tau * it.kappa);
        let alpha_aff = max_step(&dss_a, &wdz_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // corrector
        let corr = layout.jordan(&dss_a, &wdz_a);
        let r4: Vec<f64> = (0..q)
            .map(|i| -lambda_sq[i] + sigma * mu * e[i] - corr[i])
            .collect();
        let ds_rhs = w.lambda_div(layout, &r4);
        let r5 = -it.tau * it.kappa + sigma * mu - dtau_a * dkappa_a;
        let (dx, dz, ds, dtau, dkappa, dss, wdz) = direction(sigma, &ds_rhs, r5);
        let amax = max_step(&dss, &wdz, dtau, dkappa);
        let alpha = (STEP * amax).min(1.0);
        if !(alpha > 0.0) || !alpha.is_finite() {
            break;
        }

        axpy(alpha, &dx, &mut it.x);
        axpy(alpha, &dz, &mut it.z);
        axpy(alpha, &ds, &mut it.s);
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;
        if !(it.tau > 0.0 && it.kappa > 0.0) || it.x.iter().any(|v| !v.is_finite()) {
            break;
        }
    }

    match best_near {
        Some((_, x)) => IpmOutput {
            status: SolveStatus::Optimal,
            x: DVector::from_vec(x),
            iterations: settings.max_iters,
        },
        None => fail(
            it.x.iter().map(|v| v / it.tau).collect(),
            settings.max_iters,
        ),
    }
}
