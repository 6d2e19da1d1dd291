//! Robust design against twin approximation errors in the user-1 signal
//! constraint.
//!
//! The stacked error `vec(dUps^H)` (restricted to the first `b` blocks) is
//! modeled as `CN(0, Sigma)`. With a whitening `T` (`T Sigma T^H = I`) the
//! perturbed signal power minus its requirement is a quadratic form
//! `x^H U x + 2 Re(u^H x) + u0` in a standard complex Gaussian `x`, and the
//! chance constraint `Pr{f(x) >= 0} >= 1 - rho` is replaced by the convex
//! Bernstein-type restriction with slacks `x, y`:
//!
//! ```text
//! tr U - sqrt(2 ln(1/rho)) x + ln(rho) y + u0 >= 0
//! || [hvec(U); sqrt2 Re u; sqrt2 Im u] || <= x
//! y I + U >= 0,  y >= 0
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{self, AffineExpr, ConicProgram, MatVar, ScalarVar, Sense, Sign};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    c64, check_psd_spectrum, eigh, ensure_hermitian, hermitian_part, hvec, hvec_len, inv_sqrt_psd,
    psd_factor, randn_cvector, trace, unhvec, CMatrix, CVector, C64,
};
use crate::optimizer::{ao_core, AoOptions, DesignSolution, DesignTargets, UserOne};
use crate::scenario::ChannelSet;
use crate::transform::{
    beam_gram, bernstein_coefficients, bernstein_params, bernstein_phase_coefficients,
    build_upsilon, BernsteinCoefficients, BernsteinParams, ErrorScope,
};

pub const DEFAULT_PRIOR: f64 = 1e-6;

/// Second-order statistics of `vec(dUps^H)`; the mean is taken as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStatistics {
    pub sigma: CMatrix,
    pub n: usize,
}

impl ErrorStatistics {
    /// `n = 0` with the prior `DEFAULT_PRIOR * I`.
    pub fn new(dim: usize) -> Self {
        Self::with_prior(CMatrix::identity(dim, dim) * c64(DEFAULT_PRIOR, 0.0))
    }

    pub fn with_prior(sigma: CMatrix) -> Self {
        Self { sigma, n: 0 }
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_square() || self.sigma.nrows() == 0 {
            return Err(invalid("error covariance must be square and nonempty"));
        }
        ensure_hermitian(&self.sigma, "error covariance")?;
        check_psd_spectrum(&eigh(&self.sigma).0)
    }
}

/// Error vector `vec` of the first `dim / N_t` columns of `dUps^H`.
pub fn error_vector(delta_ups: &CMatrix, dim: usize) -> Result<CVector> {
    let (mp1, nt) = delta_ups.shape();
    if nt == 0 || !dim.is_multiple_of(nt) || dim / nt == 0 || dim / nt > mp1 {
        return Err(invalid(format!(
            "error dimension {dim} does not fit a {mp1}x{nt} stacked channel"
        )));
    }
    let b = dim / nt;
    let xh = delta_ups.adjoint();
    Ok(CVector::from_column_slice(
        xh.columns(0, b).into_owned().as_slice(),
    ))
}

/// Inverse of [`error_vector`]: the stacked error with `m_plus_1` blocks.
pub fn delta_from_vector(v: &CVector, nt: usize, m_plus_1: usize) -> CMatrix {
    let b = v.len() / nt;
    let mut out = CMatrix::zeros(m_plus_1, nt);
    let xh = CMatrix::from_column_slice(nt, b, v.as_slice());
    out.rows_mut(0, b).copy_from(&xh.adjoint());
    out
}

/// One step of the streaming sample covariance.
pub fn update_covariance(st: &ErrorStatistics, delta_ups: &CMatrix) -> Result<ErrorStatistics> {
    let v = error_vector(delta_ups, st.dim())?;
    let n = st.n + 1;
    let w = 1.0 / n as f64;
    let sigma = &st.sigma * c64(1.0 - w, 0.0) + (&v * v.adjoint()) * c64(w, 0.0);
    Ok(ErrorStatistics {
        sigma: hermitian_part(&sigma),
        n,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Whitening {
    #[default]
    Zca,
    Cholesky,
    Pca,
}

/// `T` with `T (Sigma + reg I) T^H = I`.
pub fn whitening(sigma: &CMatrix, kind: Whitening, reg: f64) -> Result<CMatrix> {
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(invalid(format!(
            "regularizer must be finite and nonnegative, got {reg}"
        )));
    }
    ensure_hermitian(sigma, "whitening")?;
    let (w, v) = eigh(sigma);
    check_psd_spectrum(&w)?;
    let lmax = w.max();
    if reg == 0.0 && !(w.min() > 1e-12 * lmax) {
        return Err(Error::NotInvertible(
            "covariance is rank deficient and reg = 0".into(),
        ));
    }
    let n = w.len();
    match kind {
        Whitening::Zca => inv_sqrt_psd(sigma, reg),
        Whitening::Pca => {
            let mut t = v.adjoint();
            for (i, &l) in w.iter().enumerate() {
                t.row_mut(i).scale_mut(1.0 / (l.max(0.0) + reg).sqrt());
            }
            Ok(t)
        }
        Whitening::Cholesky => {
            let s = hermitian_part(sigma) + CMatrix::identity(n, n) * c64(reg, 0.0);
            let l = nalgebra::Cholesky::new(s)
                .ok_or_else(|| Error::NotInvertible("covariance has no Cholesky factor".into()))?
                .l();
            l.try_inverse()
                .ok_or_else(|| Error::NotInvertible("Cholesky factor is singular".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustOptions {
    pub rho: f64,
    pub whitening: Whitening,
    /// Regularizer relative to `tr(Sigma) / dim`.
    pub reg: f64,
    /// Window (in blocks) of the learning convergence gate.
    pub conv_window: usize,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self {
            rho: 0.05,
            whitening: Whitening::Zca,
            reg: 1e-8,
            conv_window: 10,
        }
    }
}

impl RobustOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.reg >= 0.0) || !self.reg.is_finite() || self.conv_window == 0 {
            return Err(invalid("need reg >= 0 and conv_window >= 1"));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        kappa(self.rho)
    }
}

pub fn kappa(rho: f64) -> f64 {
    (2.0 * (1.0 / rho).ln()).sqrt()
}

/// `||[hvec(U); sqrt2 u]||`.
fn soc_norm(p: &BernsteinParams) -> f64 {
    (p.u_mat.norm_squared() + 2.0 * p.u_vec.norm_squared()).sqrt()
}

/// Bernstein margin with the slacks at their smallest values:
/// `tr U - kappa ||(U, u)|| + ln(rho) lambda_max^+(-U) + u0`. Nonnegative
/// means the restriction holds.
pub fn bernstein_margin(p: &BernsteinParams, rho: f64) -> f64 {
    let (w, _) = eigh(&p.u_mat);
    let lam = (-w.min()).max(0.0);
    trace(&p.u_mat).re - kappa(rho) * soc_norm(p) + rho.ln() * lam + p.u0
}

/// The same margin computed by solving for the slacks `x, y` as a conic
/// program.
pub fn bernstein_slack_margin(p: &BernsteinParams, rho: f64) -> Result<f64> {
    let d = p.u_mat.nrows();
    let mut prog = ConicProgram::new();
    let x = prog.scalar_var("x", Sign::NonNeg);
    let y = prog.scalar_var("y", Sign::NonNeg);
    let z = prog.matrix_var("Z", d, true);
    let mut rows: Vec<AffineExpr> = hvec(&p.u_mat)
        .into_iter()
        .map(AffineExpr::constant)
        .collect();
    let s2 = std::f64::consts::SQRT_2;
    for a in 0..d {
        rows.push(AffineExpr::constant(s2 * p.u_vec[a].re));
        rows.push(AffineExpr::constant(s2 * p.u_vec[a].im));
    }
    prog.soc(rows, AffineExpr::new().scalar(x, 1.0));
    let eye = hvec(&CMatrix::identity(d, d));
    for (k, uk) in hvec(&p.u_mat).into_iter().enumerate() {
        prog.constrain(
            AffineExpr::new().mat(z, basis(d, k)).scalar(y, -eye[k]),
            Sense::Eq,
            uk,
        );
    }
    prog.minimize(AffineExpr::new().scalar(x, kappa(rho)).scalar(y, -rho.ln()));
    let r = conic::solve(&prog)?;
    if !r.is_optimal() {
        return Err(Error::StepInfeasible {
            step: "bernstein slack",
            status: r.status,
        });
    }
    Ok(trace(&p.u_mat).re + p.u0 - r.objective)
}

/// Hermitian `B_k` with `tr(B_k Z) = hvec(Z)_k`.
fn basis(n: usize, k: usize) -> CMatrix {
    let mut e = vec![0.0; hvec_len(n)];
    e[k] = 1.0;
    unhvec(&e, n)
}

/// Hermitian coefficient `K` with `tr(X K) = hvec(U(X))_k`, where
/// `U(X)_ab = tr(X M_ab)`.
fn hvec_coefficient(coeffs: &BernsteinCoefficients, k: usize) -> CMatrix {
    let d = coeffs.dim;
    let b = basis(d, k);
    let mut acc = CMatrix::zeros(coeffs.c0.nrows(), coeffs.c0.ncols());
    for a in 0..d {
        for c in 0..d {
            let w = b[(c, a)];
            if w != C64::new(0.0, 0.0) {
                acc += coeffs.m(a, c) * w;
            }
        }
    }
    hermitian_part(&acc)
}

/// Handles to the slack variables added by [`bernstein_restrict`].
#[derive(Clone, Copy, Debug)]
pub struct BernsteinSlacks {
    pub x: ScalarVar,
    pub y: ScalarVar,
    /// `Z = y I + U`, absent when `U` is PSD by construction.
    pub z: Option<MatVar>,
}

/// Adds the three restriction constraints for
/// `f = scale * (x^H U x + 2 Re u^H x + u0) - tau1 eps1`, where `(U, u, u0)`
/// are the linear functions of `var` given by `coeffs` and `eps1` is the
/// (normalized) user-1 interference-plus-noise slack.
///
/// With `u_psd` the caller asserts that `U` is PSD for every feasible value
/// of `var`; then `y I + U >= 0` holds for any `y >= 0` and is not emitted.
#[allow(clippy::too_many_arguments)]
pub fn bernstein_restrict(
    p: &mut ConicProgram,
    var: MatVar,
    coeffs: &BernsteinCoefficients,
    scale: f64,
    eps1: ScalarVar,
    tau1: f64,
    rho: f64,
    u_psd: bool,
) -> BernsteinSlacks {
    let d = coeffs.dim;
    let sc = c64(scale, 0.0);
    let x = p.scalar_var("bernstein_x", Sign::NonNeg);
    let y = p.scalar_var("bernstein_y", Sign::NonNeg);

    let mut tr_u = CMatrix::zeros(coeffs.c0.nrows(), coeffs.c0.ncols());
    for a in 0..d {
        tr_u += coeffs.m(a, a);
    }
    let lin = hermitian_part(&(tr_u + &coeffs.c0)) * sc;
    p.constrain(
        AffineExpr::new()
            .mat(var, lin)
            .scalar(eps1, -tau1)
            .scalar(x, -kappa(rho))
            .scalar(y, rho.ln()),
        Sense::Ge,
        0.0,
    );

    let u_rows: Vec<CMatrix> = (0..hvec_len(d))
        .map(|k| hvec_coefficient(coeffs, k) * sc)
        .collect();
    let s2 = std::f64::consts::SQRT_2;
    let mut rows: Vec<AffineExpr> = u_rows
        .iter()
        .map(|k| AffineExpr::new().mat(var, k.clone()))
        .collect();
    for n in &coeffs.n {
        let re = hermitian_part(n) * c64(s2 * scale, 0.0);
        let im = hermitian_part(&(n * c64(0.0, -1.0))) * c64(s2 * scale, 0.0);
        rows.push(AffineExpr::new().mat(var, re));
        rows.push(AffineExpr::new().mat(var, im));
    }
    p.soc(rows, AffineExpr::new().scalar(x, 1.0));

    if u_psd {
        return BernsteinSlacks { x, y, z: None };
    }
    let z = p.matrix_var("bernstein_Z", d, true);
    let eye = hvec(&CMatrix::identity(d, d));
    for (k, uk) in u_rows.into_iter().enumerate() {
        p.constrain(
            AffineExpr::new()
                .mat(z, basis(d, k))
                .scalar(y, -eye[k])
                .mat(var, -uk),
            Sense::Eq,
            0.0,
        );
    }
    BernsteinSlacks { x, y, z: Some(z) }
}

/// Whitening and confidence level used by the robust AO.
#[derive(Clone, Debug)]
pub struct RobustModel {
    pub t: CMatrix,
    pub rho: f64,
}

impl RobustModel {
    pub fn new(st: &ErrorStatistics, ropt: &RobustOptions) -> Result<Self> {
        ropt.validate()?;
        st.validate()?;
        let d = st.dim();
        let reg = ropt.reg * trace(&st.sigma).re.max(0.0) / d as f64;
        Ok(Self {
            t: whitening(&st.sigma, ropt.whitening, reg)?,
            rho: ropt.rho,
        })
    }

    fn scope(&self, ups: &CMatrix) -> Result<ErrorScope> {
        let d = self.t.nrows();
        if d == ErrorScope::Direct.dim(ups) {
            Ok(ErrorScope::Direct)
        } else if d == ErrorScope::Full.dim(ups) {
            Ok(ErrorScope::Full)
        } else {
            Err(invalid(format!(
                "error dimension {d} matches neither the direct nor the full stacked channel"
            )))
        }
    }

    /// In the direct scope `U = S^H F S * E_00` with `E_00 = 1`, which is PSD
    /// whenever the beam Gram is.
    pub(crate) fn u_is_psd(&self, ups: &CMatrix) -> bool {
        matches!(self.scope(ups), Ok(ErrorScope::Direct))
    }

    pub(crate) fn beam_coefficients(
        &self,
        ups: &CMatrix,
        e: &CMatrix,
    ) -> Result<BernsteinCoefficients> {
        bernstein_coefficients(ups, e, &self.t, self.scope(ups)?)
    }

    pub(crate) fn phase_coefficients(
        &self,
        ups: &CMatrix,
        f: &CMatrix,
    ) -> Result<BernsteinCoefficients> {
        bernstein_phase_coefficients(ups, f, &self.t, self.scope(ups)?)
    }

    /// Robust user-1 signal power of the unit beam `w` (power scales it
    /// linearly).
    pub(crate) fn gain(&self, ups: &CMatrix, e: &CMatrix, w: &CVector) -> Result<f64> {
        let p = bernstein_params(ups, e, &beam_gram(w), &self.t, self.scope(ups)?)?;
        Ok(bernstein_margin(&p, self.rho))
    }
}

fn single_antenna(ch: &ChannelSet) -> Result<()> {
    if ch.h1.nrows() != 1 {
        return Err(invalid(
            "the robust design supports a single receive antenna",
        ));
    }
    Ok(())
}

pub fn robust_optimize(
    ch_dt: &ChannelSet,
    tg: &DesignTargets,
    st: &ErrorStatistics,
    opt: &AoOptions,
    ropt: &RobustOptions,
) -> Result<DesignSolution> {
    single_antenna(ch_dt)?;
    if st.sigma.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        // no observed error: the chance constraint is the nominal one
        ropt.validate()?;
        return ao_core(ch_dt, tg, opt, UserOne::Nominal);
    }
    let model = RobustModel::new(st, ropt)?;
    ao_core(ch_dt, tg, opt, UserOne::Robust(&model))
}

/// User-1 stacked channel `[h1; diag(g1) H_BR]`.
pub fn user1_stacked(ch: &ChannelSet) -> Result<CMatrix> {
    single_antenna(ch)?;
    Ok(build_upsilon(&ch.h1, &ch.g1, &ch.h_br)?.remove(0))
}

/// `CN(0, Sigma)` sampler for the stacked error.
#[derive(Clone, Debug)]
pub struct ErrorSampler {
    factor: CMatrix,
}

impl ErrorSampler {
    pub fn new(sigma: &CMatrix) -> Result<Self> {
        ensure_hermitian(sigma, "sampler covariance")?;
        check_psd_spectrum(&eigh(sigma).0)?;
        Ok(Self {
            factor: psd_factor(sigma),
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            factor: CMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        &self.factor * randn_cvector(rng, self.factor.ncols())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutageEstimate {
    pub outage1: f64,
    pub outage2: f64,
    /// Either user below target.
    pub outage: f64,
    /// Standard error of `outage`.
    pub std_err: f64,
    pub samples: usize,
}

/// SE tolerance used by every outage decision.
pub const OUTAGE_SLACK: f64 = 1e-9;

/// Outage of `sol` over sampled real channels `Ups_1 = Ups~_1 + dUps`;
/// only user 1's channel carries error.
pub fn monte_carlo_outage(
    ch_dt: &ChannelSet,
    sol: &DesignSolution,
    sampler: &ErrorSampler,
    tg: &DesignTargets,
    n_samples: usize,
    seed: u64,
) -> Result<OutageEstimate> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let ups = user1_stacked(ch_dt)?;
    let (mp1, nt) = ups.shape();
    if !sampler.dim().is_multiple_of(nt) || sampler.dim() / nt > mp1 {
        return Err(invalid(
            "sampler dimension does not fit the stacked channel",
        ));
    }
    let t = lift_row(&sol.theta);
    let (_, h2) = crate::optimizer::effective_channels(ch_dt, &sol.theta);
    let se2 = (1.0
        + (&h2 * &sol.f2).norm_squared() / ((&h2 * &sol.f1).norm_squared() + tg.sigma2_sq))
        .log2();
    let out2 = se2 < tg.gamma2 - OUTAGE_SLACK;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut n1, mut n2, mut n_any) = (0usize, 0usize, 0usize);
    for _ in 0..n_samples {
        let delta = delta_from_vector(&sampler.sample(&mut rng), nt, mp1);
        let h1 = &t * (&ups + delta);
        let se1 = (1.0
            + (&h1 * &sol.f1).norm_squared() / ((&h1 * &sol.f2).norm_squared() + tg.sigma1_sq))
            .log2();
        let out1 = se1 < tg.gamma1 - OUTAGE_SLACK;
        n1 += out1 as usize;
        n2 += out2 as usize;
        n_any += (out1 || out2) as usize;
    }
    let n = n_samples as f64;
    let p = n_any as f64 / n;
    Ok(OutageEstimate {
        outage1: n1 as f64 / n,
        outage2: n2 as f64 / n,
        outage: p,
        std_err: (p * (1.0 - p) / n).sqrt(),
        samples: n_samples,
    })
}

/// Row `[1, theta^T]`.
fn lift_row(theta: &CVector) -> nalgebra::RowDVector<C64> {
    let mut t = nalgebra::RowDVector::from_element(theta.len() + 1, c64(1.0, 0.0));
    for (k, &z) in theta.iter().enumerate() {
        t[k + 1] = z;
    }
    t
}

/// One coherence block: the twin's channels and the real channels that can
/// be acquired for learning.
#[derive(Clone, Debug)]
pub struct Block {
    pub dt: ChannelSet,
    pub real: ChannelSet,
}

#[derive(Debug)]
pub struct BlockOutcome {
    pub solution: std::result::Result<DesignSolution, String>,
    /// Statistics the block's design used.
    pub stats_n: usize,
    pub sigma_trace: f64,
    /// True once learning is frozen by the convergence gate.
    pub frozen: bool,
}

#[derive(Debug)]
pub struct LearningRun {
    pub blocks: Vec<BlockOutcome>,
    pub stats: ErrorStatistics,
}

/// Learning loop over a block stream: update the covariance from the block's
/// real channel until the convergence gate closes, then design robustly
/// with the current statistics. Runs to the end of the stream.
pub fn learning_run(
    stream: &[Block],
    tg: &DesignTargets,
    opt: &AoOptions,
    ropt: &RobustOptions,
    initial: ErrorStatistics,
) -> Result<LearningRun> {
    if stream.is_empty() {
        return Err(invalid("the block stream is empty"));
    }
    ropt.validate()?;
    let mut st = initial;
    let mut frozen = false;
    let mut traces: Vec<f64> = Vec::new();
    let mut powers: Vec<f64> = Vec::new();
    let mut blocks = Vec::with_capacity(stream.len());
    for (i, b) in stream.iter().enumerate() {
        if !frozen {
            let delta = user1_stacked(&b.real)? - user1_stacked(&b.dt)?;
            st = update_covariance(&st, &delta)?;
        }
        let opt_b = AoOptions {
            seed: opt.seed.wrapping_add(i as u64),
            ..opt.clone()
        };
        let solution = robust_optimize(&b.dt, tg, &st, &opt_b, ropt).map_err(|e| e.to_string());
        let tr = trace(&st.sigma).re;
        traces.push(tr);
        powers.push(
            solution
                .as_ref()
                .ok()
                .filter(|s| s.feasible)
                .map_or(f64::NAN, |s| s.power),
        );
        blocks.push(BlockOutcome {
            solution,
            stats_n: st.n,
            sigma_trace: tr,
            frozen,
        });
        if !frozen {
            frozen = gate_closed(&traces, &powers, ropt.conv_window);
        }
    }
    Ok(LearningRun { blocks, stats: st })
}

/// Relative change over the last `w` blocks below 1% for both the
/// covariance trace and the robust objective.
fn gate_closed(traces: &[f64], powers: &[f64], w: usize) -> bool {
    let n = traces.len();
    if n <= w {
        return false;
    }
    let rel = |now: f64, then: f64| (now - then).abs() / now.abs();
    rel(traces[n - 1], traces[n - 1 - w]) < 0.01 && rel(powers[n - 1], powers[n - 1 - w]) < 0.01
}
