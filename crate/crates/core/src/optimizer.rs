//! Power minimization under per-user SE targets by alternating optimization.
//!
//! User 1 is served by the BS (direct plus RIS-reflected path), user 2 only
//! through the RIS. With `tau_k = 2^gamma_k - 1` the subproblems are
//!
//! - beam step (E fixed): min tr F1 + tr F2 over PSD Grams and slacks eps_k
//!   with `|c2 f1|^2 + s2 <= eps2`, `|c2 f2|^2 >= tau2 eps2`,
//!   `|h1 f2|^2 + s1 <= eps1`, `|h1 f1|^2 >= tau1 eps1`;
//! - phase step (F fixed): the same constraints lifted in E with
//!   `diag(E) = 1`, minimizing eps1 + eps2 less a small reward on the
//!   normalized signal powers that fixes a unique optimal point.
//!
//! Each relaxed solution is turned into a rank-one design by Gaussian
//! randomization followed by exact two-user power control, so every accepted
//! design meets both SE targets on the design channels. Recovered phases are
//! then refined one element at a time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{self, randomize_rank1, AffineExpr, ConicProgram, RecoveryMode, Sense, Sign};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c64, dominant_eig, CMatrix, CVector};
use crate::robust::RobustModel;
use crate::scenario::ChannelSet;
use crate::transform::{build_upsilon, gram_for_beam, gram_for_phase, lift_phase};

#[derive(Clone, Debug, PartialEq)]
pub struct DesignTargets {
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl DesignTargets {
    pub fn new(gamma: f64, noise_power: f64) -> Self {
        Self {
            gamma1: gamma,
            gamma2: gamma,
            sigma1_sq: noise_power,
            sigma2_sq: noise_power,
        }
    }

    pub fn tau1(&self) -> f64 {
        self.gamma1.exp2() - 1.0
    }

    pub fn tau2(&self) -> f64 {
        self.gamma2.exp2() - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0)
            || !self.gamma1.is_finite()
            || !self.gamma2.is_finite()
        {
            return Err(invalid("SE targets must be finite and nonnegative"));
        }
        if !(self.sigma1_sq > 0.0 && self.sigma2_sq > 0.0) {
            return Err(invalid("noise powers must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DesignSolution {
    pub f1: CVector,
    pub f2: CVector,
    pub theta: CVector,
    pub eps1: f64,
    pub eps2: f64,
    pub power: f64,
    pub feasible: bool,
    pub iterations: usize,
    /// Power of the accepted design after each iteration (non-increasing).
    pub power_history: Vec<f64>,
    /// Why the run stopped.
    pub note: String,
}

impl DesignSolution {
    pub fn infeasible(nt: usize, m: usize, iterations: usize, note: impl Into<String>) -> Self {
        Self {
            f1: CVector::zeros(nt),
            f2: CVector::zeros(nt),
            theta: CVector::from_element(m, c64(1.0, 0.0)),
            eps1: f64::NAN,
            eps2: f64::NAN,
            power: f64::INFINITY,
            feasible: false,
            iterations,
            power_history: Vec::new(),
            note: note.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoOptions {
    pub max_iters: usize,
    /// Relative power improvement below which an iteration counts as stalled.
    pub rel_tol: f64,
    /// Consecutive stalled iterations that end the run.
    pub patience: usize,
    pub n_cand: usize,
    pub seed: u64,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            rel_tol: 1e-3,
            patience: 1,
            n_cand: 100,
            seed: 0,
        }
    }
}

impl AoOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.rel_tol > 0.0) || self.n_cand == 0 || self.patience == 0 {
            return Err(invalid(
                "need max_iters, patience, n_cand >= 1 and rel_tol > 0",
            ));
        }
        Ok(())
    }
}

/// `H_1 + G_1 diag(theta) H_BR` and `G_2 diag(theta) H_BR`.
pub fn effective_channels(ch: &ChannelSet, theta: &CVector) -> (CMatrix, CMatrix) {
    let scale = |g: &CMatrix| CMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * theta[j]);
    let h1 = &ch.h1 + scale(&ch.g1) * &ch.h_br;
    let h2 = scale(&ch.g2) * &ch.h_br;
    (h1, h2)
}

/// Achieved SE of both users on `ch` (bit/s/Hz).
pub fn effective_se(
    ch: &ChannelSet,
    f1: &CVector,
    f2: &CVector,
    theta: &CVector,
    tg: &DesignTargets,
) -> (f64, f64) {
    let (h1, h2) = effective_channels(ch, theta);
    let se = |h: &CMatrix, sig: &CVector, intf: &CVector, noise: f64| {
        (1.0 + (h * sig).norm_squared() / ((h * intf).norm_squared() + noise)).log2()
    };
    (se(&h1, f1, f2, tg.sigma1_sq), se(&h2, f2, f1, tg.sigma2_sq))
}

pub fn solution_se(ch: &ChannelSet, sol: &DesignSolution, tg: &DesignTargets) -> (f64, f64) {
    effective_se(ch, &sol.f1, &sol.f2, &sol.theta, tg)
}

/// How the user-1 signal constraint is modeled.
#[derive(Clone, Copy)]
pub(crate) enum UserOne<'a> {
    Nominal,
    Robust(&'a RobustModel),
}

#[derive(Clone, Debug)]
pub struct BeamStep {
    pub f1: CMatrix,
    pub f2: CMatrix,
    pub eps1: f64,
    pub eps2: f64,
}

#[derive(Clone, Debug)]
pub struct PhaseStep {
    pub e: CMatrix,
    pub eps1: f64,
    pub eps2: f64,
}

struct Stacked {
    ups1: Vec<CMatrix>,
    ups2: Vec<CMatrix>,
}

impl Stacked {
    fn new(ch: &ChannelSet) -> Result<Self> {
        ch.validate()?;
        let zero = CMatrix::zeros(ch.h1.nrows(), ch.h1.ncols());
        Ok(Self {
            ups1: build_upsilon(&ch.h1, &ch.g1, &ch.h_br)?,
            ups2: build_upsilon(&zero, &ch.g2, &ch.h_br)?,
        })
    }
}

const PHASE_TIE_BREAK: f64 = 1e-3;

fn step_status(step: &'static str, r: &conic::SolverResult) -> Result<()> {
    if r.is_optimal() {
        Ok(())
    } else {
        Err(Error::StepInfeasible {
            step,
            status: r.status,
        })
    }
}

pub fn solve_beam_step(ch: &ChannelSet, e: &CMatrix, tg: &DesignTargets) -> Result<BeamStep> {
    tg.validate()?;
    beam_step(&Stacked::new(ch)?, e, tg, UserOne::Nominal)
}

fn beam_step(st: &Stacked, e: &CMatrix, tg: &DesignTargets, user1: UserOne) -> Result<BeamStep> {
    let m1 = st.ups1[0].nrows();
    if e.shape() != (m1, m1) {
        return Err(invalid(format!(
            "lifted phase is {:?}, expected {m1}x{m1}",
            e.shape()
        )));
    }
    let nt = st.ups1[0].ncols();
    let (s1, s2) = (tg.sigma1_sq, tg.sigma2_sq);
    let a1 = gram_for_beam(&st.ups1, e);
    let a2 = gram_for_beam(&st.ups2, e);
    // F = F_hat / g keeps the normalized Grams O(1)
    let g = [a1.trace().re / s1, a2.trace().re / s2]
        .into_iter()
        .fold(0.0_f64, f64::max)
        / nt as f64;
    let g = if g > 0.0 { g } else { 1.0 };
    let c = |a: &CMatrix, s: f64| a * c64(1.0 / (s * g), 0.0);

    let mut p = ConicProgram::new();
    let f1 = p.matrix_var("F1", nt, true);
    let f2 = p.matrix_var("F2", nt, true);
    let e1 = p.scalar_var("eps1", Sign::Free);
    let e2 = p.scalar_var("eps2", Sign::Free);
    let eye = CMatrix::identity(nt, nt);
    p.constrain(
        AffineExpr::new()
            .mat(f1, c(&a2, s2))
            .scalar(e2, -1.0)
            .plus(1.0),
        Sense::Le,
        0.0,
    );
    p.constrain(
        AffineExpr::new().mat(f2, c(&a2, s2)).scalar(e2, -tg.tau2()),
        Sense::Ge,
        0.0,
    );
    p.constrain(
        AffineExpr::new()
            .mat(f2, c(&a1, s1))
            .scalar(e1, -1.0)
            .plus(1.0),
        Sense::Le,
        0.0,
    );
    match user1 {
        UserOne::Nominal => {
            p.constrain(
                AffineExpr::new().mat(f1, c(&a1, s1)).scalar(e1, -tg.tau1()),
                Sense::Ge,
                0.0,
            );
        }
        UserOne::Robust(model) => {
            let coeffs = model.beam_coefficients(&st.ups1[0], e)?;
            let psd = model.u_is_psd(&st.ups1[0]);
            crate::robust::bernstein_restrict(
                &mut p,
                f1,
                &coeffs,
                1.0 / (s1 * g),
                e1,
                tg.tau1(),
                model.rho,
                psd,
            );
        }
    }
    p.constrain(AffineExpr::new().scalar(e1, 1.0), Sense::Ge, 1.0);
    p.constrain(AffineExpr::new().scalar(e2, 1.0), Sense::Ge, 1.0);
    p.minimize(AffineExpr::new().mat(f1, eye.clone()).mat(f2, eye));
    let r = conic::solve(&p)?;
    step_status("beam", &r)?;
    let unscale = |x: &CMatrix| x * c64(1.0 / g, 0.0);
    Ok(BeamStep {
        f1: unscale(r.matrix(f1)),
        f2: unscale(r.matrix(f2)),
        eps1: r.scalar(e1) * s1,
        eps2: r.scalar(e2) * s2,
    })
}

pub fn solve_phase_step(
    ch: &ChannelSet,
    f1: &CMatrix,
    f2: &CMatrix,
    tg: &DesignTargets,
) -> Result<PhaseStep> {
    tg.validate()?;
    phase_step(&Stacked::new(ch)?, f1, f2, tg, UserOne::Nominal)
}

fn phase_step(
    st: &Stacked,
    f1: &CMatrix,
    f2: &CMatrix,
    tg: &DesignTargets,
    user1: UserOne,
) -> Result<PhaseStep> {
    let nt = st.ups1[0].ncols();
    if f1.shape() != (nt, nt) || f2.shape() != (nt, nt) {
        return Err(invalid("beam Grams do not match the transmit dimension"));
    }
    let n = st.ups1[0].nrows();
    let (s1, s2) = (tg.sigma1_sq, tg.sigma2_sq);
    let c = |a: CMatrix, s: f64| a * c64(1.0 / s, 0.0);

    let mut p = ConicProgram::new();
    let e = p.matrix_var("E", n, true);
    let e1 = p.scalar_var("eps1", Sign::Free);
    let e2 = p.scalar_var("eps2", Sign::Free);
    p.constrain(
        AffineExpr::new()
            .mat(e, c(gram_for_phase(&st.ups2, f1), s2))
            .scalar(e2, -1.0)
            .plus(1.0),
        Sense::Le,
        0.0,
    );
    p.constrain(
        AffineExpr::new()
            .mat(e, c(gram_for_phase(&st.ups2, f2), s2))
            .scalar(e2, -tg.tau2()),
        Sense::Ge,
        0.0,
    );
    p.constrain(
        AffineExpr::new()
            .mat(e, c(gram_for_phase(&st.ups1, f2), s1))
            .scalar(e1, -1.0)
            .plus(1.0),
        Sense::Le,
        0.0,
    );
    match user1 {
        UserOne::Nominal => {
            p.constrain(
                AffineExpr::new()
                    .mat(e, c(gram_for_phase(&st.ups1, f1), s1))
                    .scalar(e1, -tg.tau1()),
                Sense::Ge,
                0.0,
            );
        }
        UserOne::Robust(model) => {
            let coeffs = model.phase_coefficients(&st.ups1[0], f1)?;
            let psd = model.u_is_psd(&st.ups1[0]);
            crate::robust::bernstein_restrict(
                &mut p,
                e,
                &coeffs,
                1.0 / s1,
                e1,
                tg.tau1(),
                model.rho,
                psd,
            );
        }
    }
    for i in 0..n {
        let mut d = CMatrix::zeros(n, n);
        d[(i, i)] = c64(1.0, 0.0);
        p.constrain(AffineExpr::new().mat(e, d), Sense::Eq, 1.0);
    }
    p.constrain(AffineExpr::new().scalar(e1, 1.0), Sense::Ge, 1.0);
    p.constrain(AffineExpr::new().scalar(e2, 1.0), Sense::Ge, 1.0);
    let smax = s1.max(s2);
    // Small reward on the normalized signal powers picks a unique point of the
    // otherwise flat optimal face, so the relaxed solution does not depend on
    // where the interior-point path lands.
    let mut obj = AffineExpr::new()
        .scalar(e1, s1 / smax)
        .scalar(e2, s2 / smax);
    for g in [gram_for_phase(&st.ups1, f1), gram_for_phase(&st.ups2, f2)] {
        let tr = g.trace().re;
        if tr > 0.0 {
            obj = obj.mat(e, g * c64(-PHASE_TIE_BREAK / tr, 0.0));
        }
    }
    p.minimize(obj);
    let r = conic::solve(&p)?;
    step_status("phase", &r)?;
    Ok(PhaseStep {
        e: r.matrix(e).clone(),
        eps1: r.scalar(e1) * s1,
        eps2: r.scalar(e2) * s2,
    })
}

/// Minimal powers `(p1, p2)` meeting both SINR targets with equality (times
/// a tiny safety margin), given the user-1 signal gain `a1`, the user-2
/// signal gain `a2` and the cross gains `b1` (beam 2 at user 1) and `b2`
/// (beam 1 at user 2).
pub fn power_control(a1: f64, b1: f64, a2: f64, b2: f64, tg: &DesignTargets) -> Option<(f64, f64)> {
    const MARGIN: f64 = 1.0 + 1e-7;
    let (t1, t2) = (tg.tau1(), tg.tau2());
    let (n1, n2) = (tg.sigma1_sq, tg.sigma2_sq);
    let (p1, p2) = match (t1 > 0.0, t2 > 0.0) {
        (false, false) => (0.0, 0.0),
        (true, false) => (a1 > 0.0).then(|| (t1 * n1 / a1, 0.0))?,
        (false, true) => (a2 > 0.0).then(|| (0.0, t2 * n2 / a2))?,
        (true, true) => {
            let det = a1 * a2 - t1 * t2 * b1 * b2;
            if !(det > 0.0) || !(a1 > 0.0) || !(a2 > 0.0) {
                return None;
            }
            (
                (t1 * n1 * a2 + t1 * b1 * t2 * n2) / det,
                (a1 * t2 * n2 + t2 * b2 * t1 * n1) / det,
            )
        }
    };
    (p1.is_finite() && p2.is_finite()).then_some((p1 * MARGIN, p2 * MARGIN))
}

#[derive(Clone, Debug)]
struct Candidate {
    w1: CVector,
    w2: CVector,
    theta: CVector,
    p1: f64,
    p2: f64,
    eps1: f64,
    eps2: f64,
    margin: f64,
}

impl Candidate {
    fn power(&self) -> f64 {
        self.p1 + self.p2
    }

    fn better_than(&self, other: &Candidate) -> bool {
        let (a, b) = (self.power(), other.power());
        if (a - b).abs() <= 1e-12 * a.max(b) {
            // never trade a higher power for margin, so the record stays monotone
            a <= b && self.margin > other.margin
        } else {
            a < b
        }
    }
}

struct Evaluator<'a> {
    ch: &'a ChannelSet,
    st: &'a Stacked,
    tg: &'a DesignTargets,
    user1: UserOne<'a>,
}

fn unit_or_zero(v: CVector) -> CVector {
    let n = v.norm();
    if n > 0.0 {
        v / c64(n, 0.0)
    } else {
        v
    }
}

impl Evaluator<'_> {
    fn candidate(&self, w1: &CVector, w2: &CVector, theta: &CVector) -> Option<Candidate> {
        let (h1, h2) = effective_channels(self.ch, theta);
        let a1 = match self.user1 {
            UserOne::Nominal => (&h1 * w1).norm_squared(),
            UserOne::Robust(model) => model.gain(&self.st.ups1[0], &lift_phase(theta), w1).ok()?,
        };
        let b1 = (&h1 * w2).norm_squared();
        let a2 = (&h2 * w2).norm_squared();
        let b2 = (&h2 * w1).norm_squared();
        let (p1, p2) = power_control(a1, b1, a2, b2, self.tg)?;
        let eps1 = p2 * b1 + self.tg.sigma1_sq;
        let eps2 = p1 * b2 + self.tg.sigma2_sq;
        let sinr1 = if eps1 > 0.0 { p1 * a1 / eps1 } else { 0.0 };
        let sinr2 = p2 * a2 / eps2;
        let margin =
            ((1.0 + sinr1).log2() - self.tg.gamma1).min((1.0 + sinr2).log2() - self.tg.gamma2);
        Some(Candidate {
            w1: w1.clone(),
            w2: w2.clone(),
            theta: theta.clone(),
            p1,
            p2,
            eps1,
            eps2,
            margin,
        })
    }

    fn split(&self, v: &CVector) -> (CVector, CVector) {
        let nt = self.ch.n_tx();
        (
            unit_or_zero(v.rows(0, nt).into_owned()),
            unit_or_zero(v.rows(nt, nt).into_owned()),
        )
    }

    /// Rank-one beams from relaxed Grams for fixed `theta`.
    fn recover_beams(
        &self,
        step: &BeamStep,
        theta: &CVector,
        n_cand: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<Candidate> {
        let nt = self.ch.n_tx();
        let mut block = CMatrix::zeros(2 * nt, 2 * nt);
        block.view_mut((0, 0), (nt, nt)).copy_from(&step.f1);
        block.view_mut((nt, nt), (nt, nt)).copy_from(&step.f2);
        let eval = |v: &CVector| {
            let (w1, w2) = self.split(v);
            self.candidate(&w1, &w2, theta)
        };
        let rec = randomize_rank1(
            &block,
            RecoveryMode::Beam,
            n_cand,
            rng,
            |v| eval(v).is_some(),
            |v| eval(v).map_or(f64::NEG_INFINITY, |c| -c.power() + 1e-15 * c.margin),
        );
        match rec {
            Ok(r) => eval(&r.vector),
            Err(_) => {
                // per-user principal directions
                let (_, v1) = dominant_eig(&step.f1);
                let (_, v2) = dominant_eig(&step.f2);
                self.candidate(&unit_or_zero(v1), &unit_or_zero(v2), theta)
            }
        }
    }

    fn recover_phases(
        &self,
        e: &CMatrix,
        w1: &CVector,
        w2: &CVector,
        n_cand: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<Candidate> {
        let eval = |t: &CVector| self.candidate(w1, w2, t);
        let rec = randomize_rank1(
            e,
            RecoveryMode::Phase,
            n_cand,
            rng,
            |t| eval(t).is_some(),
            |t| eval(t).map_or(f64::NEG_INFINITY, |c| -c.power() + 1e-15 * c.margin),
        )
        .ok()?;
        eval(&rec.vector).map(|c| self.polish_phases(c))
    }

    /// Coordinate descent over single phases, each by a coarse scan of the
    /// circle followed by golden-section refinement. Never increases power.
    fn polish_phases(&self, mut best: Candidate) -> Candidate {
        use std::f64::consts::TAU;
        let (w1, w2) = (best.w1.clone(), best.w2.clone());
        let eval = |t: &CVector| self.candidate(&w1, &w2, t);
        for _ in 0..POLISH_SWEEPS {
            let start = best.power();
            for m in 0..best.theta.len() {
                let base = best.theta[m].arg();
                let at = |phi: f64, theta: &CVector| {
                    let mut t = theta.clone();
                    t[m] = num_complex::Complex64::from_polar(1.0, phi);
                    t
                };
                let cost =
                    |phi: f64| eval(&at(phi, &best.theta)).map_or(f64::INFINITY, |c| c.power());
                let step = TAU / POLISH_GRID as f64;
                let (mut k_best, mut f_best) = (0, cost(base));
                for k in 1..POLISH_GRID {
                    let f = cost(base + k as f64 * step);
                    if f < f_best {
                        (k_best, f_best) = (k, f);
                    }
                }
                let centre = base + k_best as f64 * step;
                let (mut lo, mut hi) = (centre - step, centre + step);
                let g = (5f64.sqrt() - 1.0) / 2.0;
                let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
                let (mut f1, mut f2) = (cost(x1), cost(x2));
                for _ in 0..POLISH_GOLDEN {
                    if f1 <= f2 {
                        (hi, x2, f2) = (x2, x1, f1);
                        x1 = hi - g * (hi - lo);
                        f1 = cost(x1);
                    } else {
                        (lo, x1, f1) = (x1, x2, f2);
                        x2 = lo + g * (hi - lo);
                        f2 = cost(x2);
                    }
                }
                for phi in [0.5 * (lo + hi), centre] {
                    if let Some(c) = eval(&at(phi, &best.theta)) {
                        if c.better_than(&best) {
                            best = c;
                        }
                    }
                }
            }
            if (start - best.power()) <= 1e-9 * start {
                break;
            }
        }
        best
    }
}

const POLISH_SWEEPS: usize = 3;
const POLISH_GRID: usize = 16;
const POLISH_GOLDEN: usize = 24;

fn iteration_rng(seed: u64, iter: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(iter as u64),
    );
    rng.set_stream(stream);
    rng
}

fn random_theta(m: usize, seed: u64, attempt: usize) -> CVector {
    use rand::Rng;
    let mut rng = iteration_rng(seed, attempt, 7);
    CVector::from_fn(m, |_, _| {
        num_complex::Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
    })
}

pub fn alternating_optimize(
    ch: &ChannelSet,
    tg: &DesignTargets,
    opt: &AoOptions,
) -> Result<DesignSolution> {
    ao_core(ch, tg, opt, UserOne::Nominal)
}

pub(crate) fn ao_core(
    ch: &ChannelSet,
    tg: &DesignTargets,
    opt: &AoOptions,
    user1: UserOne,
) -> Result<DesignSolution> {
    tg.validate()?;
    opt.validate()?;
    let st = Stacked::new(ch)?;
    let (nt, m) = (ch.n_tx(), ch.n_ris());
    let ev = Evaluator {
        ch,
        st: &st,
        tg,
        user1,
    };

    if tg.tau1() == 0.0 && tg.tau2() == 0.0 {
        let theta = CVector::from_element(m, c64(1.0, 0.0));
        let mut sol = DesignSolution::infeasible(nt, m, 1, "zero targets");
        sol.theta = theta;
        sol.eps1 = tg.sigma1_sq;
        sol.eps2 = tg.sigma2_sq;
        sol.power = 0.0;
        sol.feasible = true;
        sol.power_history = vec![0.0];
        return Ok(sol);
    }

    // initial phases: all ones, then random-phase retries
    let mut theta = CVector::from_element(m, c64(1.0, 0.0));
    let mut first = None;
    let mut last_err = None;
    for attempt in 0..=3 {
        if attempt > 0 {
            theta = random_theta(m, opt.seed, attempt);
        }
        match beam_step(&st, &lift_phase(&theta), tg, user1) {
            Ok(step) => {
                first = Some(step);
                break;
            }
            Err(e @ Error::StepInfeasible { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let Some(mut step) = first else {
        let note = last_err.map_or_else(String::new, |e| e.to_string());
        return Ok(DesignSolution::infeasible(
            nt,
            m,
            1,
            format!("initial beam step failed: {note}"),
        ));
    };

    let mut best: Option<Candidate> = None;
    let mut history = Vec::new();
    let mut note = String::from("max iterations reached");
    let mut iterations = 0;
    let mut stalled = 0;
    for iter in 0..opt.max_iters {
        iterations = iter + 1;
        if iter > 0 {
            match beam_step(&st, &lift_phase(&theta), tg, user1) {
                Ok(s) => step = s,
                Err(e) => {
                    note = format!("beam step stopped: {e}");
                    break;
                }
            }
        }
        let prev = best.as_ref().map(Candidate::power);
        let mut rng = iteration_rng(opt.seed, iter, 1);
        let Some(beams) = ev.recover_beams(&step, &theta, opt.n_cand, &mut rng) else {
            note = "beam recovery found no feasible candidate".into();
            if best.is_some() {
                history.push(best.as_ref().map_or(f64::INFINITY, Candidate::power));
            }
            break;
        };
        keep_best(&mut best, beams.clone());

        let f1 = crate::transform::beam_gram(&(&beams.w1 * c64(beams.p1.sqrt(), 0.0)));
        let f2 = crate::transform::beam_gram(&(&beams.w2 * c64(beams.p2.sqrt(), 0.0)));
        match phase_step(&st, &f1, &f2, tg, user1) {
            Ok(ps) => {
                let mut rng = iteration_rng(opt.seed, iter, 2);
                if let Some(c) =
                    ev.recover_phases(&ps.e, &beams.w1, &beams.w2, opt.n_cand, &mut rng)
                {
                    keep_best(&mut best, c);
                }
                // continue from the best design found so far
                if let Some(b) = &best {
                    theta = b.theta.clone();
                }
            }
            Err(e) => {
                history.push(best.as_ref().map_or(f64::INFINITY, Candidate::power));
                note = format!("phase step stopped: {e}");
                break;
            }
        }
        let cur = best.as_ref().map_or(f64::INFINITY, Candidate::power);
        history.push(cur);
        if cur == 0.0 {
            note = "zero power".into();
            break;
        }
        if let Some(prev) = prev {
            stalled = if (prev - cur) / cur < opt.rel_tol {
                stalled + 1
            } else {
                0
            };
            if stalled >= opt.patience {
                note = "converged".into();
                break;
            }
        }
    }

    let Some(b) = best else {
        return Ok(DesignSolution::infeasible(nt, m, iterations, note));
    };
    let f1 = &b.w1 * c64(b.p1.sqrt(), 0.0);
    let f2 = &b.w2 * c64(b.p2.sqrt(), 0.0);
    let power = f1.norm_squared() + f2.norm_squared();
    Ok(DesignSolution {
        f1,
        f2,
        theta: b.theta,
        eps1: b.eps1,
        eps2: b.eps2,
        power,
        feasible: true,
        iterations,
        power_history: history,
        note,
    })
}

fn keep_best(best: &mut Option<Candidate>, c: Candidate) {
    if best.as_ref().is_none_or(|b| c.better_than(b)) {
        *best = Some(c);
    }
}
