//! Rank-one recovery from a relaxed Gram matrix by Gaussian randomization.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dominant_eig, psd_factor, randn_cvector, trace, CMatrix, CVector, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryMode {
    /// Candidates are beamformers scaled to `tr(X)` power.
    Beam,
    /// `X` is a lifted phase matrix `E = t^H t` with `t = [1, theta]`;
    /// candidates are the unit-modulus `theta`.
    Phase,
}

#[derive(Clone, Debug)]
pub struct Recovery {
    pub vector: CVector,
    pub score: f64,
    /// True when no random candidate was feasible and the dominant
    /// eigenvector was returned instead.
    pub used_fallback: bool,
}

fn map_candidate(xi: &CVector, mode: RecoveryMode, power: f64) -> CVector {
    match mode {
        RecoveryMode::Beam => {
            let n = xi.norm();
            if n > 0.0 {
                xi * C64::from(power.sqrt() / n)
            } else {
                xi.clone()
            }
        }
        RecoveryMode::Phase => {
            // xi ~ CN(0, t^H t) is proportional to conj(t)
            let unit = |z: C64| {
                if z.norm() > 0.0 {
                    z / z.norm()
                } else {
                    C64::new(1.0, 0.0)
                }
            };
            let ref_phase = unit(xi[0]);
            CVector::from_iterator(
                xi.len() - 1,
                xi.iter()
                    .skip(1)
                    .map(|&z| (unit(z) * ref_phase.conj()).conj()),
            )
        }
    }
}

/// Draws `n_cand` samples `xi ~ CN(0, x_star)`, maps them according to
/// `mode`, and returns the feasible candidate with the largest `score`.
pub fn randomize_rank1<R: Rng + ?Sized>(
    x_star: &CMatrix,
    mode: RecoveryMode,
    n_cand: usize,
    rng: &mut R,
    feasible: impl Fn(&CVector) -> bool,
    score: impl Fn(&CVector) -> f64,
) -> Result<Recovery> {
    if n_cand == 0 {
        return Err(crate::error::invalid("n_cand must be at least 1"));
    }
    if mode == RecoveryMode::Phase && x_star.nrows() < 2 {
        return Err(crate::error::invalid(
            "phase recovery needs a lifted matrix of order >= 2",
        ));
    }
    let power = trace(x_star).re.max(0.0);
    let factor = psd_factor(x_star);
    let mut best: Option<(f64, CVector)> = None;
    for _ in 0..n_cand {
        let g = randn_cvector(rng, factor.ncols());
        let cand = map_candidate(&(&factor * g), mode, power);
        if !feasible(&cand) {
            continue;
        }
        let sc = score(&cand);
        if best.as_ref().is_none_or(|(b, _)| sc > *b) {
            best = Some((sc, cand));
        }
    }
    if let Some((score, vector)) = best {
        return Ok(Recovery {
            vector,
            score,
            used_fallback: false,
        });
    }
    let (_, v) = dominant_eig(x_star);
    let cand = map_candidate(&v, mode, power);
    if feasible(&cand) {
        let sc = score(&cand);
        return Ok(Recovery {
            vector: cand,
            score: sc,
            used_fallback: true,
        });
    }
    Err(Error::RecoveryFailed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, outer, random_psd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lifted(theta: &CVector) -> CMatrix {
        let mut t = CVector::from_element(theta.len() + 1, c64(1.0, 0.0));
        t.rows_mut(1, theta.len()).copy_from(theta);
        // E = t^H t with t a row vector: E_ij = conj(t_i) t_j
        let tc = t.map(|z| z.conj());
        &tc * t.transpose()
    }

    fn lifted_value(c: &CMatrix, theta: &CVector) -> f64 {
        crate::linalg::trace_prod_re(c, &lifted(theta))
    }

    #[test]
    fn phase_recovers_rank_one_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = CVector::from_fn(4, |i, _| C64::from_polar(1.0, 0.7 * i as f64 - 1.0));
        let rec = randomize_rank1(
            &lifted(&theta),
            RecoveryMode::Phase,
            5,
            &mut rng,
            |_| true,
            |_| 0.0,
        )
        .unwrap();
        for (a, b) in rec.vector.iter().zip(theta.iter()) {
            assert!((a.norm() - 1.0).abs() < 1e-12);
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn beam_preserves_trace_and_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = randn_cvector(&mut rng, 5);
        let x = outer(&v);
        let rec = randomize_rank1(&x, RecoveryMode::Beam, 10, &mut rng, |_| true, |_| 0.0).unwrap();
        assert!((rec.vector.norm_squared() - v.norm_squared()).abs() < 1e-10 * v.norm_squared());
        let cos = rec.vector.dotc(&v).norm() / (rec.vector.norm() * v.norm());
        assert!((cos - 1.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_everywhere_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_psd(&mut rng, 3, 0.1);
        let r = randomize_rank1(&x, RecoveryMode::Beam, 10, &mut rng, |_| false, |_| 0.0);
        assert!(matches!(r, Err(Error::RecoveryFailed)));
    }

    #[test]
    fn fallback_flag_when_only_eigenvector_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(0.0, 0.0), c64(2.0, 0.0)]));
        // random candidates carry a random phase; only the eigenvector itself is accepted
        let (_, v) = dominant_eig(&x);
        let target = map_candidate(&v, RecoveryMode::Beam, 2.0);
        let rec = randomize_rank1(
            &x,
            RecoveryMode::Beam,
            3,
            &mut rng,
            |c| (c - &target).norm() < 1e-12,
            |_| 0.0,
        )
        .unwrap();
        assert!(rec.used_fallback);
    }

    /// Relaxed optimum of `max tr(C E) s.t. diag(E) = 1, E PSD`.
    fn relaxed_phase(c: &CMatrix) -> CMatrix {
        use crate::conic::{solve, AffineExpr, ConicProgram, Sense};
        let n = c.nrows();
        let mut p = ConicProgram::new();
        let e = p.matrix_var("E", n, true);
        for i in 0..n {
            let mut d = CMatrix::zeros(n, n);
            d[(i, i)] = c64(1.0, 0.0);
            p.constrain(AffineExpr::new().mat(e, d), Sense::Eq, 1.0);
        }
        p.minimize(AffineExpr::new().mat(e, -c));
        let r = solve(&p).unwrap();
        assert!(r.is_optimal());
        r.matrix(e).clone()
    }

    #[test]
    fn randomization_beats_eigenvector_projection() {
        let mut wins = 0;
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let c = random_psd(&mut rng, 5, 0.0);
            let x = relaxed_phase(&c);
            let rec = randomize_rank1(
                &x,
                RecoveryMode::Phase,
                200,
                &mut rng,
                |_| true,
                |t| lifted_value(&c, t),
            )
            .unwrap();
            let (_, v) = dominant_eig(&x);
            let proj = map_candidate(&v, RecoveryMode::Phase, 0.0);
            if rec.score >= lifted_value(&c, &proj) - 1e-9 * rec.score.abs() {
                wins += 1;
            }
        }
        assert!(wins >= 95, "wins = {wins}");
    }
}
