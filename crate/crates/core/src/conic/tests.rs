use super::*;
use crate::linalg::{c64, eigh, hermitian_part, randn_cmatrix, CMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn eye(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

#[test]
fn trace_lower_bound() {
    let mut p = ConicProgram::new();
    let x = p.matrix_var("X", 2, true);
    p.constrain(AffineExpr::new().mat(x, eye(2)), Sense::Ge, 1.0);
    p.minimize(AffineExpr::new().mat(x, eye(2)));
    let r = solve(&p).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective - 1.0).abs() < 1e-6, "{}", r.objective);
}

#[test]
fn negative_trace_is_infeasible() {
    let mut p = ConicProgram::new();
    let x = p.matrix_var("X", 2, true);
    p.constrain(AffineExpr::new().mat(x, eye(2)), Sense::Le, -1.0);
    p.minimize(AffineExpr::new().mat(x, eye(2)));
    assert_eq!(solve(&p).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn unbounded_scalar() {
    let mut p = ConicProgram::new();
    let t = p.scalar_var("t", Sign::Free);
    let s = p.scalar_var("s", Sign::NonNeg);
    p.constrain(
        AffineExpr::new().scalar(t, 1.0).scalar(s, -1.0),
        Sense::Le,
        0.0,
    );
    p.minimize(AffineExpr::new().scalar(t, 1.0));
    assert_eq!(solve(&p).unwrap().status, SolveStatus::Unbounded);
}

#[test]
fn unit_trace_gives_smallest_eigenvalue() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = hermitian_part(&randn_cmatrix(&mut rng, 3, 3));
        let mut p = ConicProgram::new();
        let x = p.matrix_var("X", 3, true);
        p.constrain(AffineExpr::new().mat(x, eye(3)), Sense::Eq, 1.0);
        p.minimize(AffineExpr::new().mat(x, c.clone()));
        let r = solve(&p).unwrap();
        assert!(r.is_optimal());
        let (w, _) = eigh(&c);
        assert!(
            (r.objective - w[0]).abs() < 1e-6,
            "{} vs {}",
            r.objective,
            w[0]
        );
    }
}

#[test]
fn maxcut_style_diagonal_constraints() {
    // max tr(C X) s.t. diag(X) = 1 for C = a a^H: optimum n^2 * ... = |sum|a_i||^2
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = randn_cmatrix(&mut rng, 4, 1);
    let c = &a * a.adjoint();
    let mut p = ConicProgram::new();
    let x = p.matrix_var("E", 4, true);
    for i in 0..4 {
        let mut d = CMatrix::zeros(4, 4);
        d[(i, i)] = c64(1.0, 0.0);
        p.constrain(AffineExpr::new().mat(x, d), Sense::Eq, 1.0);
    }
    p.minimize(AffineExpr::new().mat(x, -c));
    let r = solve(&p).unwrap();
    assert!(r.is_optimal());
    let want: f64 = a.iter().map(|z| z.norm()).sum::<f64>().powi(2);
    assert!((-r.objective - want).abs() < 1e-6 * want);
}

#[test]
fn second_order_cone_projection() {
    // min t s.t. ||(s1 - 3, s2 - 4)|| <= t  -> t = 0 at s = (3, 4)
    // then with s1 + s2 <= 1: distance from (3,4) to the half-plane = 6/sqrt2
    let mut p = ConicProgram::new();
    let t = p.scalar_var("t", Sign::Free);
    let s1 = p.scalar_var("s1", Sign::Free);
    let s2 = p.scalar_var("s2", Sign::Free);
    p.soc(
        vec![
            AffineExpr::new().scalar(s1, 1.0).plus(-3.0),
            AffineExpr::new().scalar(s2, 1.0).plus(-4.0),
        ],
        AffineExpr::new().scalar(t, 1.0),
    );
    p.constrain(
        AffineExpr::new().scalar(s1, 1.0).scalar(s2, 1.0),
        Sense::Le,
        1.0,
    );
    p.minimize(AffineExpr::new().scalar(t, 1.0));
    let r = solve(&p).unwrap();
    assert!(r.is_optimal());
    assert!((r.objective - 6.0 / 2f64.sqrt()).abs() < 1e-6);
}

#[test]
fn range_reduced_beam_program_matches_closed_form() {
    // min tr(F) s.t. h^H F h >= 1, F PSD  ->  1 / ||h||^2
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = randn_cmatrix(&mut rng, 6, 1);
    let mut p = ConicProgram::new();
    let f = p.matrix_var("F", 6, true);
    p.constrain(AffineExpr::new().mat(f, &h * h.adjoint()), Sense::Ge, 1.0);
    p.minimize(AffineExpr::new().mat(f, eye(6)));
    let r = solve(&p).unwrap();
    assert!(r.is_optimal());
    assert!((r.objective - 1.0 / h.norm_squared()).abs() < 1e-7);
    let (w, _) = eigh(r.matrix(f));
    assert!(w[4].abs() < 1e-9, "reduced solution should be rank one");
}

#[test]
fn equality_only_program_is_resolved_in_presolve() {
    let mut p = ConicProgram::new();
    let a = p.scalar_var("a", Sign::NonNeg);
    p.constrain(AffineExpr::new().scalar(a, 2.0), Sense::Eq, 3.0);
    p.minimize(AffineExpr::new().scalar(a, 1.0));
    let r = solve(&p).unwrap();
    assert!(r.is_optimal());
    assert!((r.scalar(a) - 1.5).abs() < 1e-12);

    let mut q = ConicProgram::new();
    let b = q.scalar_var("b", Sign::NonNeg);
    q.constrain(AffineExpr::new().scalar(b, 1.0), Sense::Eq, -1.0);
    assert_eq!(solve(&q).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn solve_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let c = hermitian_part(&randn_cmatrix(&mut rng, 4, 4));
    let mut p = ConicProgram::new();
    let x = p.matrix_var("X", 4, true);
    p.constrain(AffineExpr::new().mat(x, eye(4)), Sense::Eq, 1.0);
    p.minimize(AffineExpr::new().mat(x, c));
    let a = solve(&p).unwrap();
    let b = solve(&p).unwrap();
    assert_eq!(a.matrix(x), b.matrix(x));
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn rejects_non_hermitian_coefficients() {
    let mut p = ConicProgram::new();
    let x = p.matrix_var("X", 2, true);
    let mut a = CMatrix::zeros(2, 2);
    a[(0, 1)] = c64(1.0, 0.0);
    p.constrain(AffineExpr::new().mat(x, a), Sense::Ge, 1.0);
    assert!(solve(&p).is_err());
}
