//! Solver-agnostic conic program IR and a dense primal-dual interior-point
//! backend.
//!
//! Programs are stated over Hermitian matrix variables (optionally PSD) and
//! real scalar variables. Constraints are linear trace constraints and
//! second-order cones over affine expressions. Internally every Hermitian
//! variable is mapped to `R^{n^2}` through [`crate::linalg::hvec`], PSD
//! variables become Hermitian PSD cone blocks, and the resulting real cone
//! program is solved with a homogeneous self-dual embedding and
//! Nesterov-Todd scaling.

mod cones;
mod ipm;
mod presolve;
mod randomize;

pub use randomize::{randomize_rank1, Recovery, RecoveryMode};

use crate::error::{invalid, Result};
use crate::linalg::{is_hermitian, CMatrix, HERMITIAN_RTOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatVar(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScalarVar(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Free,
    NonNeg,
    NonPos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// `sum_i tr(A_i X_i) + sum_j c_j s_j + constant`, with Hermitian `A_i`.
#[derive(Clone, Debug, Default)]
pub struct AffineExpr {
    pub mat_terms: Vec<(MatVar, CMatrix)>,
    pub scalar_terms: Vec<(ScalarVar, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    pub fn mat(mut self, v: MatVar, coeff: CMatrix) -> Self {
        self.mat_terms.push((v, coeff));
        self
    }

    pub fn scalar(mut self, v: ScalarVar, coeff: f64) -> Self {
        self.scalar_terms.push((v, coeff));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Evaluates the expression at given variable values.
    pub fn eval(&self, mats: &[CMatrix], scalars: &[f64]) -> f64 {
        let mut acc = self.constant;
        for (v, a) in &self.mat_terms {
            acc += crate::linalg::trace_prod_re(a, &mats[v.0]);
        }
        for (v, c) in &self.scalar_terms {
            acc += c * scalars[v.0];
        }
        acc
    }
}

#[derive(Clone, Debug)]
pub struct MatrixVarDecl {
    pub name: String,
    pub dim: usize,
    pub psd: bool,
}

#[derive(Clone, Debug)]
pub struct ScalarVarDecl {
    pub name: String,
    pub sign: Sign,
}

#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub expr: AffineExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// `|| rows || <= bound`.
#[derive(Clone, Debug)]
pub struct SocConstraint {
    pub rows: Vec<AffineExpr>,
    pub bound: AffineExpr,
}

#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    pub matrix_vars: Vec<MatrixVarDecl>,
    pub scalar_vars: Vec<ScalarVarDecl>,
    pub linear: Vec<LinearConstraint>,
    pub soc: Vec<SocConstraint>,
    /// Minimized.
    pub objective: AffineExpr,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix_var(&mut self, name: impl Into<String>, dim: usize, psd: bool) -> MatVar {
        self.matrix_vars.push(MatrixVarDecl {
            name: name.into(),
            dim,
            psd,
        });
        MatVar(self.matrix_vars.len() - 1)
    }

    pub fn scalar_var(&mut self, name: impl Into<String>, sign: Sign) -> ScalarVar {
        self.scalar_vars.push(ScalarVarDecl {
            name: name.into(),
            sign,
        });
        ScalarVar(self.scalar_vars.len() - 1)
    }

    pub fn constrain(&mut self, expr: AffineExpr, sense: Sense, rhs: f64) {
        self.linear.push(LinearConstraint { expr, sense, rhs });
    }

    pub fn soc(&mut self, rows: Vec<AffineExpr>, bound: AffineExpr) {
        self.soc.push(SocConstraint { rows, bound });
    }

    pub fn minimize(&mut self, objective: AffineExpr) {
        self.objective = objective;
    }

    fn exprs(&self) -> impl Iterator<Item = &AffineExpr> {
        self.linear
            .iter()
            .map(|c| &c.expr)
            .chain(
                self.soc
                    .iter()
                    .flat_map(|s| s.rows.iter().chain(std::iter::once(&s.bound))),
            )
            .chain(std::iter::once(&self.objective))
    }

    pub fn validate(&self) -> Result<()> {
        for d in &self.matrix_vars {
            if d.dim == 0 {
                return Err(invalid(format!(
                    "matrix variable {} has dimension 0",
                    d.name
                )));
            }
        }
        for e in self.exprs() {
            if !e.constant.is_finite() {
                return Err(invalid("non-finite constant in expression"));
            }
            for (v, a) in &e.mat_terms {
                let decl = self
                    .matrix_vars
                    .get(v.0)
                    .ok_or_else(|| invalid(format!("undeclared matrix variable #{}", v.0)))?;
                if a.shape() != (decl.dim, decl.dim) {
                    return Err(invalid(format!(
                        "coefficient for {} is {}x{}, expected {}x{}",
                        decl.name,
                        a.nrows(),
                        a.ncols(),
                        decl.dim,
                        decl.dim
                    )));
                }
                if !a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    return Err(invalid(format!("non-finite coefficient for {}", decl.name)));
                }
                if !is_hermitian(a, 1e3 * HERMITIAN_RTOL) {
                    return Err(invalid(format!(
                        "coefficient for {} is not Hermitian",
                        decl.name
                    )));
                }
            }
            for (v, c) in &e.scalar_terms {
                if v.0 >= self.scalar_vars.len() {
                    return Err(invalid(format!("undeclared scalar variable #{}", v.0)));
                }
                if !c.is_finite() {
                    return Err(invalid("non-finite scalar coefficient"));
                }
            }
        }
        for c in &self.linear {
            if !c.rhs.is_finite() {
                return Err(invalid("non-finite right-hand side"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct SolverResult {
    pub status: SolveStatus,
    pub matrices: Vec<CMatrix>,
    pub scalars: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl SolverResult {
    pub fn matrix(&self, v: MatVar) -> &CMatrix {
        &self.matrices[v.0]
    }

    pub fn scalar(&self, v: ScalarVar) -> f64 {
        self.scalars[v.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            feastol: 1e-8,
            abstol: 1e-8,
            reltol: 1e-8,
        }
    }
}

pub fn solve(p: &ConicProgram) -> Result<SolverResult> {
    solve_with(p, &SolverSettings::default())
}

pub fn solve_with(p: &ConicProgram, settings: &SolverSettings) -> Result<SolverResult> {
    p.validate()?;
    let prepared = presolve::prepare(p);
    let (status, x, iterations) = match prepared.reduced() {
        Err(status) => (status, prepared.zero_point(), 0),
        Ok(reduced) => {
            let out = ipm::solve(reduced, settings);
            (out.status, prepared.lift(&out.x), out.iterations)
        }
    };
    let (matrices, scalars) = prepared.unpack(&x);
    let objective = p.objective.eval(&matrices, &scalars);
    Ok(SolverResult {
        status,
        matrices,
        scalars,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests;
