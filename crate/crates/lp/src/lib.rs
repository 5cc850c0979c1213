//! A bounded-variable revised simplex engine.
//!
//! Programs are stated in maximization form over variables with explicit
//! lower/upper bounds. Every row gets a logical variable carrying the row's
//! bounds, so the working system is `A x - r = 0`. Cold starts run a primal
//! phase 1 (sum of infeasibilities) followed by primal phase 2; appending a
//! row to an optimal program keeps the old basis dual feasible and is
//! reoptimized with the dual simplex.
//!
//! ```
//! use nash_match_lp::{LinearProgram, LpStatus, Row};
//!
//! let mut lp = LinearProgram::new();
//! let x1 = lp.add_var(1.0, 0.0, f64::INFINITY);
//! let x2 = lp.add_var(1.0, 0.0, f64::INFINITY);
//! lp.add_row(Row::le(vec![(x1, 1.0), (x2, 1.0)], 1.0));
//! let sol = nash_match_lp::solve(&lp).unwrap();
//! assert_eq!(sol.status, LpStatus::Optimal);
//! assert!((sol.objective - 1.0).abs() < 1e-12);
//! ```

mod lu;
mod simplex;

pub use simplex::Simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility tolerance on bounds of primal variables and row activities.
pub const PRIMAL_TOL: f64 = 1e-9;
/// Optimality tolerance on reduced costs.
pub const DUAL_TOL: f64 = 1e-9;
/// Smallest admissible pivot magnitude.
pub const PIVOT_TOL: f64 = 1e-9;
/// Tolerance used to break ties in the ratio tests.
pub const RATIO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// One constraint `sum coeffs <relation> rhs`, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Row {
            coeffs,
            relation,
            rhs,
        }
    }

    pub fn le(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Row::new(coeffs, Relation::Le, rhs)
    }

    pub fn ge(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Row::new(coeffs, Relation::Ge, rhs)
    }

    pub fn eq(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Row::new(coeffs, Relation::Eq, rhs)
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Bounds `[lo, hi]` on the row activity.
    pub fn activity_bounds(&self) -> (f64, f64) {
        match self.relation {
            Relation::Le => (f64::NEG_INFINITY, self.rhs),
            Relation::Ge => (self.rhs, f64::INFINITY),
            Relation::Eq => (self.rhs, self.rhs),
        }
    }
}

/// `maximize objective . x` subject to `rows` and per-variable bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its index. Use infinities for missing bounds.
    pub fn add_var(&mut self, objective: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(objective);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, row: Row) -> usize {
        self.rows.push(row);
        self.rows.len() - 1
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let act = row.activity(x);
            let (lo, hi) = row.activity_bounds();
            worst = worst.max(lo - act).max(act - hi);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(LpError::InvalidProgram(format!(
                    "objective coefficient of variable {j} is not finite"
                )));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(LpError::InvalidProgram(format!(
                    "variable {j} has bounds [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::InvalidProgram(format!(
                    "variable {j} has an empty bound interval"
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            validate_row(row, n).map_err(|e| match e {
                LpError::InvalidProgram(msg) => LpError::InvalidProgram(format!("row {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(())
    }
}

pub(crate) fn validate_row(row: &Row, num_vars: usize) -> Result<(), LpError> {
    if !row.rhs.is_finite() {
        return Err(LpError::InvalidProgram(
            "right-hand side is not finite".into(),
        ));
    }
    for &(j, a) in &row.coeffs {
        if j >= num_vars {
            return Err(LpError::InvalidProgram(format!(
                "coefficient refers to variable {j} of {num_vars}"
            )));
        }
        if !a.is_finite() {
            return Err(LpError::InvalidProgram(format!(
                "coefficient of variable {j} is not finite"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Position of a variable relative to the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

/// Opaque warm-start token: which variables (structurals first, then one
/// logical per row) are basic and where the nonbasic ones sit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub(crate) head: Vec<usize>,
    pub(crate) state: Vec<VarState>,
}

impl Basis {
    pub fn num_rows(&self) -> usize {
        self.head.len()
    }

    pub fn num_vars(&self) -> usize {
        self.state.len() - self.head.len()
    }

    pub fn state(&self, var: usize) -> VarState {
        self.state[var]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Values of the structural variables.
    pub primal: Vec<f64>,
    /// Row duals in maximization sign convention (`>= 0` on binding `<=` rows).
    pub duals: Vec<f64>,
    /// `c_j - a_j . duals` for every structural variable.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub basis: Basis,
    /// Simplex pivots (including bound flips) performed by this call.
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    PrimalOne,
    PrimalTwo,
    Dual,
}

/// One step of the simplex, kept for failure diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub entering: Option<usize>,
    pub leaving: Option<usize>,
    pub step: f64,
    pub bland: bool,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("invalid linear program: {0}")]
    InvalidProgram(String),
    #[error("basis does not match the program: {0}")]
    BasisMismatch(String),
    #[error("warm restart requires an optimal previous solution, got {0:?}")]
    NotOptimal(LpStatus),
    #[error("simplex failed: {reason} (last {} pivots recorded)", trace.len())]
    SolverFailure {
        reason: String,
        trace: Vec<PivotRecord>,
    },
}

/// Solves `lp` from an all-logical starting basis.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    Simplex::new(lp)?.solve()
}

/// Reoptimizes `lp` with `row` appended, starting from the basis of `prev`
/// (which must be optimal for `lp`). The returned solution refers to the
/// augmented program.
pub fn add_row_resolve(
    lp: &LinearProgram,
    prev: &LpSolution,
    row: Row,
) -> Result<LpSolution, LpError> {
    if prev.status != LpStatus::Optimal {
        return Err(LpError::NotOptimal(prev.status));
    }
    let mut ctx = Simplex::with_basis(lp, &prev.basis)?;
    ctx.add_row(row)
}
