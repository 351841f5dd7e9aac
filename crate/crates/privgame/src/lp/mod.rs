//! Linear-program model and solver.
//!
//! Every mechanism- and attack-construction operation in this crate reduces
//! to a linear program built through [`LinearProgram`] and solved by
//! [`LinearProgram::solve`]. Constraint rows are stored sparsely; the
//! mechanism programs have on the order of |S|^2 * |O| rows with only a
//! couple of terms each, and a dense representation would not scale past toy
//! instances.
//!
//! The solver is a homogeneous self-dual interior-point method (see
//! [`solver`]); it classifies every well-posed instance as optimal,
//! infeasible, or unbounded, and reports a [`LpError::NumericalFailure`]
//! when it cannot certify any of the three.

mod ldl;
mod solver;

use std::io::Write;

use thiserror::Error;

/// Optimization sense of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Relation of a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error)]
pub enum LpError {
    /// The program violates a model invariant (bad index, non-finite data).
    #[error("invalid linear program: {0}")]
    InvalidModel(String),
    /// The solver could not certify optimality, infeasibility, or
    /// unboundedness. Never silently mapped to `Infeasible`.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Solver tolerances and limits.
///
/// `feas_tol` is the absolute feasibility tolerance a returned optimal point
/// satisfies on every constraint; `opt_tol` bounds the relative duality gap
/// at termination.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-7,
            opt_tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Solution of a linear program.
///
/// `values` and `objective_value` are meaningful only when `status` is
/// [`LpStatus::Optimal`]; otherwise `values` is empty-of-meaning (zeros) and
/// `objective_value` is NaN.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
}

/// A linear program over `num_vars` variables with sparse constraint rows.
///
/// Variables default to bounds `[0, +inf)`. Duplicate variable indices
/// within one row are summed. Immutable once built (solving takes `&self`),
/// so an instance can be shared across threads and solved in parallel.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    sense: Sense,
    objective: Vec<f64>,
    // flat CSR of constraint rows
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    coeff: Vec<f64>,
    rel: Vec<Rel>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LinearProgram {
    fn check_var(&self, var: usize) -> Result<(), LpError> {
        if var >= self.num_vars {
            return Err(LpError::InvalidModel(format!(
                "variable index {var} out of range (num_vars = {})",
                self.num_vars
            )));
        }
        Ok(())
    }

    fn check_finite(&self, value: f64) -> Result<(), LpError> {
        if !value.is_finite() {
            return Err(LpError::InvalidModel(format!("non-finite value {value}")));
        }
        Ok(())
    }

    pub fn new(num_vars: usize, sense: Sense) -> Self {
        LinearProgram {
            num_vars,
            sense,
            objective: vec![0.0; num_vars],
            row_ptr: vec![0],
            col_idx: Vec::new(),
            coeff: Vec::new(),
            rel: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        self.rel.len()
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// Sets one objective coefficient.
    pub fn set_obj_coeff(&mut self, var: usize, value: f64) -> Result<(), LpError> {
        self.check_var(var)?;
        self.check_finite(value)?;
        self.objective[var] = value;
        Ok(())
    }

    /// Replaces the whole objective vector.
    pub fn set_objective(&mut self, coeffs: &[f64]) -> Result<(), LpError> {
        if coeffs.len() != self.num_vars {
            return Err(LpError::InvalidModel(format!(
                "objective length {} != num_vars {}",
                coeffs.len(),
                self.num_vars
            )));
        }
        for &v in coeffs {
            self.check_finite(v)?;
        }
        self.objective.copy_from_slice(coeffs);
        Ok(())
    }

    pub fn add_constraint(
        &mut self,
        terms: &[(usize, f64)],
        rel: Rel,
        rhs: f64,
    ) -> Result<(), LpError> {
        self.check_finite(rhs)?;
        for &(var, value) in terms {
            self.check_var(var)?;
            self.check_finite(value)?;
        }
        for &(var, value) in terms {
            self.col_idx.push(var as u32);
            self.coeff.push(value);
        }
        self.row_ptr.push(self.col_idx.len());
        self.rel.push(rel);
        self.rhs.push(rhs);
        Ok(())
    }

    /// Sets variable bounds; use `-inf`/`+inf` for unbounded sides.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<(), LpError> {
        self.check_var(var)?;
        if lower.is_nan() || upper.is_nan() {
            return Err(LpError::InvalidModel("NaN bound".into()));
        }
        self.lower[var] = lower;
        self.upper[var] = upper;
        Ok(())
    }

    pub(crate) fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.coeff[lo..hi])
    }

    pub(crate) fn parts(&self) -> LpParts<'_> {
        LpParts {
            num_vars: self.num_vars,
            sense: self.sense,
            objective: &self.objective,
            rel: &self.rel,
            rhs: &self.rhs,
            lower: &self.lower,
            upper: &self.upper,
        }
    }

    /// Solves the program.
    ///
    /// Returns the classified solution, or an error when the instance is
    /// malformed or the solver cannot certify a status.
    pub fn solve(&self, options: &SolverOptions) -> Result<LpSolution, LpError> {
        solver::solve(self, options)
    }

    /// Writes the program in the conventional textual LP file format.
    pub fn write_lp_format<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        match self.sense {
            Sense::Minimize => writeln!(w, "Minimize")?,
            Sense::Maximize => writeln!(w, "Maximize")?,
        }
        write!(w, " obj:")?;
        let mut wrote = false;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(w, " {} {} x{}", if c < 0.0 { "-" } else { "+" }, c.abs(), j)?;
                wrote = true;
            }
        }
        if !wrote {
            write!(w, " 0 x0")?;
        }
        writeln!(w)?;
        writeln!(w, "Subject To")?;
        for i in 0..self.num_constraints() {
            let (idx, val) = self.row(i);
            write!(w, " c{i}:")?;
            for (&j, &v) in idx.iter().zip(val) {
                write!(w, " {} {} x{}", if v < 0.0 { "-" } else { "+" }, v.abs(), j)?;
            }
            if idx.is_empty() {
                write!(w, " 0 x0")?;
            }
            let op = match self.rel[i] {
                Rel::Le => "<=",
                Rel::Ge => ">=",
                Rel::Eq => "=",
            };
            writeln!(w, " {} {}", op, self.rhs[i])?;
        }
        writeln!(w, "Bounds")?;
        for j in 0..self.num_vars {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l == 0.0 && u == f64::INFINITY {
                continue;
            }
            match (l.is_finite(), u.is_finite()) {
                (true, true) => writeln!(w, " {l} <= x{j} <= {u}")?,
                (true, false) => writeln!(w, " x{j} >= {l}")?,
                (false, true) => writeln!(w, " -inf <= x{j} <= {u}")?,
                (false, false) => writeln!(w, " x{j} free")?,
            }
        }
        writeln!(w, "End")
    }
}

pub(crate) struct LpParts<'a> {
    pub num_vars: usize,
    pub sense: Sense,
    pub objective: &'a [f64],
    pub rel: &'a [Rel],
    pub rhs: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}
