//! Solver-agnostic conic program representation.
//!
//! Programs are minimization problems over a flat vector of scalar
//! variables, declared in named blocks. Constraints are affine in the
//! variables and live in one of four cones: the zero cone (equalities), the
//! nonnegative orthant, rotated second-order cones, and PSD cones on
//! symmetric affine matrix expressions. `solve` lowers the program to the
//! configured backend and maps its termination status back without ever
//! fabricating optimality.

mod interchange;
mod lower;

pub use interchange::{from_json, to_json};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("PSD block is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("PSD block entry ({i},{j}) differs from its transpose entry")]
    NotSymmetric { i: usize, j: usize },
    #[error("expression references variable index {index} but only {nvars} are declared")]
    UndeclaredVariable { index: usize, nvars: usize },
    #[error("non-finite coefficient in expression")]
    NonFinite,
    #[error("interchange parse failure: {0}")]
    Parse(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

/// Index range of a named variable block in the flat variable vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarBlock {
    pub start: usize,
    pub len: usize,
}

impl VarBlock {
    /// Flat index of entry `k` within the block.
    pub fn idx(&self, k: usize) -> usize {
        debug_assert!(k < self.len);
        self.start + k
    }

    /// Flat index of a single-entry block.
    pub fn scalar(&self) -> usize {
        debug_assert_eq!(self.len, 1);
        self.start
    }
}

/// Sparse affine expression `sum coeff * x[index] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize) -> Self {
        Self { terms: vec![(index, 1.0)], constant: 0.0 }
    }

    pub fn term(index: usize, coeff: f64) -> Self {
        Self { terms: vec![(index, coeff)], constant: 0.0 }
    }

    pub fn add_term(&mut self, index: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((index, coeff));
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for &(ix, c) in &other.terms {
            self.add_term(ix, scale * c);
        }
        self.constant += scale * other.constant;
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut out = LinExpr::zero();
        out.add_scaled(self, scale);
        out
    }

    /// Sorts terms by index, merges duplicates, drops exact zeros.
    pub fn normalize(&mut self) {
        self.terms.sort_by_key(|&(ix, _)| ix);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(ix, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == ix => last.1 += c,
                _ => out.push((ix, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        self.terms = out;
    }

    pub fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.iter().all(|&(_, c)| c.is_finite())
    }

    /// Evaluates the expression at a point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.constant;
        for &(ix, c) in &self.terms {
            acc += c * x[ix];
        }
        acc
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|&(ix, _)| ix).max()
    }
}

/// Dense rectangular matrix of affine expressions, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    data: Vec<LinExpr>,
}

impl ExprMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![LinExpr::zero(); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> &LinExpr {
        &self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut LinExpr {
        &mut self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, e: LinExpr) {
        self.data[i * self.cols + j] = e;
    }
}

/// Rotated second-order cone membership `2 u v >= |w|^2` (with `u, v >= 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsocBlock {
    pub u: LinExpr,
    pub v: LinExpr,
    pub w: Vec<LinExpr>,
}

/// PSD cone membership on a symmetric affine matrix, stored as the upper
/// triangle in column-major order (entry (i,j), i <= j, at position
/// j(j+1)/2 + i).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdBlock {
    pub dim: usize,
    pub tri: Vec<LinExpr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EqHandle(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NonnegHandle(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RsocHandle(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsdHandle(pub usize);

/// A conic minimization program.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConicProgram {
    nvars: usize,
    names: Vec<(String, VarBlock)>,
    objective: LinExpr,
    eq: Vec<LinExpr>,
    nonneg: Vec<LinExpr>,
    rsoc: Vec<RsocBlock>,
    psd: Vec<PsdBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a named variable block of `len` scalars.
    pub fn add_vars(&mut self, name: &str, len: usize) -> VarBlock {
        let block = VarBlock { start: self.nvars, len };
        self.nvars += len;
        self.names.push((name.to_string(), block));
        block
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    pub fn var_blocks(&self) -> &[(String, VarBlock)] {
        &self.names
    }

    /// Sets the linear objective to minimize.
    pub fn set_objective(&mut self, mut obj: LinExpr) -> Result<(), ConicError> {
        obj.normalize();
        self.check_expr(&obj)?;
        self.objective = obj;
        Ok(())
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    /// Adds the equality `expr == 0`.
    pub fn add_eq(&mut self, mut expr: LinExpr) -> Result<EqHandle, ConicError> {
        expr.normalize();
        self.check_expr(&expr)?;
        self.eq.push(expr);
        Ok(EqHandle(self.eq.len() - 1))
    }

    /// Adds the inequality `expr >= 0`.
    pub fn add_nonneg(&mut self, mut expr: LinExpr) -> Result<NonnegHandle, ConicError> {
        expr.normalize();
        self.check_expr(&expr)?;
        self.nonneg.push(expr);
        Ok(NonnegHandle(self.nonneg.len() - 1))
    }

    /// Adds the rotated second-order cone membership `2 u v >= |w|^2`.
    pub fn add_rsoc(
        &mut self,
        mut u: LinExpr,
        mut v: LinExpr,
        mut w: Vec<LinExpr>,
    ) -> Result<RsocHandle, ConicError> {
        u.normalize();
        v.normalize();
        self.check_expr(&u)?;
        self.check_expr(&v)?;
        for e in &mut w {
            e.normalize();
        }
        for e in &w {
            self.check_expr(e)?;
        }
        self.rsoc.push(RsocBlock { u, v, w });
        Ok(RsocHandle(self.rsoc.len() - 1))
    }

    /// Adds the PSD cone membership `expr >= 0` for a square symmetric
    /// affine matrix expression.
    pub fn add_psd_block(&mut self, mut expr: ExprMatrix) -> Result<PsdHandle, ConicError> {
        if expr.rows != expr.cols {
            return Err(ConicError::NotSquare { rows: expr.rows, cols: expr.cols });
        }
        for e in &mut expr.data {
            e.normalize();
        }
        for e in &expr.data {
            self.check_expr(e)?;
        }
        let n = expr.rows;
        for j in 0..n {
            for i in 0..j {
                if !expr_close(expr.at(i, j), expr.at(j, i)) {
                    return Err(ConicError::NotSymmetric { i, j });
                }
            }
        }
        let mut tri = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                tri.push(expr.at(i, j).clone());
            }
        }
        self.psd.push(PsdBlock { dim: n, tri });
        Ok(PsdHandle(self.psd.len() - 1))
    }

    pub fn eq_constraints(&self) -> &[LinExpr] {
        &self.eq
    }

    pub fn nonneg_constraints(&self) -> &[LinExpr] {
        &self.nonneg
    }

    pub fn rsoc_constraints(&self) -> &[RsocBlock] {
        &self.rsoc
    }

    pub fn psd_constraints(&self) -> &[PsdBlock] {
        &self.psd
    }

    /// Solves the program with the configured backend.
    pub fn solve(&self, opts: &SolveOptions) -> Result<Solution, ConicError> {
        match opts.backend {
            Backend::Clarabel => lower::solve_clarabel(self, opts),
        }
    }

    fn check_expr(&self, e: &LinExpr) -> Result<(), ConicError> {
        if !e.is_finite() {
            return Err(ConicError::NonFinite);
        }
        if let Some(ix) = e.max_index() {
            if ix >= self.nvars {
                return Err(ConicError::UndeclaredVariable { index: ix, nvars: self.nvars });
            }
        }
        Ok(())
    }
}

fn expr_close(a: &LinExpr, b: &LinExpr) -> bool {
    if (a.constant - b.constant).abs() > 1e-12 {
        return false;
    }
    if a.terms.len() != b.terms.len() {
        return false;
    }
    a.terms
        .iter()
        .zip(&b.terms)
        .all(|(&(ia, ca), &(ib, cb))| ia == ib && (ca - cb).abs() <= 1e-12)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Backend {
    #[default]
    Clarabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Absolute duality gap tolerance.
    pub abs_tol: f64,
    /// Relative duality gap tolerance.
    pub rel_tol: f64,
    /// Primal and dual residual tolerance; kept separate from the gap so a
    /// large program can trade objective precision without losing
    /// constraint accuracy.
    #[serde(default = "default_feas_tol")]
    pub feas_tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
    pub backend: Backend,
}

fn default_feas_tol() -> f64 {
    1e-8
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 100_000,
            verbose: false,
            backend: Backend::Clarabel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: u32,
    pub solve_time: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Raw backend termination status for diagnostics.
    pub note: String,
}

/// Result of a solve. Dual vectors follow the order in which constraints
/// were added; PSD duals are packed like the primal triangle (matrix units,
/// no cone scaling).
#[derive(Clone, Debug)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub nonneg_duals: Vec<f64>,
    pub rsoc_duals: Vec<Vec<f64>>,
    pub psd_duals: Vec<Vec<f64>>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn value(&self, e: &LinExpr) -> f64 {
        e.eval(&self.x)
    }

    pub fn block(&self, b: VarBlock) -> &[f64] {
        &self.x[b.start..b.start + b.len]
    }

    pub fn eq_dual(&self, h: EqHandle) -> f64 {
        self.eq_duals[h.0]
    }

    pub fn nonneg_dual(&self, h: NonnegHandle) -> f64 {
        self.nonneg_duals[h.0]
    }

    pub fn psd_dual(&self, h: PsdHandle) -> &[f64] {
        &self.psd_duals[h.0]
    }
}

#[cfg(test)]
mod tests;
