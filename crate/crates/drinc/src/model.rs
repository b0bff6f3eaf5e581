//! Plant description, polytopic sets, and the cost/safety specification
//! that parameterize every downstream computation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{ConicError, ConicProgram, LinExpr, SolveOptions, SolveStatus};

/// Radius reported for sets whose inscribed ball is unbounded; also caps the
/// certification program so it stays bounded on unbounded sets.
pub const RADIUS_CAP: f64 = 1e6;

/// Relative singular-value threshold for rank decisions.
const RANK_TOL: f64 = 1e-9;

/// Inscribed-ball radius below which a set is not considered full-dimensional.
const FULL_DIM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("(A, B) fails the controllability rank test: rank {rank} < {n}")]
    NotControllable { rank: usize, n: usize },
    #[error("(A, C) fails the observability rank test: rank {rank} < {n}")]
    NotObservable { rank: usize, n: usize },
    #[error("polytope has no feasible point")]
    EmptyPolytope,
    #[error("polytope is not full-dimensional: inscribed radius {radius:.3e}")]
    NotFullDimensional { radius: f64 },
    #[error("point violates face {row} by {violation:.3e}")]
    PointOutside { row: usize, violation: f64 },
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    InvalidGamma(f64),
    #[error("constraint row {0} is identically zero")]
    ZeroRow(usize),
    #[error("cost weight must be positive definite: minimum eigenvalue {0:.3e}")]
    NotPositiveDefinite(f64),
    #[error("cost weight must be symmetric")]
    AsymmetricWeight,
    #[error("model file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("certification solve failed: {0}")]
    Numerical(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// Discrete-time plant x+ = Ax + Bu + w with measurements y = Cx + v.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl SystemModel {
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

/// Validates dimensions, controllability of (A, B), and observability of
/// (A, C), returning the assembled plant.
pub fn validate_system(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
) -> Result<SystemModel, ModelError> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(ModelError::DimensionMismatch(format!(
            "A must be square and nonempty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(ModelError::DimensionMismatch(format!(
            "B must be {}xm with m >= 1, got {}x{}",
            n,
            b.nrows(),
            b.ncols()
        )));
    }
    if c.ncols() != n || c.nrows() == 0 {
        return Err(ModelError::DimensionMismatch(format!(
            "C must be pxn with p >= 1 and n = {}, got {}x{}",
            n,
            c.nrows(),
            c.ncols()
        )));
    }

    let m = b.ncols();
    let mut ctrb = DMatrix::<f64>::zeros(n, n * m);
    let mut power = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&power);
        power = &a * &power;
    }
    let rank = numeric_rank(&ctrb);
    if rank < n {
        return Err(ModelError::NotControllable { rank, n });
    }

    let p = c.nrows();
    let mut obsv = DMatrix::<f64>::zeros(n * p, n);
    let mut row = c.clone();
    for k in 0..n {
        obsv.view_mut((k * p, 0), (p, n)).copy_from(&row);
        row = &row * &a;
    }
    let rank = numeric_rank(&obsv);
    if rank < n {
        return Err(ModelError::NotObservable { rank, n });
    }

    Ok(SystemModel { a, b, c })
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Halfspace intersection {x : H x <= h}. Zero rows encode the whole space.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    /// Face normal matrix H, one row per face.
    pub h_mat: DMatrix<f64>,
    /// Face offset vector h.
    pub h_vec: DVector<f64>,
}

impl Polytope {
    /// Builds the set and certifies it is nonempty.
    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Self, ModelError> {
        let p = Self::assemble(h_mat, h_vec)?;
        p.chebyshev_center()?;
        Ok(p)
    }

    /// Builds the set and certifies it contains a ball of positive radius.
    pub fn full_dimensional(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Self, ModelError> {
        let p = Self::assemble(h_mat, h_vec)?;
        let (_, radius) = p.chebyshev_center()?;
        if radius <= FULL_DIM_TOL {
            return Err(ModelError::NotFullDimensional { radius });
        }
        Ok(p)
    }

    /// The whole space: zero faces.
    pub fn full_space(dim: usize) -> Self {
        Self { h_mat: DMatrix::zeros(0, dim), h_vec: DVector::zeros(0) }
    }

    /// Axis-aligned box given per-coordinate closed intervals.
    pub fn axis_box(intervals: &[(f64, f64)]) -> Result<Self, ModelError> {
        let dim = intervals.len();
        if let Some((j, _)) = intervals.iter().enumerate().find(|(_, iv)| iv.0 > iv.1) {
            return Err(ModelError::DimensionMismatch(format!(
                "interval {j} has lower bound above upper bound"
            )));
        }
        let mut h_mat = DMatrix::zeros(2 * dim, dim);
        let mut h_vec = DVector::zeros(2 * dim);
        for (j, &(lo, hi)) in intervals.iter().enumerate() {
            h_mat[(2 * j, j)] = 1.0;
            h_vec[2 * j] = hi;
            h_mat[(2 * j + 1, j)] = -1.0;
            h_vec[2 * j + 1] = -lo;
        }
        Ok(Self { h_mat, h_vec })
    }

    /// The box [lo, hi]^dim.
    pub fn uniform_box(lo: f64, hi: f64, dim: usize) -> Result<Self, ModelError> {
        Self::axis_box(&vec![(lo, hi); dim])
    }

    fn assemble(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Self, ModelError> {
        if h_mat.nrows() != h_vec.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "face matrix has {} rows but offset vector has {} entries",
                h_mat.nrows(),
                h_vec.len()
            )));
        }
        Ok(Self { h_mat, h_vec })
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn num_faces(&self) -> usize {
        self.h_mat.nrows()
    }

    /// True when the set is the whole space (no faces).
    pub fn is_free(&self) -> bool {
        self.num_faces() == 0
    }

    /// Membership within an additive tolerance on each face.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.worst_violation(x).map_or(true, |(_, v)| v <= tol)
    }

    /// Largest face violation H_k x - h_k, if positive.
    pub fn worst_violation(&self, x: &DVector<f64>) -> Option<(usize, f64)> {
        let mut worst: Option<(usize, f64)> = None;
        for k in 0..self.num_faces() {
            let v = row_dot(&self.h_mat, k, x) - self.h_vec[k];
            if v > 0.0 && worst.map_or(true, |(_, w)| v > w) {
                worst = Some((k, v));
            }
        }
        worst
    }

    /// Center and radius of a largest inscribed ball, computed by linear
    /// programming. The radius is capped at `RADIUS_CAP` so unbounded sets
    /// certify as full-dimensional without an unbounded program.
    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64), ModelError> {
        if self.is_free() {
            return Ok((DVector::zeros(self.dim()), RADIUS_CAP));
        }
        let mut prog = ConicProgram::new();
        let x = prog.add_vars("x", self.dim());
        let r = prog.add_vars("r", 1);
        for k in 0..self.num_faces() {
            let norm = self.h_mat.row(k).norm();
            let mut e = LinExpr::constant(self.h_vec[k]);
            for j in 0..self.dim() {
                e.add_term(x.idx(j), -self.h_mat[(k, j)]);
            }
            e.add_term(r.scalar(), -norm);
            prog.add_nonneg(e)?;
        }
        prog.add_nonneg(LinExpr::var(r.scalar()))?;
        let mut cap = LinExpr::constant(RADIUS_CAP);
        cap.add_term(r.scalar(), -1.0);
        prog.add_nonneg(cap)?;
        prog.set_objective(LinExpr::term(r.scalar(), -1.0))?;
        let sol = prog.solve(&SolveOptions::default())?;
        match sol.status {
            SolveStatus::Optimal => {
                Ok((DVector::from_column_slice(sol.block(x)), sol.block(r)[0]))
            }
            SolveStatus::Infeasible => Err(ModelError::EmptyPolytope),
            other => Err(ModelError::Numerical(format!("inscribed-ball program ended {other:?}"))),
        }
    }

    /// When every face involves a single coordinate, the per-coordinate
    /// interval bounds (possibly infinite). Returns None for general faces.
    pub fn as_intervals(&self) -> Option<Vec<(f64, f64)>> {
        let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); self.dim()];
        for k in 0..self.num_faces() {
            let mut active: Option<(usize, f64)> = None;
            for j in 0..self.dim() {
                let c = self.h_mat[(k, j)];
                if c != 0.0 {
                    if active.is_some() {
                        return None;
                    }
                    active = Some((j, c));
                }
            }
            match active {
                Some((j, c)) if c > 0.0 => bounds[j].1 = bounds[j].1.min(self.h_vec[k] / c),
                Some((j, c)) => bounds[j].0 = bounds[j].0.max(self.h_vec[k] / c),
                // A zero row with nonnegative offset is vacuous; with a
                // negative offset the set is empty, caught at construction.
                None => {}
            }
        }
        Some(bounds)
    }

    /// Euclidean projection onto the set: coordinate clamping for boxes, a
    /// nearest-point cone program otherwise.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        self.check_dim(x)?;
        if let Some(bounds) = self.as_intervals() {
            return Ok(DVector::from_fn(self.dim(), |j, _| x[j].clamp(bounds[j].0, bounds[j].1)));
        }
        let mut prog = ConicProgram::new();
        let y = prog.add_vars("y", self.dim());
        let t = prog.add_vars("t", 1);
        let w = (0..self.dim())
            .map(|j| {
                let mut e = LinExpr::var(y.idx(j));
                e.add_constant(-x[j]);
                e
            })
            .collect();
        prog.add_rsoc(LinExpr::var(t.scalar()), LinExpr::constant(0.5), w)?;
        for k in 0..self.num_faces() {
            let mut e = LinExpr::constant(self.h_vec[k]);
            for j in 0..self.dim() {
                e.add_term(y.idx(j), -self.h_mat[(k, j)]);
            }
            prog.add_nonneg(e)?;
        }
        prog.set_objective(LinExpr::var(t.scalar()))?;
        let sol = prog.solve(&SolveOptions::default())?;
        match sol.status {
            SolveStatus::Optimal => Ok(DVector::from_column_slice(sol.block(y))),
            SolveStatus::Infeasible => Err(ModelError::EmptyPolytope),
            other => Err(ModelError::Numerical(format!("projection program ended {other:?}"))),
        }
    }

    /// Per-coordinate extreme values over the set, possibly infinite.
    pub fn bounding_box(&self) -> Result<Vec<(f64, f64)>, ModelError> {
        if let Some(bounds) = self.as_intervals() {
            return Ok(bounds);
        }
        let mut out = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let lo = self.extremal_coordinate(j, 1.0)?;
            let hi = self.extremal_coordinate(j, -1.0)?;
            out.push((lo, hi));
        }
        Ok(out)
    }

    fn extremal_coordinate(&self, j: usize, sign: f64) -> Result<f64, ModelError> {
        let mut prog = ConicProgram::new();
        let x = prog.add_vars("x", self.dim());
        for k in 0..self.num_faces() {
            let mut e = LinExpr::constant(self.h_vec[k]);
            for jj in 0..self.dim() {
                e.add_term(x.idx(jj), -self.h_mat[(k, jj)]);
            }
            prog.add_nonneg(e)?;
        }
        prog.set_objective(LinExpr::term(x.idx(j), sign))?;
        let sol = prog.solve(&SolveOptions::default())?;
        match sol.status {
            SolveStatus::Optimal => Ok(sol.block(x)[j]),
            SolveStatus::Unbounded => {
                Ok(if sign > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY })
            }
            SolveStatus::Infeasible => Err(ModelError::EmptyPolytope),
            other => Err(ModelError::Numerical(format!("coordinate bound program ended {other:?}"))),
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "point has dimension {} but the set lives in dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

fn row_dot(m: &DMatrix<f64>, k: usize, x: &DVector<f64>) -> f64 {
    (0..m.ncols()).map(|j| m[(k, j)] * x[j]).sum()
}

/// Euclidean distance from an interior point to the boundary: the minimum
/// over faces of (h_k - H_k x) / |H_k|. Infinite for the whole space.
pub fn boundary_distance(p: &Polytope, x: &DVector<f64>) -> Result<f64, ModelError> {
    p.check_dim(x)?;
    let mut best = f64::INFINITY;
    for k in 0..p.num_faces() {
        let slack = p.h_vec[k] - row_dot(&p.h_mat, k, x);
        if slack < 0.0 {
            return Err(ModelError::PointOutside { row: k, violation: -slack });
        }
        let norm = p.h_mat.row(k).norm();
        if norm > 0.0 {
            best = best.min(slack / norm);
        }
    }
    Ok(best)
}

/// Stage constraint rows G [x; u] <= g enforced as conditional
/// value-at-risk constraints at level gamma. State rows occupy the first n
/// columns, input rows the last m.
#[derive(Clone, Debug, PartialEq)]
pub struct SafetySpec {
    /// Block row matrix [G_x 0; 0 G_u], one row per constraint.
    pub g_mat: DMatrix<f64>,
    /// Offsets, state rows first.
    pub g_vec: DVector<f64>,
    pub j_x: usize,
    pub j_u: usize,
    pub gamma: f64,
}

impl SafetySpec {
    pub fn new(
        state_rows: DMatrix<f64>,
        state_offsets: DVector<f64>,
        input_rows: DMatrix<f64>,
        input_offsets: DVector<f64>,
        gamma: f64,
        n: usize,
        m: usize,
    ) -> Result<Self, ModelError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(ModelError::InvalidGamma(gamma));
        }
        let j_x = state_rows.nrows();
        let j_u = input_rows.nrows();
        if j_x > 0 && state_rows.ncols() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "state rows have {} columns, expected {}",
                state_rows.ncols(),
                n
            )));
        }
        if j_u > 0 && input_rows.ncols() != m {
            return Err(ModelError::DimensionMismatch(format!(
                "input rows have {} columns, expected {}",
                input_rows.ncols(),
                m
            )));
        }
        if state_offsets.len() != j_x || input_offsets.len() != j_u {
            return Err(ModelError::DimensionMismatch(
                "offset lengths do not match row counts".into(),
            ));
        }
        let mut g_mat = DMatrix::zeros(j_x + j_u, n + m);
        let mut g_vec = DVector::zeros(j_x + j_u);
        if j_x > 0 {
            g_mat.view_mut((0, 0), (j_x, n)).copy_from(&state_rows);
            g_vec.rows_mut(0, j_x).copy_from(&state_offsets);
        }
        if j_u > 0 {
            g_mat.view_mut((j_x, n), (j_u, m)).copy_from(&input_rows);
            g_vec.rows_mut(j_x, j_u).copy_from(&input_offsets);
        }
        for k in 0..g_mat.nrows() {
            if g_mat.row(k).norm() == 0.0 {
                return Err(ModelError::ZeroRow(k));
            }
        }
        Ok(Self { g_mat, g_vec, j_x, j_u, gamma })
    }

    /// No constraints at all; gamma retained for uniform plumbing.
    pub fn unconstrained(gamma: f64, n: usize, m: usize) -> Result<Self, ModelError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(ModelError::InvalidGamma(gamma));
        }
        Ok(Self {
            g_mat: DMatrix::zeros(0, n + m),
            g_vec: DVector::zeros(0),
            j_x: 0,
            j_u: 0,
            gamma,
        })
    }

    /// Total row count.
    pub fn j(&self) -> usize {
        self.j_x + self.j_u
    }

    /// State-row block G_x.
    pub fn state_rows(&self, n: usize) -> DMatrix<f64> {
        self.g_mat.view((0, 0), (self.j_x, n)).into_owned()
    }

    /// Input-row block G_u.
    pub fn input_rows(&self, n: usize) -> DMatrix<f64> {
        let m = self.g_mat.ncols() - n;
        self.g_mat.view((self.j_x, n), (self.j_u, m)).into_owned()
    }
}

/// Quadratic stage cost weight D with its symmetric square root cached.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    d: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(d: DMatrix<f64>) -> Result<Self, ModelError> {
        let dim = d.nrows();
        if d.ncols() != dim || dim == 0 {
            return Err(ModelError::DimensionMismatch(format!(
                "cost weight must be square and nonempty, got {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        let scale = d.amax().max(1.0);
        for i in 0..dim {
            for j in 0..i {
                if (d[(i, j)] - d[(j, i)]).abs() > 1e-9 * scale {
                    return Err(ModelError::AsymmetricWeight);
                }
            }
        }
        let eig = d.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig <= 1e-12 * scale {
            return Err(ModelError::NotPositiveDefinite(min_eig));
        }
        let mut sqrt_vals = eig.eigenvalues.clone();
        sqrt_vals.apply(|v| *v = v.sqrt());
        let sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&sqrt_vals)
            * eig.eigenvectors.transpose();
        Ok(Self { d, sqrt })
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Symmetric positive-definite square root of the weight.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    /// Stage cost [x; u]' D [x; u].
    pub fn stage_cost(&self, xu: &DVector<f64>) -> f64 {
        (xu.transpose() * &self.d * xu)[(0, 0)]
    }
}

/// Everything a synthesis run needs about the plant and its requirements.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub system: SystemModel,
    pub cost: CostSpec,
    /// Support of the stacked disturbance window, dimension (n+p)(T+1).
    pub support: Polytope,
    pub safety: SafetySpec,
}

#[derive(Serialize, Deserialize)]
struct RawHalfspaces {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(rename = "h")]
    offsets: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawConstraints {
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    #[serde(rename = "g")]
    offsets: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    support: RawHalfspaces,
    state_constraints: RawConstraints,
    input_constraints: RawConstraints,
    gamma: f64,
}

pub(crate) fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub(crate) fn mat_from_rows(
    what: &str,
    rows: &[Vec<f64>],
    cols_hint: Option<usize>,
) -> Result<DMatrix<f64>, String> {
    let ncols = match rows.first() {
        Some(r) => r.len(),
        None => cols_hint.ok_or_else(|| format!("{what}: empty matrix with unknown width"))?,
    };
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("{what}: ragged rows"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Loads a model file: plant matrices, cost weight, disturbance-window
/// support, and safety constraints, validating each part.
pub fn load_model(path: &Path) -> Result<ModelSpec, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    let raw: RawModel = serde_json::from_str(&text)
        .map_err(|e| ModelError::Format { path: path.display().to_string(), reason: e.to_string() })?;
    model_from_raw(raw).map_err(|e| match e {
        ModelError::Format { reason, .. } => {
            ModelError::Format { path: path.display().to_string(), reason }
        }
        other => other,
    })
}

fn model_from_raw(raw: RawModel) -> Result<ModelSpec, ModelError> {
    let fmt = |reason: String| ModelError::Format { path: String::new(), reason };
    let a = mat_from_rows("A", &raw.a, None).map_err(fmt)?;
    let n = a.nrows();
    let b = mat_from_rows("B", &raw.b, None).map_err(fmt)?;
    let c = mat_from_rows("C", &raw.c, None).map_err(fmt)?;
    let system = validate_system(a, b, c)?;
    let m = system.m();

    let d = mat_from_rows("D", &raw.d, None).map_err(fmt)?;
    if d.nrows() != n + m {
        return Err(fmt(format!("D has side {}, expected n+m = {}", d.nrows(), n + m)));
    }
    let cost = CostSpec::new(d)?;

    let offsets = DVector::from_vec(raw.support.offsets.clone());
    let support = if raw.support.h.is_empty() {
        if offsets.len() != 0 {
            return Err(fmt("support has offsets but no faces".into()));
        }
        return Err(fmt("support must declare its dimension via at least one face; \
                        use an explicit box or extend the loader"
            .into()));
    } else {
        let h = mat_from_rows("support.H", &raw.support.h, None).map_err(fmt)?;
        Polytope::full_dimensional(h, offsets)?
    };

    let gx = mat_from_rows("state_constraints.G", &raw.state_constraints.g, Some(n)).map_err(fmt)?;
    let gu = mat_from_rows("input_constraints.G", &raw.input_constraints.g, Some(m)).map_err(fmt)?;
    let safety = SafetySpec::new(
        gx,
        DVector::from_vec(raw.state_constraints.offsets.clone()),
        gu,
        DVector::from_vec(raw.input_constraints.offsets.clone()),
        raw.gamma,
        n,
        m,
    )?;

    Ok(ModelSpec { system, cost, support, safety })
}

/// Writes a model file readable by `load_model`.
pub fn save_model(spec: &ModelSpec, path: &Path) -> Result<(), ModelError> {
    let n = spec.system.n();
    let raw = RawModel {
        a: mat_rows(&spec.system.a),
        b: mat_rows(&spec.system.b),
        c: mat_rows(&spec.system.c),
        d: mat_rows(spec.cost.weight()),
        support: RawHalfspaces {
            h: mat_rows(&spec.support.h_mat),
            offsets: spec.support.h_vec.iter().copied().collect(),
        },
        state_constraints: RawConstraints {
            g: mat_rows(&spec.safety.state_rows(n)),
            offsets: spec.safety.g_vec.rows(0, spec.safety.j_x).iter().copied().collect(),
        },
        input_constraints: RawConstraints {
            g: mat_rows(&spec.safety.input_rows(n)),
            offsets: spec.safety.g_vec.rows(spec.safety.j_x, spec.safety.j_u).iter().copied().collect(),
        },
        gamma: spec.safety.gamma,
    };
    let text = serde_json::to_string_pretty(&raw).expect("model serialization cannot fail");
    std::fs::write(path, text)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}
