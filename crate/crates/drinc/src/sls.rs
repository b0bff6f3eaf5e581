//! Finite-impulse-response closed-loop maps: the affine equalities that
//! characterize achievable maps, prediction of (x, u) from a noise window,
//! and the executable controller that realizes an achievable map.
//!
//! A map stores Phi_x (n x d) and Phi_u (m x d) with d = (n+p)(T+1). Block
//! k of the w-part sits at columns (T-k)n .. (T-k+1)n and multiplies the
//! process noise with delay k; the v-part follows at offset n(T+1) with the
//! same decreasing-delay layout, so a chronologically ordered window
//! [w_{t-T}..w_t, v_{t-T}..v_t] multiplies straight through.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{ConicError, ConicProgram, LinExpr, SolveOptions, SolveStatus};
use crate::model::{mat_from_rows, mat_rows, SystemModel};

/// Absolute residual below which a map counts as achievable.
pub const ACHIEVABILITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SlsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("map is not achievable: residual {residual:.3e}")]
    NotAchievable { residual: f64 },
    #[error("projection solve ended {status}")]
    SolverFailure { status: String },
    #[error("controller file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// FIR closed-loop maps from the stacked noise window to state and input.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopMap {
    /// n x d map to the state.
    pub phi_x: DMatrix<f64>,
    /// m x d map to the input.
    pub phi_u: DMatrix<f64>,
    pub t: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

impl ClosedLoopMap {
    pub fn new(
        phi_x: DMatrix<f64>,
        phi_u: DMatrix<f64>,
        t: usize,
        p: usize,
    ) -> Result<Self, SlsError> {
        let n = phi_x.nrows();
        let m = phi_u.nrows();
        let d = (n + p) * (t + 1);
        if phi_x.ncols() != d || phi_u.ncols() != d {
            return Err(SlsError::DimensionMismatch(format!(
                "maps have widths {} and {}, expected (n+p)(T+1) = {}",
                phi_x.ncols(),
                phi_u.ncols(),
                d
            )));
        }
        if n == 0 || m == 0 || p == 0 {
            return Err(SlsError::DimensionMismatch("n, m, p must be positive".into()));
        }
        Ok(Self { phi_x, phi_u, t, n, m, p })
    }

    /// Window width (n+p)(T+1).
    pub fn width(&self) -> usize {
        (self.n + self.p) * (self.t + 1)
    }

    /// First column of the delay-k block in the w-part.
    pub fn w_col(&self, k: usize) -> usize {
        (self.t - k) * self.n
    }

    /// First column of the delay-k block in the v-part.
    pub fn v_col(&self, k: usize) -> usize {
        (self.t + 1) * self.n + (self.t - k) * self.p
    }

    /// Delay-k block of the w-to-state map (n x n).
    pub fn xw(&self, k: usize) -> DMatrix<f64> {
        self.phi_x.view((0, self.w_col(k)), (self.n, self.n)).into_owned()
    }

    /// Delay-k block of the v-to-state map (n x p).
    pub fn xv(&self, k: usize) -> DMatrix<f64> {
        self.phi_x.view((0, self.v_col(k)), (self.n, self.p)).into_owned()
    }

    /// Delay-k block of the w-to-input map (m x n).
    pub fn uw(&self, k: usize) -> DMatrix<f64> {
        self.phi_u.view((0, self.w_col(k)), (self.m, self.n)).into_owned()
    }

    /// Delay-k block of the v-to-input map (m x p).
    pub fn uv(&self, k: usize) -> DMatrix<f64> {
        self.phi_u.view((0, self.v_col(k)), (self.m, self.p)).into_owned()
    }
}

/// One affine equality over the entries of the stacked map [Phi_x; Phi_u]:
/// sum of coeff * entry(row, col) equals rhs.
#[derive(Clone, Debug)]
pub struct LinearEquation {
    pub terms: Vec<(usize, usize, f64)>,
    pub rhs: f64,
}

/// The affine equalities characterizing achievable maps for a plant at FIR
/// order T, together with the window-selection matrices used by the
/// equivalent stacked formulation.
#[derive(Clone, Debug)]
pub struct AchievabilityConstraints {
    equations: Vec<LinearEquation>,
    /// [I_{T+1}, 0] of shape (T+1) x (T+2): selects current blocks.
    pub z_plus: DMatrix<f64>,
    /// [0, I_{T+1}]: selects blocks shifted one step.
    pub z_minus: DMatrix<f64>,
    /// Last row of z_plus.
    pub z_plus_last: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub t: usize,
}

impl AchievabilityConstraints {
    pub fn equations(&self) -> &[LinearEquation] {
        &self.equations
    }

    /// Width of the stacked map the equations act on.
    pub fn width(&self) -> usize {
        (self.n + self.p) * (self.t + 1)
    }

    /// Rows of the stacked map: n state rows then m input rows.
    pub fn stacked_rows(&self) -> usize {
        self.n + self.m
    }
}

/// Builds the affine equalities equivalent to achievability of an FIR map
/// of order T >= 1: strict causality of the delay-0 blocks, the delay-1
/// initial conditions, and both one-step recursions for every delay with
/// the T+1 blocks pinned to zero.
pub fn build_achievability(model: &SystemModel, t: usize) -> AchievabilityConstraints {
    assert!(t >= 1, "FIR order must be at least 1");
    let (n, m, p) = (model.n(), model.m(), model.p());
    let (a, b, c) = (&model.a, &model.b, &model.c);
    let w_col = |k: usize| (t - k) * n;
    let v_col = |k: usize| (t + 1) * n + (t - k) * p;
    let x_row = |r: usize| r;
    let u_row = |r: usize| n + r;

    let mut eqs: Vec<LinearEquation> = Vec::new();

    // Delay-0 blocks vanish: the state cannot react to the current noise
    // and the input cannot react to the current process noise.
    for r in 0..n {
        for j in 0..n {
            eqs.push(LinearEquation { terms: vec![(x_row(r), w_col(0) + j, 1.0)], rhs: 0.0 });
        }
        for j in 0..p {
            eqs.push(LinearEquation { terms: vec![(x_row(r), v_col(0) + j, 1.0)], rhs: 0.0 });
        }
    }
    for r in 0..m {
        for j in 0..n {
            eqs.push(LinearEquation { terms: vec![(u_row(r), w_col(0) + j, 1.0)], rhs: 0.0 });
        }
    }

    // Delay-1 blocks: Phi_xw(1) = I, Phi_xv(1) = B Phi_uv(0),
    // Phi_uw(1) = Phi_uv(0) C.
    for r in 0..n {
        for j in 0..n {
            eqs.push(LinearEquation {
                terms: vec![(x_row(r), w_col(1) + j, 1.0)],
                rhs: if r == j { 1.0 } else { 0.0 },
            });
        }
        for j in 0..p {
            let mut terms = vec![(x_row(r), v_col(1) + j, 1.0)];
            for q in 0..m {
                terms.push((u_row(q), v_col(0) + j, -b[(r, q)]));
            }
            eqs.push(LinearEquation { terms, rhs: 0.0 });
        }
    }
    for r in 0..m {
        for j in 0..n {
            let mut terms = vec![(u_row(r), w_col(1) + j, 1.0)];
            for q in 0..p {
                terms.push((u_row(r), v_col(0) + q, -c[(q, j)]));
            }
            eqs.push(LinearEquation { terms, rhs: 0.0 });
        }
    }

    // One-step recursions for k = 1..T; at k = T the left side is the
    // vanished T+1 block, so only the right side remains.
    for k in 1..=t {
        let lead = k < t;
        // Phi_xw(k+1) = A Phi_xw(k) + B Phi_uw(k)
        for r in 0..n {
            for j in 0..n {
                let mut terms = Vec::new();
                if lead {
                    terms.push((x_row(r), w_col(k + 1) + j, 1.0));
                }
                for q in 0..n {
                    terms.push((x_row(q), w_col(k) + j, -a[(r, q)]));
                }
                for q in 0..m {
                    terms.push((u_row(q), w_col(k) + j, -b[(r, q)]));
                }
                eqs.push(LinearEquation { terms, rhs: 0.0 });
            }
        }
        // Phi_xv(k+1) = A Phi_xv(k) + B Phi_uv(k)
        for r in 0..n {
            for j in 0..p {
                let mut terms = Vec::new();
                if lead {
                    terms.push((x_row(r), v_col(k + 1) + j, 1.0));
                }
                for q in 0..n {
                    terms.push((x_row(q), v_col(k) + j, -a[(r, q)]));
                }
                for q in 0..m {
                    terms.push((u_row(q), v_col(k) + j, -b[(r, q)]));
                }
                eqs.push(LinearEquation { terms, rhs: 0.0 });
            }
        }
        // Phi_xw(k+1) = Phi_xw(k) A + Phi_xv(k) C
        for r in 0..n {
            for j in 0..n {
                let mut terms = Vec::new();
                if lead {
                    terms.push((x_row(r), w_col(k + 1) + j, 1.0));
                }
                for q in 0..n {
                    terms.push((x_row(r), w_col(k) + q, -a[(q, j)]));
                }
                for q in 0..p {
                    terms.push((x_row(r), v_col(k) + q, -c[(q, j)]));
                }
                eqs.push(LinearEquation { terms, rhs: 0.0 });
            }
        }
        // Phi_uw(k+1) = Phi_uw(k) A + Phi_uv(k) C
        for r in 0..m {
            for j in 0..n {
                let mut terms = Vec::new();
                if lead {
                    terms.push((u_row(r), w_col(k + 1) + j, 1.0));
                }
                for q in 0..n {
                    terms.push((u_row(r), w_col(k) + q, -a[(q, j)]));
                }
                for q in 0..p {
                    terms.push((u_row(r), v_col(k) + q, -c[(q, j)]));
                }
                eqs.push(LinearEquation { terms, rhs: 0.0 });
            }
        }
    }

    let mut z_plus = DMatrix::zeros(t + 1, t + 2);
    let mut z_minus = DMatrix::zeros(t + 1, t + 2);
    for k in 0..=t {
        z_plus[(k, k)] = 1.0;
        z_minus[(k, k + 1)] = 1.0;
    }
    let z_plus_last = z_plus.rows(t, 1).into_owned();

    AchievabilityConstraints { equations: eqs, z_plus, z_minus, z_plus_last, n, m, p, t }
}

fn stacked_entry(phi: &ClosedLoopMap, row: usize, col: usize) -> f64 {
    if row < phi.n {
        phi.phi_x[(row, col)]
    } else {
        phi.phi_u[(row - phi.n, col)]
    }
}

/// Euclidean norm of the stacked equality violations; zero iff achievable.
pub fn achievability_residual(
    phi: &ClosedLoopMap,
    cons: &AchievabilityConstraints,
) -> Result<f64, SlsError> {
    if (phi.n, phi.m, phi.p, phi.t) != (cons.n, cons.m, cons.p, cons.t) {
        return Err(SlsError::DimensionMismatch(format!(
            "map has (n,m,p,T) = {:?}, constraints have {:?}",
            (phi.n, phi.m, phi.p, phi.t),
            (cons.n, cons.m, cons.p, cons.t)
        )));
    }
    let mut acc = 0.0;
    for eq in &cons.equations {
        let mut v = -eq.rhs;
        for &(row, col, coeff) in &eq.terms {
            v += coeff * stacked_entry(phi, row, col);
        }
        acc += v * v;
    }
    Ok(acc.sqrt())
}

/// Least-squares projection of an arbitrary target map onto the achievable
/// affine subspace. With a random target this produces a generic achievable
/// map; it doubles as a feasibility check for the constraint set.
pub fn nearest_achievable(
    cons: &AchievabilityConstraints,
    target_x: &DMatrix<f64>,
    target_u: &DMatrix<f64>,
) -> Result<ClosedLoopMap, SlsError> {
    let d = cons.width();
    let (n, m) = (cons.n, cons.m);
    if target_x.nrows() != n || target_x.ncols() != d || target_u.nrows() != m
        || target_u.ncols() != d
    {
        return Err(SlsError::DimensionMismatch(format!(
            "targets must be {}x{} and {}x{}",
            n, d, m, d
        )));
    }
    let mut prog = ConicProgram::new();
    let px = prog.add_vars("phi_x", n * d);
    let pu = prog.add_vars("phi_u", m * d);
    let epi = prog.add_vars("epi", 1);
    let var_of = |row: usize, col: usize| {
        if row < n {
            px.idx(row * d + col)
        } else {
            pu.idx((row - n) * d + col)
        }
    };
    for eq in &cons.equations {
        let mut e = LinExpr::constant(-eq.rhs);
        for &(row, col, coeff) in &eq.terms {
            e.add_term(var_of(row, col), coeff);
        }
        prog.add_eq(e)?;
    }
    let mut w = Vec::with_capacity((n + m) * d);
    for row in 0..n + m {
        for col in 0..d {
            let target =
                if row < n { target_x[(row, col)] } else { target_u[(row - n, col)] };
            let mut e = LinExpr::var(var_of(row, col));
            e.add_constant(-target);
            w.push(e);
        }
    }
    prog.add_rsoc(LinExpr::var(epi.scalar()), LinExpr::constant(0.5), w)?;
    prog.set_objective(LinExpr::var(epi.scalar()))?;
    let sol = prog.solve(&SolveOptions::default())?;
    if sol.status != SolveStatus::Optimal {
        return Err(SlsError::SolverFailure { status: format!("{:?}", sol.status) });
    }
    let phi_x = DMatrix::from_row_slice(n, d, sol.block(px));
    let phi_u = DMatrix::from_row_slice(m, d, sol.block(pu));
    ClosedLoopMap::new(phi_x, phi_u, cons.t, cons.p)
}

/// Predicted state and input for a chronologically ordered noise window
/// [w_{t-T}..w_t, v_{t-T}..v_t].
pub fn fir_predict(
    phi: &ClosedLoopMap,
    window: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SlsError> {
    if window.len() != phi.width() {
        return Err(SlsError::DimensionMismatch(format!(
            "window has length {}, expected {}",
            window.len(),
            phi.width()
        )));
    }
    Ok((&phi.phi_x * window, &phi.phi_u * window))
}

/// Executable linear controller realizing an achievable map. The internal
/// state stacks the deviation history [d_{t-T}..d_{t-1}] over the measured
/// output history [y_{t-T-1}..y_{t-1}], oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerRealization {
    pub a_k: DMatrix<f64>,
    pub b_k: DMatrix<f64>,
    pub c_k: DMatrix<f64>,
    state: DVector<f64>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub t: usize,
}

impl ControllerRealization {
    pub fn state_dim(&self) -> usize {
        self.n * self.t + self.p * (self.t + 1)
    }

    /// Zeroes the internal histories.
    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    /// Consumes the measurement y_t, updates the histories, and returns u_t.
    pub fn step(&mut self, y: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(y.len(), self.p);
        self.state = &self.a_k * &self.state + &self.b_k * y;
        &self.c_k * &self.state
    }
}

/// Column partition of a map into the widths n(T-1), 2n, pT, p used by the
/// controller assembly.
fn partition(mat: &DMatrix<f64>, n: usize, p: usize, t: usize) -> [DMatrix<f64>; 4] {
    let rows = mat.nrows();
    let widths = [n * (t - 1), 2 * n, p * t, p];
    let mut start = 0;
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    for w in widths {
        out.push(mat.view((0, start), (rows, w)).into_owned());
        start += w;
    }
    out.try_into().expect("four blocks")
}

/// Builds the executable controller for an achievable map: a shift-register
/// system over the deviation and output histories whose output reproduces
/// the map exactly once the histories fill.
pub fn realize_controller(
    phi: &ClosedLoopMap,
    model: &SystemModel,
) -> Result<ControllerRealization, SlsError> {
    if (model.n(), model.m(), model.p()) != (phi.n, phi.m, phi.p) {
        return Err(SlsError::DimensionMismatch(format!(
            "plant has (n,m,p) = {:?}, map has {:?}",
            (model.n(), model.m(), model.p()),
            (phi.n, phi.m, phi.p)
        )));
    }
    let cons = build_achievability(model, phi.t);
    let residual = achievability_residual(phi, &cons)?;
    if residual > ACHIEVABILITY_TOL {
        return Err(SlsError::NotAchievable { residual });
    }

    let (n, m, p, t) = (phi.n, phi.m, phi.p, phi.t);
    let [x1, _, x3, x4] = partition(&phi.phi_x, n, p, t);
    let [u5, _, u7, u8] = partition(&phi.phi_u, n, p, t);
    let dim = n * t + p * (t + 1);
    // Column offsets skip the oldest history entry, which falls off on the
    // shift; row offsets place the blocks of the next state.
    let (c2, c4) = (n, n * t + p);
    let (r1, r2, r3, r4) = (0, n * (t - 1), n * t, n * t + p * t);

    let mut a_k = DMatrix::zeros(dim, dim);
    // Shift the deviation history and append the new deviation.
    a_k.view_mut((r1, c2), (n * (t - 1), n * (t - 1)))
        .copy_from(&DMatrix::identity(n * (t - 1), n * (t - 1)));
    a_k.view_mut((r2, c2), (n, n * (t - 1))).copy_from(&(-&x1));
    a_k.view_mut((r2, c4), (n, p * t)).copy_from(&(-&x3));
    // Shift the output history; the newest slot comes from the input matrix.
    a_k.view_mut((r3, c4), (p * t, p * t)).copy_from(&DMatrix::identity(p * t, p * t));

    let mut b_k = DMatrix::zeros(dim, p);
    b_k.view_mut((r2, 0), (n, p)).copy_from(&(-&x4));
    b_k.view_mut((r4, 0), (p, p)).copy_from(&DMatrix::identity(p, p));

    let mut c_k = DMatrix::zeros(m, dim);
    c_k.view_mut((0, r1), (m, n * (t - 1))).copy_from(&u5);
    c_k.view_mut((0, r2), (m, n)).copy_from(&(&u8 * &model.c));
    c_k.view_mut((0, r3), (m, p * t)).copy_from(&u7);
    c_k.view_mut((0, r4), (m, p)).copy_from(&u8);

    Ok(ControllerRealization { a_k, b_k, c_k, state: DVector::zeros(dim), n, m, p, t })
}

#[derive(Serialize, Deserialize)]
struct RawController {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "Phi_x")]
    phi_x: Vec<Vec<f64>>,
    #[serde(rename = "Phi_u")]
    phi_u: Vec<Vec<f64>>,
    #[serde(rename = "A_K")]
    a_k: Vec<Vec<f64>>,
    #[serde(rename = "B_K")]
    b_k: Vec<Vec<f64>>,
    #[serde(rename = "C_K")]
    c_k: Vec<Vec<f64>>,
}

/// Writes the map together with its realization.
pub fn save_controller(
    phi: &ClosedLoopMap,
    realization: &ControllerRealization,
    path: &Path,
) -> Result<(), SlsError> {
    let raw = RawController {
        t: phi.t,
        phi_x: mat_rows(&phi.phi_x),
        phi_u: mat_rows(&phi.phi_u),
        a_k: mat_rows(&realization.a_k),
        b_k: mat_rows(&realization.b_k),
        c_k: mat_rows(&realization.c_k),
    };
    std::fs::write(path, serde_json::to_string_pretty(&raw).expect("plain struct"))
        .map_err(|source| SlsError::Io { path: path.display().to_string(), source })
}

/// Reads a controller file back into a map and a realization with zeroed
/// histories. The output dimension is recovered from the map width.
pub fn load_controller(path: &Path) -> Result<(ClosedLoopMap, ControllerRealization), SlsError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| SlsError::Io { path: name.clone(), source })?;
    let raw: RawController = serde_json::from_str(&text)
        .map_err(|e| SlsError::Format { path: name.clone(), reason: e.to_string() })?;
    let fmt = |reason: String| SlsError::Format { path: name.clone(), reason };
    let phi_x = mat_from_rows("Phi_x", &raw.phi_x, None).map_err(fmt)?;
    let phi_u = mat_from_rows("Phi_u", &raw.phi_u, None).map_err(fmt)?;
    let fmt = |reason: String| SlsError::Format { path: name.clone(), reason };
    let (n, m, d) = (phi_x.nrows(), phi_u.nrows(), phi_x.ncols());
    if d % (raw.t + 1) != 0 || d / (raw.t + 1) <= n {
        return Err(fmt(format!("map width {} inconsistent with T = {}", d, raw.t)));
    }
    let p = d / (raw.t + 1) - n;
    let phi = ClosedLoopMap::new(phi_x, phi_u, raw.t, p)?;
    let fmt = |reason: String| SlsError::Format { path: name.clone(), reason };
    let a_k = mat_from_rows("A_K", &raw.a_k, None).map_err(fmt)?;
    let fmt = |reason: String| SlsError::Format { path: name.clone(), reason };
    let b_k = mat_from_rows("B_K", &raw.b_k, Some(p)).map_err(fmt)?;
    let fmt = |reason: String| SlsError::Format { path: name.clone(), reason };
    let c_k = mat_from_rows("C_K", &raw.c_k, None).map_err(fmt)?;
    let dim = n * raw.t + p * (raw.t + 1);
    if a_k.nrows() != dim || a_k.ncols() != dim || b_k.nrows() != dim || b_k.ncols() != p
        || c_k.nrows() != m || c_k.ncols() != dim
    {
        return Err(SlsError::Format {
            path: name,
            reason: format!("realization blocks inconsistent with state dimension {dim}"),
        });
    }
    let realization = ControllerRealization {
        a_k,
        b_k,
        c_k,
        state: DVector::zeros(dim),
        n,
        m,
        p,
        t: raw.t,
    };
    Ok((phi, realization))
}
