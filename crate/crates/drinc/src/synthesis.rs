//! Controller synthesis as a single conic program: achievability equalities,
//! a Schur epigraph that upper-bounds the quadratic cost matrix by a free
//! matrix variable, the distributionally robust risk blocks for that matrix,
//! and worst-case CVaR safety blocks. Also provides the baseline designs
//! used for benchmarking: an empirical (vanishing-radius) variant, a
//! scenario-based worst-case design, and a moment-based quadratic design.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::conic::{
    ConicError, ConicProgram, ExprMatrix, LinExpr, SolveOptions, SolveStats, SolveStatus,
    Solution, VarBlock,
};
use crate::dro::{DualCertificate, Multipliers, MARGINAL_SLACK, TIGHT_SLACK};
use crate::model::{CostSpec, ModelError, Polytope, SafetySpec, SystemModel};
use crate::samples::SampleSet;
use crate::sls::{
    achievability_residual, build_achievability, AchievabilityConstraints, ClosedLoopMap,
    SlsError,
};

/// Radius substituted for zero in the vanishing-ambiguity baseline; exact
/// zero voids the strong duality behind the risk blocks.
pub const EPSILON_MIN: f64 = 1e-6;
/// Upper limit on scenario counts for the worst-case baseline.
pub const SCENARIO_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("safety constraints cannot be met at this risk level and radius")]
    InfeasibleSafety,
    #[error("synthesis solve ended {status}")]
    SolverFailure { status: String },
    #[error("{requested} scenarios exceed the cap of {cap}")]
    TooManyScenarios { requested: usize, cap: usize },
    #[error("scenario design needs a bounded support")]
    UnboundedSupport,
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Sls(#[from] SlsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// Everything a synthesis run needs: plant, stage cost, safety rows with
/// their risk level, noise support, ball radius, FIR order, and samples.
#[derive(Clone, Debug)]
pub struct SynthesisSpec {
    pub model: SystemModel,
    pub cost: CostSpec,
    pub safety: SafetySpec,
    pub support: Polytope,
    pub epsilon: f64,
    pub t: usize,
    pub samples: SampleSet,
}

impl SynthesisSpec {
    pub fn new(
        model: SystemModel,
        cost: CostSpec,
        safety: SafetySpec,
        support: Polytope,
        epsilon: f64,
        t: usize,
        samples: SampleSet,
    ) -> Result<Self, SynthesisError> {
        let (n, m, p) = (model.n(), model.m(), model.p());
        if cost.dim() != n + m {
            return Err(SynthesisError::InvalidSpec(format!(
                "cost weight has dimension {}, expected n + m = {}",
                cost.dim(),
                n + m
            )));
        }
        if safety.g_mat.ncols() != n + m {
            return Err(SynthesisError::InvalidSpec(format!(
                "safety rows have width {}, expected n + m = {}",
                safety.g_mat.ncols(),
                n + m
            )));
        }
        if t < 1 {
            return Err(SynthesisError::InvalidSpec("FIR order must be at least 1".into()));
        }
        let d = (n + p) * (t + 1);
        if support.dim() != d {
            return Err(SynthesisError::InvalidSpec(format!(
                "support has dimension {}, expected (n+p)(T+1) = {}",
                support.dim(),
                d
            )));
        }
        if samples.width() != d || samples.n != n || samples.p != p || samples.t != t {
            return Err(SynthesisError::InvalidSpec(format!(
                "samples were recorded for (n, p, T) = {:?}, spec has {:?}",
                (samples.n, samples.p, samples.t),
                (n, p, t)
            )));
        }
        if !(epsilon > 0.0) {
            return Err(SynthesisError::InvalidSpec(format!(
                "radius parameter must be positive, got {epsilon}"
            )));
        }
        Ok(Self { model, cost, safety, support, epsilon, t, samples })
    }

    /// Window width (n+p)(T+1).
    pub fn width(&self) -> usize {
        (self.model.n() + self.model.p()) * (self.t + 1)
    }
}

/// Optimal multipliers of the worst-case CVaR blocks.
#[derive(Clone, Debug)]
pub struct SafetyCertificate {
    pub rho: f64,
    pub tau: f64,
    pub zeta: Vec<f64>,
    /// kappa[i][j]: face multipliers per sample and safety row, with the
    /// augmented threshold row last.
    pub kappa: Vec<Vec<Vec<f64>>>,
}

impl SafetyCertificate {
    /// Left side of the budget constraint; nonpositive at a feasible point.
    pub fn budget(&self, epsilon: f64, gamma: f64) -> f64 {
        let mean = self.zeta.iter().sum::<f64>() / self.zeta.len() as f64;
        self.rho * epsilon + (gamma - 1.0) / gamma * self.tau + mean
    }
}

/// A synthesized design with its certificates. The objective is a valid
/// upper bound on the worst-case expected cost whenever the risk blocks were
/// part of the program; `tight` reports whether the bound provably matches
/// the exact risk, recomputed from the returned matrices.
#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub phi_star: ClosedLoopMap,
    pub certificate: DualCertificate,
    /// Present when the spec has safety rows and the design enforced them.
    pub safety: Option<SafetyCertificate>,
    pub objective: f64,
    pub tight: bool,
    /// Epigraph matrix dominating Phi' D Phi.
    pub q_star: DMatrix<f64>,
    pub stats: SolveStats,
}

/// Joint designs mix risk, epigraph, and safety blocks whose optima sit on
/// degenerate cone faces; the gap tolerance is relaxed there while the
/// residual tolerance stays at its default, so certificates keep their
/// feasibility accuracy.
pub fn synthesis_opts() -> SolveOptions {
    SolveOptions { abs_tol: 1e-6, rel_tol: 1e-6, ..SolveOptions::default() }
}

/// Stacked-map variable lookup: rows 0..n are the state map, rows n.. the
/// input map, both row-major over d columns.
fn phi_var(px: VarBlock, pu: VarBlock, n: usize, d: usize) -> impl Fn(usize, usize) -> usize {
    move |row, col| {
        if row < n {
            px.idx(row * d + col)
        } else {
            pu.idx((row - n) * d + col)
        }
    }
}

fn add_achievability(
    prog: &mut ConicProgram,
    cons: &AchievabilityConstraints,
    var_of: &impl Fn(usize, usize) -> usize,
) -> Result<(), ConicError> {
    for eq in cons.equations() {
        let mut e = LinExpr::constant(-eq.rhs);
        for &(row, col, coeff) in &eq.terms {
            e.add_term(var_of(row, col), coeff);
        }
        prog.add_eq(e)?;
    }
    Ok(())
}

/// Expression for entry (r, c) of D^(1/2) Phi.
fn sqrt_cost_row(
    sqrt_d: &DMatrix<f64>,
    var_of: &impl Fn(usize, usize) -> usize,
    r: usize,
    c: usize,
) -> LinExpr {
    let mut e = LinExpr::zero();
    for k in 0..sqrt_d.ncols() {
        let coeff = sqrt_d[(r, k)];
        if coeff != 0.0 {
            e.add_term(var_of(k, c), coeff);
        }
    }
    e
}

fn extract_map(
    sol: &Solution,
    px: VarBlock,
    pu: VarBlock,
    n: usize,
    m: usize,
    d: usize,
    t: usize,
    p: usize,
) -> Result<ClosedLoopMap, SlsError> {
    let phi_x = DMatrix::from_row_slice(n, d, sol.block(px));
    let phi_u = DMatrix::from_row_slice(m, d, sol.block(pu));
    ClosedLoopMap::new(phi_x, phi_u, t, p)
}

/// Largest eigenvalue of Phi' D Phi, from the singular values of
/// D^(1/2) Phi. The radius multiplier is a true worst-case certificate
/// exactly when it reaches this value.
pub fn cost_matrix_top(spec: &SynthesisSpec, phi: &ClosedLoopMap) -> f64 {
    let stacked = stack_map(phi);
    let s = spec.cost.sqrt() * stacked;
    let sigma = s.svd(false, false).singular_values.max();
    sigma * sigma
}

fn stack_map(phi: &ClosedLoopMap) -> DMatrix<f64> {
    let mut stacked = DMatrix::zeros(phi.n + phi.m, phi.width());
    stacked.view_mut((0, 0), (phi.n, phi.width())).copy_from(&phi.phi_x);
    stacked.view_mut((phi.n, 0), (phi.m, phi.width())).copy_from(&phi.phi_u);
    stacked
}

/// Average stage cost of a fixed map over the training samples.
pub fn empirical_cost(spec: &SynthesisSpec, phi: &ClosedLoopMap) -> f64 {
    let stacked = stack_map(phi);
    let sqrt = spec.cost.sqrt();
    let mut acc = 0.0;
    for i in 0..spec.samples.len() {
        acc += (sqrt * &stacked * spec.samples.row(i)).norm_squared();
    }
    acc / spec.samples.len() as f64
}

fn ensure_nonempty(spec: &SynthesisSpec) -> Result<(), SynthesisError> {
    if spec.samples.is_empty() {
        return Err(SynthesisError::EmptySampleSet);
    }
    Ok(())
}

/// Coupling count (samples times matrix-variable entries) above which each
/// sample gets a private epigraph matrix instead of referencing one shared
/// block. Sharing one matrix variable across many dense semidefinite blocks
/// makes the solver's fill-reducing ordering merge their factor blocks, and
/// the factor grows quadratically in the sample count until memory runs
/// out. Private copies keep the factor block-diagonal at the price of one
/// extra epigraph cone per sample; below the threshold the shared form is
/// cheaper and better conditioned.
const SPLIT_THRESHOLD: usize = 4_000;

/// Triangle accessor over a symmetric matrix block.
fn tri_of(block: VarBlock) -> impl Fn(usize, usize) -> usize {
    move |r: usize, c: usize| {
        let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
        block.idx(hi * (hi + 1) / 2 + lo)
    }
}

/// Adds the Schur epigraph [[Q, (D^1/2 Phi)'], [D^1/2 Phi, I]] >= 0 binding
/// one matrix-variable block from above by the closed-loop cost matrix of
/// the map, i.e. Q >= Phi' D Phi.
fn add_cost_epigraph(
    prog: &mut ConicProgram,
    sqrt_d: &DMatrix<f64>,
    var_of: &impl Fn(usize, usize) -> usize,
    q_block: VarBlock,
    d: usize,
    nm: usize,
) -> Result<(), ConicError> {
    let tri = tri_of(q_block);
    let size = d + nm;
    let mut epi = ExprMatrix::zeros(size, size);
    for r in 0..d {
        for c in 0..d {
            epi.set(r, c, LinExpr::var(tri(r, c)));
        }
    }
    for r in 0..nm {
        for c in 0..d {
            let e = sqrt_cost_row(sqrt_d, var_of, r, c);
            epi.set(d + r, c, e.clone());
            epi.set(c, d + r, e);
        }
        for c in 0..nm {
            epi.set(d + r, d + c, LinExpr::constant(if r == c { 1.0 } else { 0.0 }));
        }
    }
    prog.add_psd_block(epi)
}

struct CvarVars {
    rho: VarBlock,
    tau: VarBlock,
    zeta: VarBlock,
    kappa: VarBlock,
}

/// Adds the worst-case CVaR machinery: the budget row, nonnegative face
/// multipliers, and one PSD block per sample and safety row, with the
/// threshold embedded as an extra all-zero row.
fn add_cvar_blocks(
    prog: &mut ConicProgram,
    spec: &SynthesisSpec,
    var_of: &impl Fn(usize, usize) -> usize,
) -> Result<CvarVars, ConicError> {
    let n_samples = spec.samples.len();
    let d = spec.width();
    let j_rows = spec.safety.j();
    let gamma = spec.safety.gamma;
    let h_mat = &spec.support.h_mat;
    let h_vec = &spec.support.h_vec;
    let nf = spec.support.num_faces();

    let rho = prog.add_vars("rho", 1);
    let tau = prog.add_vars("tau", 1);
    let zeta = prog.add_vars("zeta", n_samples);
    let kappa = prog.add_vars("kappa", n_samples * (j_rows + 1) * nf);
    let kap = |i: usize, j: usize, k: usize| kappa.idx((i * (j_rows + 1) + j) * nf + k);

    prog.add_nonneg(LinExpr::var(rho.scalar()))?;
    // rho * eps + ((gamma - 1) / gamma) tau + mean(zeta) <= 0.
    let mut budget = LinExpr::term(rho.scalar(), -spec.epsilon);
    budget.add_term(tau.scalar(), -(gamma - 1.0) / gamma);
    for i in 0..n_samples {
        budget.add_term(zeta.idx(i), -1.0 / n_samples as f64);
    }
    prog.add_nonneg(budget)?;

    for i in 0..n_samples {
        let xi = spec.samples.row(i);
        for j in 0..=j_rows {
            for k in 0..nf {
                prog.add_nonneg(LinExpr::var(kap(i, j, k)))?;
            }
            // Corner: zeta_i - (row cost - threshold)/gamma + slack term.
            let mut corner = LinExpr::term(zeta.idx(i), 1.0);
            if j < j_rows {
                for k in 0..spec.safety.g_mat.ncols() {
                    let g = spec.safety.g_mat[(j, k)];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        corner.add_term(var_of(k, c), -g * xi[c] / gamma);
                    }
                }
                corner.add_constant(spec.safety.g_vec[j] / gamma);
            } else {
                corner.add_term(tau.scalar(), -1.0 / gamma);
            }
            for k in 0..nf {
                let slack = h_mat.row(k).transpose().dot(&xi) - h_vec[k];
                corner.add_term(kap(i, j, k), slack);
            }
            let mut w = Vec::with_capacity(d);
            for c in 0..d {
                // Phi' G_j - gamma H' kappa, one entry per window coordinate.
                let mut e = LinExpr::zero();
                if j < j_rows {
                    for k in 0..spec.safety.g_mat.ncols() {
                        let g = spec.safety.g_mat[(j, k)];
                        if g != 0.0 {
                            e.add_term(var_of(k, c), g);
                        }
                    }
                }
                for k in 0..nf {
                    let coeff = -gamma * h_mat[(k, c)];
                    if coeff != 0.0 {
                        e.add_term(kap(i, j, k), coeff);
                    }
                }
                w.push(e);
            }
            // The matrix form [[corner, b'], [b, 4 rho gamma^2 I]] >= 0 has a
            // scalar diagonal, so it collapses to one rotated cone.
            prog.add_rsoc(corner, LinExpr::term(rho.scalar(), 2.0 * gamma * gamma), w)?;
        }
    }
    Ok(CvarVars { rho, tau, zeta, kappa })
}

fn extract_safety(
    sol: &Solution,
    vars: &CvarVars,
    n_samples: usize,
    j_rows: usize,
    nf: usize,
) -> SafetyCertificate {
    let kappa_vals = sol.block(vars.kappa);
    SafetyCertificate {
        rho: sol.block(vars.rho)[0],
        tau: sol.block(vars.tau)[0],
        zeta: sol.block(vars.zeta).to_vec(),
        kappa: (0..n_samples)
            .map(|i| {
                (0..=j_rows)
                    .map(|j| {
                        (0..nf)
                            .map(|k| kappa_vals[(i * (j_rows + 1) + j) * nf + k])
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Whether any map satisfies the achievability equalities at this order.
fn achievability_feasible(spec: &SynthesisSpec) -> Result<bool, SynthesisError> {
    let (n, m) = (spec.model.n(), spec.model.m());
    let d = spec.width();
    let cons = build_achievability(&spec.model, spec.t);
    let mut prog = ConicProgram::new();
    let px = prog.add_vars("phi_x", n * d);
    let pu = prog.add_vars("phi_u", m * d);
    let var_of = phi_var(px, pu, n, d);
    add_achievability(&mut prog, &cons, &var_of)?;
    prog.set_objective(LinExpr::zero())?;
    let sol = prog.solve(&SolveOptions::default())?;
    Ok(sol.status == SolveStatus::Optimal)
}

/// Translates an infeasible synthesis solve into a precise error: an
/// inconsistent achievability system means the FIR order is too small,
/// otherwise the safety blocks are probed on their own.
fn diagnose_infeasible(spec: &SynthesisSpec, probe_safety: bool) -> SynthesisError {
    match achievability_feasible(spec) {
        Ok(false) => {
            return SynthesisError::InvalidSpec(format!(
                "no achievable closed-loop response at FIR order T = {}; increase T",
                spec.t
            ))
        }
        Ok(true) => {}
        Err(e) => return e,
    }
    if probe_safety {
        match safety_alone_feasible(spec) {
            Ok(false) => return SynthesisError::InfeasibleSafety,
            Ok(true) => {}
            Err(e) => return e,
        }
    }
    SynthesisError::SolverFailure { status: "Infeasible".into() }
}

/// Feasibility probe for the safety blocks alone: achievability plus the
/// CVaR machinery, minimizing the budget multiplier. Distinguishes an
/// impossible safety requirement from a numerical failure of the full
/// program.
fn safety_alone_feasible(spec: &SynthesisSpec) -> Result<bool, SynthesisError> {
    let (n, m) = (spec.model.n(), spec.model.m());
    let d = spec.width();
    let cons = build_achievability(&spec.model, spec.t);
    let mut prog = ConicProgram::new();
    let px = prog.add_vars("phi_x", n * d);
    let pu = prog.add_vars("phi_u", m * d);
    let var_of = phi_var(px, pu, n, d);
    add_achievability(&mut prog, &cons, &var_of)?;
    let vars = add_cvar_blocks(&mut prog, spec, &var_of)?;
    prog.set_objective(LinExpr::var(vars.rho.scalar()))?;
    let sol = prog.solve(&synthesis_opts())?;
    Ok(sol.status == SolveStatus::Optimal)
}

/// Synthesizes the distributionally robust design: one conic program over
/// the map, the epigraph matrix, the risk multipliers, and the CVaR
/// multipliers, minimizing the worst-case expected cost bound.
pub fn synthesize_drinc(spec: &SynthesisSpec) -> Result<SynthesisResult, SynthesisError> {
    synthesize_drinc_with(spec, &synthesis_opts())
}

/// `synthesize_drinc` with caller-chosen solver options.
pub fn synthesize_drinc_with(
    spec: &SynthesisSpec,
    opts: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let split = spec.samples.len() * (spec.width() * (spec.width() + 1) / 2 + 1) >= SPLIT_THRESHOLD;
    synthesize_drinc_split(spec, opts, split)
}

fn synthesize_drinc_split(
    spec: &SynthesisSpec,
    opts: &SolveOptions,
    split: bool,
) -> Result<SynthesisResult, SynthesisError> {
    ensure_nonempty(spec)?;
    let (n, m, p) = (spec.model.n(), spec.model.m(), spec.model.p());
    let d = spec.width();
    let n_samples = spec.samples.len();
    let free_support = spec.support.is_free();
    let nf = spec.support.num_faces();
    let j_rows = spec.safety.j();
    let cons = build_achievability(&spec.model, spec.t);

    let mut prog = ConicProgram::new();
    let px = prog.add_vars("phi_x", n * d);
    let pu = prog.add_vars("phi_u", m * d);
    let qv = prog.add_vars("q", d * (d + 1) / 2);
    let lambda = prog.add_vars("lambda", 1);
    let s = prog.add_vars("s", n_samples);
    let var_of = phi_var(px, pu, n, d);
    let tri = |r: usize, c: usize| {
        let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
        qv.idx(hi * (hi + 1) / 2 + lo)
    };

    add_achievability(&mut prog, &cons, &var_of)?;

    // Cost epigraph: [[Q, (D^1/2 Phi)'], [D^1/2 Phi, I]] >= 0.
    let sqrt_d = spec.cost.sqrt();
    let size = d + n + m;
    let mut epi = ExprMatrix::zeros(size, size);
    for r in 0..d {
        for c in 0..d {
            epi.set(r, c, LinExpr::var(tri(r, c)));
        }
    }
    for r in 0..n + m {
        for c in 0..d {
            let e = sqrt_cost_row(sqrt_d, &var_of, r, c);
            epi.set(d + r, c, e.clone());
            epi.set(c, d + r, e);
        }
        for c in 0..n + m {
            epi.set(d + r, d + c, LinExpr::constant(if r == c { 1.0 } else { 0.0 }));
        }
    }
    prog.add_psd_block(epi)?;

    // Risk blocks for the matrix variable.
    let mut psi_mu = None;
    if free_support {
        for i in 0..n_samples {
            let (tri_i, lam_i) = risk_handles(&mut prog, qv, lambda, d, split)?;
            let lam_q = |r: usize, c: usize, factor: f64| {
                let mut e = LinExpr::term(tri_i(r, c), -factor);
                if r == c {
                    e.add_term(lam_i, factor);
                }
                e
            };
            let xi = spec.samples.row(i);
            let mut block = ExprMatrix::zeros(1 + d, 1 + d);
            let mut corner = LinExpr::term(s.idx(i), 1.0);
            corner.add_term(lam_i, xi.norm_squared());
            block.set(0, 0, corner);
            for r in 0..d {
                let e = LinExpr::term(lam_i, xi[r]);
                block.set(1 + r, 0, e.clone());
                block.set(0, 1 + r, e);
                for c in 0..d {
                    block.set(1 + r, 1 + c, lam_q(r, c, 1.0));
                }
            }
            prog.add_psd_block(block)?;
        }
    } else {
        let h_mat = &spec.support.h_mat;
        let h_vec = &spec.support.h_vec;
        let psi = prog.add_vars("psi", n_samples * nf);
        let mu = prog.add_vars("mu", n_samples * nf);
        let alpha = prog.add_vars("alpha", 1);
        prog.add_nonneg(LinExpr::var(alpha.scalar()))?;
        for i in 0..n_samples {
            let (tri_i, lam_i) = risk_handles(&mut prog, qv, lambda, d, split)?;
            let lam_q = |r: usize, c: usize, factor: f64| {
                let mut e = LinExpr::term(tri_i(r, c), -factor);
                if r == c {
                    e.add_term(lam_i, factor);
                }
                e
            };
            for k in 0..nf {
                prog.add_nonneg(LinExpr::var(mu.idx(i * nf + k)))?;
                let mut gap = LinExpr::term(psi.idx(i * nf + k), 1.0);
                gap.add_term(mu.idx(i * nf + k), -1.0);
                prog.add_nonneg(gap)?;
            }
            let xi = spec.samples.row(i);
            let ht = |block: VarBlock, r: usize, sign: f64| {
                let mut e = LinExpr::zero();
                for k in 0..nf {
                    let coeff = sign * h_mat[(k, r)];
                    if coeff != 0.0 {
                        e.add_term(block.idx(i * nf + k), coeff);
                    }
                }
                e
            };

            let size = 1 + 2 * d;
            let mut big = ExprMatrix::zeros(size, size);
            let mut corner = LinExpr::term(s.idx(i), 1.0);
            corner.add_term(lam_i, xi.norm_squared());
            for k in 0..nf {
                corner.add_term(psi.idx(i * nf + k), -h_vec[k]);
            }
            big.set(0, 0, corner);
            for r in 0..d {
                let mut e = ht(psi, r, -1.0);
                e.add_term(lam_i, 2.0 * xi[r]);
                big.set(1 + r, 0, e.clone());
                big.set(0, 1 + r, e);
                let e = ht(mu, r, 1.0);
                big.set(1 + d + r, 0, e.clone());
                big.set(0, 1 + d + r, e);
                for c in 0..d {
                    big.set(1 + r, 1 + c, lam_q(r, c, 4.0));
                    big.set(1 + d + r, 1 + d + c, LinExpr::term(tri_i(r, c), 4.0));
                }
            }
            prog.add_psd_block(big)?;

            let mut small = ExprMatrix::zeros(1 + d, 1 + d);
            small.set(0, 0, LinExpr::var(alpha.scalar()));
            for r in 0..d {
                let e = ht(mu, r, 1.0);
                small.set(1 + r, 0, e.clone());
                small.set(0, 1 + r, e);
                for c in 0..d {
                    small.set(1 + r, 1 + c, lam_q(r, c, 1.0));
                }
            }
            prog.add_psd_block(small)?;
        }
        psi_mu = Some((psi, mu, alpha));
    }

    let cvar = if j_rows > 0 { Some(add_cvar_blocks(&mut prog, spec, &var_of)?) } else { None };

    let mut objective = LinExpr::term(lambda.scalar(), spec.epsilon);
    for i in 0..n_samples {
        objective.add_term(s.idx(i), 1.0 / n_samples as f64);
    }
    prog.set_objective(objective)?;

    let sol = prog.solve(opts)?;
    if sol.status != SolveStatus::Optimal {
        if sol.status == SolveStatus::Infeasible {
            return Err(diagnose_infeasible(spec, j_rows > 0));
        }
        return Err(SynthesisError::SolverFailure {
            status: format!("{:?} ({})", sol.status, sol.stats.note),
        });
    }

    let phi_star = extract_map(&sol, px, pu, n, m, d, spec.t, p)?;
    let residual = achievability_residual(&phi_star, &cons)?;
    debug_assert!(residual <= 1e-6, "achievability residual {residual}");
    let mut q_star = DMatrix::zeros(d, d);
    let q_vals = sol.block(qv);
    for c in 0..d {
        for r in 0..=c {
            let v = q_vals[c * (c + 1) / 2 + r];
            q_star[(r, c)] = v;
            q_star[(c, r)] = v;
        }
    }
    let lam = sol.block(lambda)[0];
    let s_vals = sol.block(s).to_vec();
    let multipliers = match psi_mu {
        None => Multipliers::FreeQuadratic,
        Some((psi, mu, alpha)) => {
            let psi_vals = sol.block(psi);
            let mu_vals = sol.block(mu);
            Multipliers::BoundedQuadratic {
                psi: (0..n_samples).map(|i| psi_vals[i * nf..(i + 1) * nf].to_vec()).collect(),
                mu: (0..n_samples).map(|i| mu_vals[i * nf..(i + 1) * nf].to_vec()).collect(),
                alpha: sol.block(alpha)[0],
            }
        }
    };
    let top = cost_matrix_top(spec, &phi_star);
    let mean = s_vals.iter().sum::<f64>() / n_samples as f64;
    let objective = lam * spec.epsilon + mean;
    let certificate = DualCertificate {
        lambda: lam,
        s: s_vals,
        multipliers,
        objective,
        marginal: (lam - top).abs() <= MARGINAL_SLACK,
    };
    let safety = cvar.map(|vars| extract_safety(&sol, &vars, n_samples, j_rows, nf));
    Ok(SynthesisResult {
        phi_star,
        certificate,
        safety,
        objective,
        tight: lam >= top - TIGHT_SLACK,
        q_star,
        stats: sol.stats,
    })
}

/// Vanishing-ambiguity baseline: the same program with the radius parameter
/// replaced by a tiny positive floor, so the worst case collapses onto the
/// training distribution.
pub fn synthesize_empirical(spec: &SynthesisSpec) -> Result<SynthesisResult, SynthesisError> {
    synthesize_empirical_with(spec, &synthesis_opts())
}

/// `synthesize_empirical` with caller-chosen solver options.
pub fn synthesize_empirical_with(
    spec: &SynthesisSpec,
    opts: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let mut tiny = spec.clone();
    tiny.epsilon = EPSILON_MIN;
    synthesize_drinc_with(&tiny, opts)
}

/// Draws scenario noise windows: all box vertices when they fit in the
/// budget, otherwise corners biased toward the largest-magnitude endpoints,
/// plus uniform interior draws. All scenarios lie in the support.
fn draw_scenarios(
    support: &Polytope,
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<DVector<f64>>, SynthesisError> {
    let bounds = support.bounding_box()?;
    if bounds.iter().any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite()) {
        return Err(SynthesisError::UnboundedSupport);
    }
    let d = support.dim();
    let mut scenarios: Vec<DVector<f64>> = Vec::with_capacity(count);
    let push_if_inside = |xi: DVector<f64>, out: &mut Vec<DVector<f64>>| {
        if support.contains(&xi, 1e-9) {
            out.push(xi);
        }
    };
    let all_vertices = d <= 20 && count >= (1usize << d);
    if all_vertices {
        for mask in 0..(1usize << d) {
            let xi = DVector::from_fn(d, |r, _| {
                if mask >> r & 1 == 1 { bounds[r].1 } else { bounds[r].0 }
            });
            push_if_inside(xi, &mut scenarios);
        }
    } else {
        // Biased corner draws: each coordinate picks its larger-magnitude
        // endpoint with high probability.
        let corner_budget = count / 2;
        let mut attempts = 0;
        while scenarios.len() < corner_budget && attempts < 100 * count.max(1) {
            attempts += 1;
            let xi = DVector::from_fn(d, |r, _| {
                let (lo, hi) = bounds[r];
                let (big, small) = if hi.abs() >= lo.abs() { (hi, lo) } else { (lo, hi) };
                if rng.random_bool(0.8) {
                    big
                } else {
                    small
                }
            });
            push_if_inside(xi, &mut scenarios);
        }
    }
    let mut attempts = 0;
    while scenarios.len() < count && attempts < 1000 * count.max(1) {
        attempts += 1;
        let xi = DVector::from_fn(d, |r, _| {
            let (lo, hi) = bounds[r];
            if hi > lo { rng.random_range(lo..hi) } else { lo }
        });
        push_if_inside(xi, &mut scenarios);
    }
    if scenarios.len() < count {
        return Err(SynthesisError::InvalidSpec(
            "could not draw enough scenarios inside the support".into(),
        ));
    }
    Ok(scenarios)
}

/// Worst-case scenario baseline: minimizes the largest stage cost over a
/// finite scenario set while enforcing the safety rows deterministically on
/// every scenario.
pub fn synthesize_robust(
    spec: &SynthesisSpec,
    scenario_count: usize,
) -> Result<SynthesisResult, SynthesisError> {
    synthesize_robust_with(spec, scenario_count, &SolveOptions::default())
}

/// `synthesize_robust` with caller-chosen solver options.
pub fn synthesize_robust_with(
    spec: &SynthesisSpec,
    scenario_count: usize,
    opts: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    if scenario_count == 0 || scenario_count > SCENARIO_CAP {
        return Err(SynthesisError::TooManyScenarios {
            requested: scenario_count,
            cap: SCENARIO_CAP,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(0x0DD5EED);
    let scenarios = draw_scenarios(&spec.support, scenario_count, &mut rng)?;

    let (n, m, p) = (spec.model.n(), spec.model.m(), spec.model.p());
    let d = spec.width();
    let cons = build_achievability(&spec.model, spec.t);
    let mut prog = ConicProgram::new();
    let px = prog.add_vars("phi_x", n * d);
    let pu = prog.add_vars("phi_u", m * d);
    let epi = prog.add_vars("epi", 1);
    let var_of = phi_var(px, pu, n, d);
    add_achievability(&mut prog, &cons, &var_of)?;

    let sqrt_d = spec.cost.sqrt();
    for xi in &scenarios {
        // Stage cost epigraph: |D^1/2 Phi xi|^2 <= epi.
        let mut w = Vec::with_capacity(n + m);
        for r in 0..n + m {
            let mut e = LinExpr::zero();
            for k in 0..n + m {
                let coeff = sqrt_d[(r, k)];
                if coeff == 0.0 {
                    continue;
                }
                for c in 0..d {
                    if xi[c] != 0.0 {
                        e.add_term(var_of(k, c), coeff * xi[c]);
                    }
                }
            }
            w.push(e);
        }
        prog.add_rsoc(LinExpr::var(epi.scalar()), LinExpr::constant(0.5), w)?;
        // Deterministic safety rows on the scenario response.
        for j in 0..spec.safety.j() {
            let mut e = LinExpr::constant(spec.safety.g_vec[j]);
            for k in 0..n + m {
                let g = spec.safety.g_mat[(j, k)];
                if g == 0.0 {
                    continue;
                }
                for c in 0..d {
                    if xi[c] != 0.0 {
                        e.add_term(var_of(k, c), -g * xi[c]);
                    }
                }
            }
            prog.add_nonneg(e)?;
        }
    }
    prog.set_objective(LinExpr::var(epi.scalar()))?;
    let sol = prog.solve(opts)?;
    if sol.status != SolveStatus::Optimal {
        if sol.status == SolveStatus::Infeasible {
            return Err(diagnose_infeasible(spec, false));
        }
        return Err(SynthesisError::SolverFailure {
            status: format!("{:?} ({})", sol.status, sol.stats.note),
        });
    }
    let phi_star = extract_map(&sol, px, pu, n, m, d, spec.t, p)?;
    baseline_result(spec, phi_star, sol.block(epi)[0], sol.stats)
}

/// Moment-based baseline: minimizes the exact empirical expected stage cost,
/// which depends on the samples only through their second moment. The
/// moment is factored and the Frobenius norm of D^(1/2) Phi L is minimized.
pub fn synthesize_lqg(spec: &SynthesisSpec) -> Result<SynthesisResult, SynthesisError> {
    synthesize_lqg_with(spec, &SolveOptions::default())
}

/// `synthesize_lqg` with caller-chosen solver options.
pub fn synthesize_lqg_with(
    spec: &SynthesisSpec,
    opts: &SolveOptions,
) -> Result<SynthesisResult, SynthesisError> {
    ensure_nonempty(spec)?;
    let (n, m, p) = (spec.model.n(), spec.model.m(), spec.model.p());
    let d = spec.width();
    let n_samples = spec.samples.len();

    // Second moment (1/N) sum xi xi'.
    let mut moment = DMatrix::zeros(d, d);
    for i in 0..n_samples {
        let xi = spec.samples.row(i);
        moment += &xi * xi.transpose();
    }
    moment /= n_samples as f64;
    let eig = moment.symmetric_eigen();
    let top = eig.eigenvalues.max().max(0.0);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for k in 0..d {
        let val = eig.eigenvalues[k];
        if val > 1e-12 * top.max(1.0) {
            cols.push(eig.eigenvectors.column(k).into_owned() * val.sqrt());
        }
    }
    let rank = cols.len();
    let factor = DMatrix::from_fn(d, rank, |r, c| cols[c][r]);

    let cons = build_achievability(&spec.model, spec.t);
    let mut prog = ConicProgram::new();
    let px = prog.add_vars("phi_x", n * d);
    let pu = prog.add_vars("phi_u", m * d);
    let epi = prog.add_vars("epi", 1);
    let var_of = phi_var(px, pu, n, d);
    add_achievability(&mut prog, &cons, &var_of)?;

    let sqrt_d = spec.cost.sqrt();
    let mut w = Vec::with_capacity((n + m) * rank);
    for r in 0..n + m {
        for col in 0..rank {
            // Entry (r, col) of D^1/2 Phi L.
            let mut e = LinExpr::zero();
            for k in 0..n + m {
                let coeff = sqrt_d[(r, k)];
                if coeff == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let f = coeff * factor[(c, col)];
                    if f != 0.0 {
                        e.add_term(var_of(k, c), f);
                    }
                }
            }
            w.push(e);
        }
    }
    prog.add_rsoc(LinExpr::var(epi.scalar()), LinExpr::constant(0.5), w)?;
    prog.set_objective(LinExpr::var(epi.scalar()))?;
    let sol = prog.solve(opts)?;
    if sol.status != SolveStatus::Optimal {
        if sol.status == SolveStatus::Infeasible {
            return Err(diagnose_infeasible(spec, false));
        }
        return Err(SynthesisError::SolverFailure {
            status: format!("{:?} ({})", sol.status, sol.stats.note),
        });
    }
    let phi_star = extract_map(&sol, px, pu, n, m, d, spec.t, p)?;
    baseline_result(spec, phi_star, sol.block(epi)[0], sol.stats)
}

/// Wraps a baseline design: no risk multipliers, the certificate carries
/// the plain objective, and the epigraph matrix is the realized cost matrix.
fn baseline_result(
    spec: &SynthesisSpec,
    phi_star: ClosedLoopMap,
    objective: f64,
    stats: SolveStats,
) -> Result<SynthesisResult, SynthesisError> {
    let stacked = stack_map(&phi_star);
    let q_star = stacked.transpose() * spec.cost.weight() * &stacked;
    let top = cost_matrix_top(spec, &phi_star);
    let certificate = DualCertificate {
        lambda: 0.0,
        s: vec![objective],
        multipliers: Multipliers::FreeQuadratic,
        objective,
        marginal: top.abs() <= MARGINAL_SLACK,
    };
    Ok(SynthesisResult {
        phi_star,
        certificate,
        safety: None,
        objective,
        tight: 0.0 >= top - TIGHT_SLACK,
        q_star,
        stats,
    })
}

#[derive(Serialize)]
struct RawStats<'a> {
    status: &'a str,
    iterations: u32,
    solve_time: f64,
    primal_residual: f64,
    dual_residual: f64,
}

#[derive(Serialize)]
struct RawResult<'a> {
    objective: f64,
    tight: bool,
    lambda: f64,
    rho: Option<f64>,
    tau: Option<f64>,
    #[serde(rename = "Phi_x")]
    phi_x: Vec<Vec<f64>>,
    #[serde(rename = "Phi_u")]
    phi_u: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    solver_stats: RawStats<'a>,
}

/// Writes the design summary; the executable controller file is produced
/// separately by the realization machinery.
pub fn save_result(result: &SynthesisResult, path: &Path) -> Result<(), SynthesisError> {
    let raw = RawResult {
        objective: result.objective,
        tight: result.tight,
        lambda: result.certificate.lambda,
        rho: result.safety.as_ref().map(|s| s.rho),
        tau: result.safety.as_ref().map(|s| s.tau),
        phi_x: crate::model::mat_rows(&result.phi_star.phi_x),
        phi_u: crate::model::mat_rows(&result.phi_star.phi_u),
        q: crate::model::mat_rows(&result.q_star),
        solver_stats: RawStats {
            status: &result.stats.note,
            iterations: result.stats.iterations,
            solve_time: result.stats.solve_time,
            primal_residual: result.stats.primal_residual,
            dual_residual: result.stats.dual_residual,
        },
    };
    std::fs::write(path, serde_json::to_string_pretty(&raw).expect("plain struct"))
        .map_err(|source| SynthesisError::Io { path: path.display().to_string(), source })
}
