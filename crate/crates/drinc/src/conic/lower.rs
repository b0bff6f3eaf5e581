//! Lowering to the Clarabel interior-point backend.
//!
//! Convention: the backend solves `min q'x  s.t.  A x + s = b, s in K`, so
//! every constraint expression `e` becomes a slack row `s = e(x)` via
//! `A_row = -coeffs(e)`, `b_row = constant(e)`. Cone order: zero cone
//! (equalities), nonnegative orthant, one second-order cone per rotated
//! cone, one PSD triangle cone per PSD block. PSD rows are scaled-vectorized
//! (off-diagonal entries times sqrt(2), upper triangle column-major).

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, PSDTriangleConeT, SolverStatus, SupportedConeT,
};

use super::{ConicError, ConicProgram, LinExpr, Solution, SolveOptions, SolveStats, SolveStatus};

const SQRT2: f64 = std::f64::consts::SQRT_2;

struct RowBuilder {
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
}

impl RowBuilder {
    fn new() -> Self {
        Self { triplets: Vec::new(), b: Vec::new() }
    }

    /// Appends the slack row `s = scale * e(x)`.
    fn push(&mut self, e: &LinExpr, scale: f64) {
        let row = self.b.len();
        for &(ix, c) in &e.terms {
            self.triplets.push((row, ix, -c * scale));
        }
        self.b.push(e.constant * scale);
    }
}

fn csc_from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    t.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = Vec::with_capacity(ncols + 1);
    let mut rowval = Vec::with_capacity(t.len());
    let mut nzval = Vec::with_capacity(t.len());
    let mut k = 0usize;
    colptr.push(0);
    for col in 0..ncols {
        while k < t.len() && t[k].1 == col {
            rowval.push(t[k].0);
            nzval.push(t[k].2);
            k += 1;
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

pub(super) fn solve_clarabel(
    prog: &ConicProgram,
    opts: &SolveOptions,
) -> Result<Solution, ConicError> {
    let n = prog.num_vars();
    let mut q = vec![0.0; n];
    for &(ix, c) in &prog.objective().terms {
        q[ix] += c;
    }
    let obj_const = prog.objective().constant;

    let mut rows = RowBuilder::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let n_eq = prog.eq_constraints().len();
    for e in prog.eq_constraints() {
        rows.push(e, 1.0);
    }
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }

    let n_ineq = prog.nonneg_constraints().len();
    for e in prog.nonneg_constraints() {
        rows.push(e, 1.0);
    }
    if n_ineq > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_ineq));
    }

    for r in prog.rsoc_constraints() {
        // Rotated cone (u, v, w) maps to the standard second-order cone
        // [(u+v)/sqrt2, (u-v)/sqrt2, w].
        let mut t = LinExpr::zero();
        t.add_scaled(&r.u, 1.0 / SQRT2);
        t.add_scaled(&r.v, 1.0 / SQRT2);
        t.normalize();
        let mut z1 = LinExpr::zero();
        z1.add_scaled(&r.u, 1.0 / SQRT2);
        z1.add_scaled(&r.v, -1.0 / SQRT2);
        z1.normalize();
        rows.push(&t, 1.0);
        rows.push(&z1, 1.0);
        for e in &r.w {
            rows.push(e, 1.0);
        }
        cones.push(SupportedConeT::SecondOrderConeT(2 + r.w.len()));
    }

    for p in prog.psd_constraints() {
        let mut k = 0usize;
        for j in 0..p.dim {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { SQRT2 };
                rows.push(&p.tri[k], scale);
                k += 1;
            }
        }
        cones.push(PSDTriangleConeT(p.dim));
    }

    let m = rows.b.len();
    if m == 0 {
        // No constraints: optimal at the origin iff the objective gradient
        // vanishes, otherwise the program is unbounded below.
        let unbounded = q.iter().any(|&c| c != 0.0);
        return Ok(Solution {
            status: if unbounded { SolveStatus::Unbounded } else { SolveStatus::Optimal },
            x: vec![0.0; n],
            objective: obj_const,
            eq_duals: Vec::new(),
            nonneg_duals: Vec::new(),
            rsoc_duals: Vec::new(),
            psd_duals: Vec::new(),
            stats: SolveStats { note: "trivial".to_string(), ..Default::default() },
        });
    }

    let a = csc_from_triplets(m, n, rows.triplets);
    let p = CscMatrix::zeros((n, n));
    let settings = DefaultSettings {
        verbose: opts.verbose,
        max_iter: opts.max_iter.min(u32::MAX as usize) as u32,
        tol_gap_abs: opts.abs_tol,
        tol_gap_rel: opts.rel_tol,
        tol_feas: opts.feas_tol,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings)
        .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
    solver.solve();

    let raw_status = solver.solution.status;
    let status = match raw_status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };

    let x = solver.solution.x.clone();
    let z = &solver.solution.z;

    let mut offset = 0usize;
    let eq_duals = z[offset..offset + n_eq].to_vec();
    offset += n_eq;
    let nonneg_duals = z[offset..offset + n_ineq].to_vec();
    offset += n_ineq;
    let mut rsoc_duals = Vec::with_capacity(prog.rsoc_constraints().len());
    for r in prog.rsoc_constraints() {
        let len = 2 + r.w.len();
        rsoc_duals.push(z[offset..offset + len].to_vec());
        offset += len;
    }
    let mut psd_duals = Vec::with_capacity(prog.psd_constraints().len());
    for p in prog.psd_constraints() {
        let len = p.dim * (p.dim + 1) / 2;
        let mut dual = z[offset..offset + len].to_vec();
        let mut k = 0usize;
        for j in 0..p.dim {
            for i in 0..=j {
                if i != j {
                    dual[k] /= SQRT2;
                }
                k += 1;
            }
        }
        psd_duals.push(dual);
        offset += len;
    }

    Ok(Solution {
        status,
        objective: solver.solution.obj_val + obj_const,
        x,
        eq_duals,
        nonneg_duals,
        rsoc_duals,
        psd_duals,
        stats: SolveStats {
            iterations: solver.info.iterations,
            solve_time: solver.info.solve_time,
            primal_residual: solver.info.res_primal,
            dual_residual: solver.info.res_dual,
            note: format!("{raw_status:?}"),
        },
    })
}
