use super::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn solve_default(prog: &ConicProgram) -> Solution {
    prog.solve(&SolveOptions::default()).unwrap()
}

/// min lambda s.t. lambda*I - Q >= 0 for Q = diag(1,3).
#[test]
fn lambda_max_of_diagonal() {
    let mut prog = ConicProgram::new();
    let lam = prog.add_vars("lambda", 1);
    let mut m = ExprMatrix::zeros(2, 2);
    let mut d0 = LinExpr::var(lam.scalar());
    d0.add_constant(-1.0);
    let mut d1 = LinExpr::var(lam.scalar());
    d1.add_constant(-3.0);
    m.set(0, 0, d0);
    m.set(1, 1, d1);
    prog.add_psd_block(m).unwrap();
    prog.set_objective(LinExpr::var(lam.scalar())).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.objective - 3.0).abs() < 1e-7, "objective {}", sol.objective);
}

/// max t s.t. [[1,t],[t,1]] >= 0 has optimum 1; a wrong off-diagonal
/// vectorization scale would shift the optimum to sqrt(2) or 1/sqrt(2).
#[test]
fn off_diagonal_scaling() {
    let mut prog = ConicProgram::new();
    let t = prog.add_vars("t", 1);
    let mut m = ExprMatrix::zeros(2, 2);
    m.set(0, 0, LinExpr::constant(1.0));
    m.set(1, 1, LinExpr::constant(1.0));
    m.set(0, 1, LinExpr::var(t.scalar()));
    m.set(1, 0, LinExpr::var(t.scalar()));
    prog.add_psd_block(m).unwrap();
    prog.set_objective(LinExpr::term(t.scalar(), -1.0)).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.value(&LinExpr::var(t.scalar())) - 1.0).abs() < 1e-6);
}

/// A 1x1 PSD block is the constraint x >= 0.
#[test]
fn scalar_psd_block() {
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 1);
    let mut m = ExprMatrix::zeros(1, 1);
    m.set(0, 0, LinExpr::var(x.scalar()));
    prog.add_psd_block(m).unwrap();
    prog.set_objective(LinExpr::var(x.scalar())).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.objective.abs() < 1e-7);
}

/// Diagonal PSD block enforces nonnegativity of each diagonal entry.
#[test]
fn diagonal_psd_block_both_signs() {
    for target in 0..2 {
        let mut prog = ConicProgram::new();
        let v = prog.add_vars("v", 2);
        let mut m = ExprMatrix::zeros(2, 2);
        m.set(0, 0, LinExpr::var(v.idx(0)));
        m.set(1, 1, LinExpr::var(v.idx(1)));
        prog.add_psd_block(m).unwrap();
        prog.set_objective(LinExpr::var(v.idx(target))).unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-7);
    }
}

#[test]
fn contradictory_scalars_are_infeasible() {
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 1);
    let mut m1 = ExprMatrix::zeros(1, 1);
    m1.set(0, 0, LinExpr::var(x.scalar()));
    prog.add_psd_block(m1).unwrap();
    let mut neg = LinExpr::term(x.scalar(), -1.0);
    neg.add_constant(-1.0);
    let mut m2 = ExprMatrix::zeros(1, 1);
    m2.set(0, 0, neg);
    prog.add_psd_block(m2).unwrap();
    prog.set_objective(LinExpr::zero()).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn unconstrained_linear_is_unbounded() {
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 1);
    prog.set_objective(LinExpr::term(x.scalar(), -1.0)).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Unbounded);
}

#[test]
fn one_sided_linear_is_unbounded() {
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 1);
    prog.add_nonneg(LinExpr::var(x.scalar())).unwrap();
    prog.set_objective(LinExpr::term(x.scalar(), -1.0)).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Unbounded);
}

/// min u s.t. 2*u*1 >= 3^2 + 4^2 gives u = 12.5.
#[test]
fn rotated_cone_with_constant_tail() {
    let mut prog = ConicProgram::new();
    let u = prog.add_vars("u", 1);
    prog.add_rsoc(
        LinExpr::var(u.scalar()),
        LinExpr::constant(1.0),
        vec![LinExpr::constant(3.0), LinExpr::constant(4.0)],
    )
    .unwrap();
    prog.set_objective(LinExpr::var(u.scalar())).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.objective - 12.5).abs() < 1e-6, "objective {}", sol.objective);
}

/// min x s.t. x >= 3: optimum 3 with multiplier 1 on the active row.
#[test]
fn nonneg_dual_value() {
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 1);
    let mut row = LinExpr::var(x.scalar());
    row.add_constant(-3.0);
    let h = prog.add_nonneg(row).unwrap();
    prog.set_objective(LinExpr::var(x.scalar())).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.objective - 3.0).abs() < 1e-7);
    assert!((sol.nonneg_dual(h) - 1.0).abs() < 1e-6);
}

#[test]
fn equality_pins_variable() {
    let mut prog = ConicProgram::new();
    let v = prog.add_vars("v", 2);
    let mut e = LinExpr::var(v.idx(0));
    e.add_constant(-1.0);
    prog.add_eq(e).unwrap();
    prog.add_nonneg(LinExpr::var(v.idx(1))).unwrap();
    let mut obj = LinExpr::var(v.idx(0));
    obj.add_scaled(&LinExpr::var(v.idx(1)), 1.0);
    prog.set_objective(obj).unwrap();
    let sol = solve_default(&prog);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.objective - 1.0).abs() < 1e-7);
    assert!((sol.block(v)[0] - 1.0).abs() < 1e-7);
}

#[test]
fn psd_block_must_be_square() {
    let mut prog = ConicProgram::new();
    prog.add_vars("x", 1);
    let m = ExprMatrix::zeros(2, 3);
    assert!(matches!(prog.add_psd_block(m), Err(ConicError::NotSquare { .. })));
}

#[test]
fn psd_block_must_be_symmetric() {
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 1);
    let mut m = ExprMatrix::zeros(2, 2);
    m.set(0, 1, LinExpr::var(x.scalar()));
    m.set(1, 0, LinExpr::term(x.scalar(), 2.0));
    assert!(matches!(prog.add_psd_block(m), Err(ConicError::NotSymmetric { .. })));
}

#[test]
fn undeclared_variable_is_rejected() {
    let mut prog = ConicProgram::new();
    prog.add_vars("x", 1);
    assert!(matches!(
        prog.add_eq(LinExpr::var(5)),
        Err(ConicError::UndeclaredVariable { .. })
    ));
}

#[test]
fn non_finite_coefficient_is_rejected() {
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 1);
    assert!(matches!(
        prog.add_nonneg(LinExpr::term(x.scalar(), f64::NAN)),
        Err(ConicError::NonFinite)
    ));
}

/// Battery of random max-eigenvalue SDPs with eigensolver oracles: the
/// duality gap at Optimal stays within rel_tol*(1+|objective|).
#[test]
fn duality_gap_on_random_eigenvalue_problems() {
    let mut rng = ChaCha12Rng::seed_from_u64(71);
    let opts = SolveOptions { abs_tol: 1e-9, rel_tol: 1e-9, ..Default::default() };
    for case in 0..20 {
        let dim = 2 + (case % 5);
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = rng.random_range(-2.0..2.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let lam_max = m.clone().symmetric_eigen().eigenvalues.max();

        let mut prog = ConicProgram::new();
        let lam = prog.add_vars("lambda", 1);
        let mut block = ExprMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let mut e = LinExpr::constant(-m[(i, j)]);
                if i == j {
                    e.add_term(lam.scalar(), 1.0);
                }
                block.set(i, j, e);
            }
        }
        let handle = prog.add_psd_block(block).unwrap();
        prog.set_objective(LinExpr::var(lam.scalar())).unwrap();
        let sol = prog.solve(&opts).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(
            (sol.objective - lam_max).abs() <= 1e-8 * (1.0 + sol.objective.abs()),
            "case {case}: objective {} vs eigenvalue {}",
            sol.objective,
            lam_max
        );

        // Primal PSD feasibility at the solution.
        let lam_star = sol.objective;
        let slack = DMatrix::<f64>::identity(dim, dim) * lam_star - &m;
        assert!(slack.symmetric_eigen().eigenvalues.min() >= -1e-6);

        // Dual normalization and dual objective: trace(Z) = 1 and
        // trace(M Z) = lambda_max, checked in matrix units.
        let dual = sol.psd_dual(handle);
        let mut k = 0usize;
        let mut trace = 0.0;
        let mut inner = 0.0;
        for j in 0..dim {
            for i in 0..=j {
                if i == j {
                    trace += dual[k];
                    inner += m[(i, j)] * dual[k];
                } else {
                    inner += 2.0 * m[(i, j)] * dual[k];
                }
                k += 1;
            }
        }
        assert!((trace - 1.0).abs() < 1e-6, "dual trace {trace}");
        assert!((inner - lam_max).abs() < 1e-6 * (1.0 + lam_max.abs()));
    }
}

/// Serialize -> parse -> serialize is the identity, with bit-exact floats.
#[test]
fn interchange_round_trip() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let mut prog = ConicProgram::new();
    let x = prog.add_vars("x", 3);
    let y = prog.add_vars("y", 2);
    let awkward = [1.0 / 3.0, 1e-17, 6.02214076e23, -0.1, 123456.789e-12];
    let gen = |rng: &mut ChaCha12Rng| -> LinExpr {
        let mut e = LinExpr::constant(awkward[rng.random_range(0..awkward.len())]);
        for ix in 0..5 {
            if rng.random_bool(0.6) {
                e.add_term(ix, rng.random_range(-10.0..10.0) / 3.0);
            }
        }
        e
    };
    let mut obj = gen(&mut rng);
    obj.add_term(x.idx(0), 1.0);
    prog.set_objective(obj).unwrap();
    prog.add_eq(gen(&mut rng)).unwrap();
    prog.add_nonneg(gen(&mut rng)).unwrap();
    prog.add_rsoc(gen(&mut rng), gen(&mut rng), vec![gen(&mut rng), gen(&mut rng)]).unwrap();
    let mut m = ExprMatrix::zeros(2, 2);
    m.set(0, 0, gen(&mut rng));
    m.set(1, 1, LinExpr::var(y.idx(1)));
    let off = gen(&mut rng);
    m.set(0, 1, off.clone());
    m.set(1, 0, off);
    prog.add_psd_block(m).unwrap();

    let text = to_json(&prog);
    let parsed = from_json(&text).unwrap();
    assert_eq!(prog, parsed);

    // Bit-exactness of every coefficient that survives the round trip.
    let all = |p: &ConicProgram| -> Vec<u64> {
        let mut bits = Vec::new();
        let mut push_expr = |e: &LinExpr| {
            bits.push(e.constant.to_bits());
            for &(_, c) in &e.terms {
                bits.push(c.to_bits());
            }
        };
        push_expr(p.objective());
        p.eq_constraints().iter().for_each(&mut push_expr);
        p.nonneg_constraints().iter().for_each(&mut push_expr);
        for r in p.rsoc_constraints() {
            push_expr(&r.u);
            push_expr(&r.v);
            r.w.iter().for_each(&mut push_expr);
        }
        for b in p.psd_constraints() {
            b.tri.iter().for_each(&mut push_expr);
        }
        bits
    };
    assert_eq!(all(&prog), all(&parsed));
    assert_eq!(text, to_json(&parsed));
}
