//! Distributionally robust risk over a Wasserstein ball of squared radius
//! epsilon around an empirical distribution: exact duals for piecewise
//! linear losses, LMI upper bounds for quadratic losses (exact once the
//! shadow cost clears the top eigenvalue), the boundary-distance condition
//! that forces a large shadow cost, an exact empirical CVaR, and a
//! grid-transport brute-force oracle for desk-scale cross-checks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conic::{ConicError, ConicProgram, ExprMatrix, LinExpr, SolveOptions, SolveStatus};
use crate::model::{boundary_distance, ModelError, Polytope};
use crate::samples::{AmbiguitySet, SampleSet};

/// Slack under lambda_max below which the bound still counts as tight.
pub const TIGHT_SLACK: f64 = 1e-7;
/// Band around lambda_max inside which a certificate is flagged marginal.
pub const MARGINAL_SLACK: f64 = 1e-4;
/// Eigenvalue floor for accepting a quadratic loss as positive semidefinite.
pub const PSD_TOL: f64 = 1e-9;
/// Hard cap on the brute-force transport LP size (atoms times grid points).
pub const BRUTE_FORCE_CAP: usize = 150_000;

#[derive(Debug, Error)]
pub enum DroError {
    #[error("piecewise linear loss needs at least one piece")]
    EmptyLoss,
    #[error("loss pieces have inconsistent dimensions")]
    RaggedLoss,
    #[error("quadratic loss is not symmetric positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    InvalidGamma(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("brute-force oracle limit exceeded: {0}")]
    TooLarge(String),
    #[error("brute-force oracle needs a bounded support")]
    UnboundedSupport,
    #[error("risk solve ended {status}")]
    SolverFailure { status: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// Piecewise linear loss max_j a_j' xi + b_j.
#[derive(Clone, Debug)]
pub struct PwlLoss {
    a: Vec<DVector<f64>>,
    b: Vec<f64>,
}

impl PwlLoss {
    pub fn new(pieces: Vec<(DVector<f64>, f64)>) -> Result<Self, DroError> {
        if pieces.is_empty() {
            return Err(DroError::EmptyLoss);
        }
        let dim = pieces[0].0.len();
        if pieces.iter().any(|(a, _)| a.len() != dim) {
            return Err(DroError::RaggedLoss);
        }
        let (a, b) = pieces.into_iter().unzip();
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a[0].len()
    }

    /// Number of pieces.
    pub fn pieces(&self) -> usize {
        self.a.len()
    }

    pub fn piece(&self, j: usize) -> (&DVector<f64>, f64) {
        (&self.a[j], self.b[j])
    }

    pub fn eval(&self, xi: &DVector<f64>) -> f64 {
        (0..self.pieces())
            .map(|j| self.a[j].dot(xi) + self.b[j])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Quadratic loss xi' Q xi with Q symmetric positive semidefinite.
#[derive(Clone, Debug)]
pub struct QuadLoss {
    q: DMatrix<f64>,
    lambda_max: f64,
}

impl QuadLoss {
    pub fn new(q: DMatrix<f64>) -> Result<Self, DroError> {
        if !q.is_square() {
            return Err(DroError::DimensionMismatch(format!(
                "loss matrix is {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let scale = q.amax().max(1.0);
        for i in 0..q.nrows() {
            for j in 0..i {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-9 * scale {
                    return Err(DroError::NotPsd(f64::NAN));
                }
            }
        }
        let eigs = q.clone().symmetric_eigen().eigenvalues;
        let min = eigs.min();
        if min < -PSD_TOL * scale {
            return Err(DroError::NotPsd(min));
        }
        let lambda_max = eigs.max().max(0.0);
        Ok(Self { q, lambda_max })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn eval(&self, xi: &DVector<f64>) -> f64 {
        (xi.transpose() * &self.q * xi)[(0, 0)]
    }
}

/// Dual multipliers attached to a risk certificate, one family per
/// formulation.
#[derive(Clone, Debug)]
pub enum Multipliers {
    /// kappa[i][j]: one vector of face multipliers per sample and piece.
    PiecewiseLinear { kappa: Vec<Vec<Vec<f64>>> },
    /// psi[i] >= mu[i] >= 0 per sample, plus the shared range-condition
    /// scalar alpha.
    BoundedQuadratic { psi: Vec<Vec<f64>>, mu: Vec<Vec<f64>>, alpha: f64 },
    /// Free support: the block constraints carry no face multipliers.
    FreeQuadratic,
}

/// Optimal dual data of a risk solve. The objective always equals
/// lambda * epsilon + mean(s) exactly, as it is recomputed from the
/// returned variables.
#[derive(Clone, Debug)]
pub struct DualCertificate {
    /// Shadow cost of robustness: marginal risk per unit of squared radius.
    pub lambda: f64,
    /// Per-sample epigraph values.
    pub s: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    /// True when lambda sits within 1e-4 of the top loss eigenvalue, where
    /// the tightness classification is sensitive to solver noise.
    pub marginal: bool,
}

fn certify(lambda: f64, s: Vec<f64>, multipliers: Multipliers, epsilon: f64, marginal: bool) -> DualCertificate {
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    DualCertificate { lambda, s, multipliers, objective: lambda * epsilon + mean, marginal }
}

fn solved(prog: &mut ConicProgram) -> Result<crate::conic::Solution, DroError> {
    let sol = prog.solve(&SolveOptions::default())?;
    if sol.status != SolveStatus::Optimal {
        return Err(DroError::SolverFailure { status: format!("{:?}", sol.status) });
    }
    Ok(sol)
}

/// Worst-case expected piecewise linear loss over the ambiguity set,
/// computed exactly through its finite convex dual: minimize
/// lambda * epsilon + mean(s) subject to one rotated-cone constraint per
/// sample and piece with nonnegative face multipliers.
pub fn pwl_dro_risk(
    loss: &PwlLoss,
    amb: &AmbiguitySet,
) -> Result<(f64, DualCertificate), DroError> {
    let d = amb.center.dim();
    if loss.dim() != d {
        return Err(DroError::DimensionMismatch(format!(
            "loss has dimension {}, samples have {}",
            loss.dim(),
            d
        )));
    }
    let n = amb.center.m();
    let j_cnt = loss.pieces();
    let h_mat = &amb.support.h_mat;
    let h_vec = &amb.support.h_vec;
    let nf = amb.support.num_faces();

    let mut prog = ConicProgram::new();
    let lambda = prog.add_vars("lambda", 1);
    let s = prog.add_vars("s", n);
    let kappa = prog.add_vars("kappa", n * j_cnt * nf);
    let kap = |i: usize, j: usize, k: usize| kappa.idx((i * j_cnt + j) * nf + k);

    let mut objective = LinExpr::term(lambda.scalar(), amb.epsilon);
    for i in 0..n {
        objective.add_term(s.idx(i), 1.0 / n as f64);
    }
    prog.set_objective(objective)?;

    for i in 0..n {
        let xi = amb.center.atom(i);
        for j in 0..j_cnt {
            let (a, b) = loss.piece(j);
            // u = s_i - b - a'xi - (h - H xi)' kappa
            let mut u = LinExpr::term(s.idx(i), 1.0);
            u.add_constant(-b - a.dot(&xi));
            for k in 0..nf {
                let slack = h_vec[k] - h_mat.row(k).transpose().dot(&xi);
                u.add_term(kap(i, j, k), -slack);
                prog.add_nonneg(LinExpr::var(kap(i, j, k)))?;
            }
            // w = (a - H' kappa) / sqrt(2), so 2 u lambda >= |w|^2 is the
            // epigraph of |a - H' kappa|^2 / (4 lambda).
            let mut w = Vec::with_capacity(d);
            let scale = 1.0 / 2.0f64.sqrt();
            for r in 0..d {
                let mut e = LinExpr::constant(a[r] * scale);
                for k in 0..nf {
                    e.add_term(kap(i, j, k), -h_mat[(k, r)] * scale);
                }
                w.push(e);
            }
            prog.add_rsoc(u, LinExpr::var(lambda.scalar()), w)?;
        }
    }

    let sol = solved(&mut prog)?;
    let lam = sol.block(lambda)[0];
    let s_vals = sol.block(s).to_vec();
    let kappa_vals = sol.block(kappa);
    let mult = Multipliers::PiecewiseLinear {
        kappa: (0..n)
            .map(|i| {
                (0..j_cnt)
                    .map(|j| (0..nf).map(|k| kappa_vals[(i * j_cnt + j) * nf + k]).collect())
                    .collect()
            })
            .collect(),
    };
    let cert = certify(lam, s_vals, mult, amb.epsilon, false);
    Ok((cert.objective, cert))
}

/// Entry (r, c) of lambda * I - Q scaled by `factor`, as an affine
/// expression in lambda.
fn lambda_i_minus_q(lambda: usize, q: &DMatrix<f64>, r: usize, c: usize, factor: f64) -> LinExpr {
    let mut e = LinExpr::constant(-factor * q[(r, c)]);
    if r == c {
        e.add_term(lambda, factor);
    }
    e
}

/// Upper bound on the worst-case expected quadratic loss over the ambiguity
/// set, with its dual certificate and a tightness flag. Bounded supports use
/// the three-block LMI with face multipliers psi >= mu >= 0 and the shared
/// range-condition scalar; a free support uses the reduced two-block LMI,
/// which is exact. The bound is exact whenever the returned shadow cost
/// reaches the top eigenvalue of the loss, which the flag reports.
pub fn quad_dro_risk_bound(
    loss: &QuadLoss,
    amb: &AmbiguitySet,
) -> Result<(f64, DualCertificate, bool), DroError> {
    let d = amb.center.dim();
    if loss.dim() != d {
        return Err(DroError::DimensionMismatch(format!(
            "loss has dimension {}, samples have {}",
            loss.dim(),
            d
        )));
    }
    let n = amb.center.m();
    let q = loss.matrix();
    let mut prog = ConicProgram::new();
    let lambda = prog.add_vars("lambda", 1);
    let s = prog.add_vars("s", n);

    let mut objective = LinExpr::term(lambda.scalar(), amb.epsilon);
    for i in 0..n {
        objective.add_term(s.idx(i), 1.0 / n as f64);
    }
    prog.set_objective(objective)?;

    let mult;
    if amb.support.is_free() {
        for i in 0..n {
            let xi = amb.center.atom(i);
            let mut block = ExprMatrix::zeros(1 + d, 1 + d);
            let mut corner = LinExpr::term(s.idx(i), 1.0);
            corner.add_term(lambda.scalar(), xi.norm_squared());
            block.set(0, 0, corner);
            for r in 0..d {
                let e = LinExpr::term(lambda.scalar(), xi[r]);
                block.set(1 + r, 0, e.clone());
                block.set(0, 1 + r, e);
                for c in 0..d {
                    block.set(1 + r, 1 + c, lambda_i_minus_q(lambda.scalar(), q, r, c, 1.0));
                }
            }
            prog.add_psd_block(block)?;
        }
        mult = Multipliers::FreeQuadratic;
        let sol = solved(&mut prog)?;
        let lam = sol.block(lambda)[0];
        let cert = certify(
            lam,
            sol.block(s).to_vec(),
            mult,
            amb.epsilon,
            (lam - loss.lambda_max()).abs() <= MARGINAL_SLACK,
        );
        let tight = lam >= loss.lambda_max() - TIGHT_SLACK;
        return Ok((cert.objective, cert, tight));
    }

    let h_mat = &amb.support.h_mat;
    let h_vec = &amb.support.h_vec;
    let nf = amb.support.num_faces();
    let psi = prog.add_vars("psi", n * nf);
    let mu = prog.add_vars("mu", n * nf);
    let alpha = prog.add_vars("alpha", 1);
    prog.add_nonneg(LinExpr::var(alpha.scalar()))?;
    for i in 0..n {
        for k in 0..nf {
            prog.add_nonneg(LinExpr::var(mu.idx(i * nf + k)))?;
            let mut gap = LinExpr::term(psi.idx(i * nf + k), 1.0);
            gap.add_term(mu.idx(i * nf + k), -1.0);
            prog.add_nonneg(gap)?;
        }
    }

    for i in 0..n {
        let xi = amb.center.atom(i);
        // H' psi_i and H' mu_i as affine expressions per coordinate.
        let ht = |block: crate::conic::VarBlock, r: usize, sign: f64| {
            let mut e = LinExpr::zero();
            for k in 0..nf {
                e.add_term(block.idx(i * nf + k), sign * h_mat[(k, r)]);
            }
            e
        };

        // Three-block LMI of size 1 + 2d.
        let size = 1 + 2 * d;
        let mut big = ExprMatrix::zeros(size, size);
        let mut corner = LinExpr::term(s.idx(i), 1.0);
        corner.add_term(lambda.scalar(), xi.norm_squared());
        for k in 0..nf {
            corner.add_term(psi.idx(i * nf + k), -h_vec[k]);
        }
        big.set(0, 0, corner);
        for r in 0..d {
            // Second block row: 2 lambda xi - H' psi_i.
            let mut e = ht(psi, r, -1.0);
            e.add_term(lambda.scalar(), 2.0 * xi[r]);
            big.set(1 + r, 0, e.clone());
            big.set(0, 1 + r, e);
            // Third block row: H' mu_i.
            let e = ht(mu, r, 1.0);
            big.set(1 + d + r, 0, e.clone());
            big.set(0, 1 + d + r, e);
            for c in 0..d {
                big.set(1 + r, 1 + c, lambda_i_minus_q(lambda.scalar(), q, r, c, 4.0));
                big.set(1 + d + r, 1 + d + c, LinExpr::constant(4.0 * q[(r, c)]));
            }
        }
        prog.add_psd_block(big)?;

        // Range-condition LMI of size 1 + d with the shared scalar corner.
        let mut small = ExprMatrix::zeros(1 + d, 1 + d);
        small.set(0, 0, LinExpr::var(alpha.scalar()));
        for r in 0..d {
            let e = ht(mu, r, 1.0);
            small.set(1 + r, 0, e.clone());
            small.set(0, 1 + r, e);
            for c in 0..d {
                small.set(1 + r, 1 + c, lambda_i_minus_q(lambda.scalar(), q, r, c, 1.0));
            }
        }
        prog.add_psd_block(small)?;
    }

    let sol = solved(&mut prog)?;
    let lam = sol.block(lambda)[0];
    let psi_vals = sol.block(psi);
    let mu_vals = sol.block(mu);
    mult = Multipliers::BoundedQuadratic {
        psi: (0..n).map(|i| psi_vals[i * nf..(i + 1) * nf].to_vec()).collect(),
        mu: (0..n).map(|i| mu_vals[i * nf..(i + 1) * nf].to_vec()).collect(),
        alpha: sol.block(alpha)[0],
    };
    let cert = certify(
        lam,
        sol.block(s).to_vec(),
        mult,
        amb.epsilon,
        (lam - loss.lambda_max()).abs() <= MARGINAL_SLACK,
    );
    let tight = lam >= loss.lambda_max() - TIGHT_SLACK;
    Ok((cert.objective, cert, tight))
}

/// True when the mean squared boundary distance of the samples exceeds the
/// squared radius, which forces the shadow cost of any positive
/// semidefinite quadratic loss to reach its top eigenvalue. A support
/// without active faces has infinite boundary distance, so the condition
/// holds vacuously.
pub fn shadow_cost_condition(
    samples: &SampleSet,
    support: &Polytope,
    epsilon: f64,
) -> Result<bool, DroError> {
    if samples.width() != support.dim() {
        return Err(DroError::DimensionMismatch(format!(
            "samples have width {}, support has dimension {}",
            samples.width(),
            support.dim()
        )));
    }
    let mut acc = 0.0;
    for i in 0..samples.len() {
        let dist = boundary_distance(support, &samples.row(i))?;
        if dist.is_infinite() {
            return Ok(true);
        }
        acc += dist * dist;
    }
    Ok(acc / samples.len() as f64 > epsilon)
}

/// Exact empirical conditional value-at-risk at level gamma: the mean of
/// the worst gamma fraction of the weighted values, computed by sorting.
pub fn cvar_empirical(values: &[f64], weights: &[f64], gamma: f64) -> Result<f64, DroError> {
    if values.is_empty() {
        return Err(DroError::EmptyInput);
    }
    if values.len() != weights.len() {
        return Err(DroError::DimensionMismatch(format!(
            "{} values, {} weights",
            values.len(),
            weights.len()
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(DroError::InvalidGamma(gamma));
    }
    if let Some(k) = weights.iter().position(|&w| w < 0.0) {
        return Err(DroError::InvalidWeights(format!("weight {k} is negative")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DroError::InvalidWeights(format!("weights sum to {total}")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // The optimal threshold is the smallest value whose cumulative weight
    // reaches 1 - gamma.
    let mut cum = 0.0;
    let mut tau = values[*order.last().expect("nonempty")];
    for &k in &order {
        cum += weights[k];
        if cum >= 1.0 - gamma - 1e-12 {
            tau = values[k];
            break;
        }
    }
    let excess: f64 =
        values.iter().zip(weights).map(|(&v, &w)| w * (v - tau).max(0.0)).sum();
    Ok(tau + excess / gamma)
}

/// Brute-force worst-case expected loss: discretizes the support into a
/// uniform grid (endpoints included) and solves the exact transport LP over
/// plans from the empirical atoms to the grid, maximizing expected loss
/// subject to the squared-distance budget. A lower bound that converges to
/// the true risk as the grid refines.
pub fn brute_force_dro_risk<F: Fn(&DVector<f64>) -> f64>(
    loss: F,
    amb: &AmbiguitySet,
    grid_per_dim: usize,
) -> Result<f64, DroError> {
    let d = amb.center.dim();
    if d > 3 {
        return Err(DroError::TooLarge(format!("dimension {d} exceeds 3")));
    }
    if grid_per_dim < 2 {
        return Err(DroError::TooLarge("grid needs at least 2 points per dimension".into()));
    }
    let bounds = amb.support.bounding_box()?;
    if bounds.iter().any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite()) {
        return Err(DroError::UnboundedSupport);
    }
    let mut grid: Vec<DVector<f64>> = Vec::new();
    let mut point = vec![0usize; d];
    'outer: loop {
        let xi = DVector::from_fn(d, |r, _| {
            let (lo, hi) = bounds[r];
            lo + (hi - lo) * point[r] as f64 / (grid_per_dim - 1) as f64
        });
        if amb.support.contains(&xi, 1e-9) {
            grid.push(xi);
        }
        for r in 0..d {
            point[r] += 1;
            if point[r] < grid_per_dim {
                continue 'outer;
            }
            point[r] = 0;
        }
        break;
    }
    let n = amb.center.m();
    let g = grid.len();
    if n * g > BRUTE_FORCE_CAP {
        return Err(DroError::TooLarge(format!(
            "{n} atoms x {g} grid points exceeds {BRUTE_FORCE_CAP}"
        )));
    }
    let losses: Vec<f64> = grid.iter().map(|xi| loss(xi)).collect();

    let mut prog = ConicProgram::new();
    let pi = prog.add_vars("pi", n * g);
    let mut objective = LinExpr::zero();
    let mut budget = LinExpr::constant(amb.epsilon);
    for i in 0..n {
        let xi = amb.center.atom(i);
        let mut row = LinExpr::constant(-amb.center.weights[i]);
        for k in 0..g {
            let v = pi.idx(i * g + k);
            prog.add_nonneg(LinExpr::var(v))?;
            objective.add_term(v, -losses[k]);
            budget.add_term(v, -(&grid[k] - &xi).norm_squared());
            row.add_term(v, 1.0);
        }
        prog.add_eq(row)?;
    }
    prog.add_nonneg(budget)?;
    prog.set_objective(objective)?;
    let sol = solved(&mut prog)?;
    let plan = sol.block(pi);
    Ok((0..n * g).map(|idx| plan[idx] * losses[idx % g]).sum())
}
