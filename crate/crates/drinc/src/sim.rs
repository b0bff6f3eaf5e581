//! Closed-loop rollout engine, benchmark metrics, and generation of test
//! distributions on transport-distance spheres around the training
//! distribution, used to measure how designs degrade under distribution
//! shift.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{ConicProgram, LinExpr, SolveOptions, SolveStatus};
use crate::model::{CostSpec, ModelError, Polytope, SafetySpec, SystemModel};
use crate::samples::{wasserstein2, optimal_coupling, EmpiricalDistribution, SampleError};
use crate::sls::{realize_controller, ControllerRealization, SlsError};
use crate::synthesis::SynthesisResult;

/// Iteration cap for the random walk that must exit the transport ball.
pub const STALL_LIMIT: usize = 1000;
/// Relative slack allowed between a generated distribution's measured
/// distance and the requested sphere radius.
pub const SPHERE_TOL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no data to aggregate")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("random walk failed to exit the ball after {iterations} iterations")]
    Stall { iterations: usize },
    #[error("generated distribution landed at distance {measured}, wanted {target}")]
    SphereDistance { measured: f64, target: f64 },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Sls(#[from] SlsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One closed-loop run. Rows are time steps; `states` has one extra row for
/// the final state. `noise` rows hold the realized (w_t, v_t) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl Trajectory {
    /// Number of simulated steps.
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Largest violation of the plant recursion by this trajectory; zero up
    /// to roundoff for anything produced by `rollout`.
    pub fn dynamics_residual(&self, model: &SystemModel) -> f64 {
        let n = model.n();
        let mut worst: f64 = 0.0;
        for t in 0..self.len() {
            let x = self.states.row(t).transpose();
            let u = self.inputs.row(t).transpose();
            let w = self.noise.view((t, 0), (1, n)).transpose();
            let next = &model.a * &x + &model.b * &u + w;
            let diff = self.states.row(t + 1).transpose() - next;
            worst = worst.max(diff.amax());
        }
        worst
    }
}

/// Simulates the plant under the realized controller from a zero initial
/// state. `noise` must provide one (w_t, v_t) row per step. The controller
/// starts from an all-zero history.
pub fn rollout(
    model: &SystemModel,
    controller: &mut ControllerRealization,
    noise: &DMatrix<f64>,
    t_bar: usize,
) -> Result<Trajectory, SimError> {
    let (n, m, p) = (model.n(), model.m(), model.p());
    if noise.ncols() != n + p {
        return Err(SimError::DimensionMismatch(format!(
            "noise rows have width {}, expected n + p = {}",
            noise.ncols(),
            n + p
        )));
    }
    if noise.nrows() < t_bar {
        return Err(SimError::DimensionMismatch(format!(
            "{} noise rows cannot drive {} steps",
            noise.nrows(),
            t_bar
        )));
    }
    controller.reset();
    let mut states = DMatrix::zeros(t_bar + 1, n);
    let mut inputs = DMatrix::zeros(t_bar, m);
    let mut outputs = DMatrix::zeros(t_bar, p);
    let mut x = DVector::zeros(n);
    for t in 0..t_bar {
        let w = noise.view((t, 0), (1, n)).transpose();
        let v = noise.view((t, n), (1, p)).transpose();
        let y = &model.c * &x + v;
        let u = controller.step(&y);
        outputs.row_mut(t).copy_from(&y.transpose());
        inputs.row_mut(t).copy_from(&u.transpose());
        x = &model.a * &x + &model.b * &u + w;
        states.row_mut(t + 1).copy_from(&x.transpose());
    }
    Ok(Trajectory { states, inputs, outputs, noise: noise.rows(0, t_bar).into_owned() })
}

/// Average stage cost and average number of violated safety rows per step,
/// both taken over steps strictly after the burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub j_bar: f64,
    pub v_bar: f64,
    pub steps: usize,
}

/// Scores trajectories: mean of [x' u'] D [x; u] and mean violated-row
/// count per step, over steps t with burn_in < t < length.
pub fn metrics(
    trajectories: &[Trajectory],
    cost: &CostSpec,
    safety: &SafetySpec,
    burn_in: usize,
) -> Result<Metrics, SimError> {
    let mut j_acc = 0.0;
    let mut v_acc = 0.0;
    let mut steps = 0usize;
    for traj in trajectories {
        let n = traj.states.ncols();
        let m = traj.inputs.ncols();
        if n + m != cost.dim() {
            return Err(SimError::DimensionMismatch(format!(
                "trajectory has n + m = {}, cost weight expects {}",
                n + m,
                cost.dim()
            )));
        }
        for t in burn_in + 1..traj.len() {
            let mut xu = DVector::zeros(n + m);
            xu.rows_mut(0, n).copy_from(&traj.states.row(t).transpose());
            xu.rows_mut(n, m).copy_from(&traj.inputs.row(t).transpose());
            j_acc += cost.stage_cost(&xu);
            let margins = &safety.g_vec - &safety.g_mat * &xu;
            v_acc += margins.iter().filter(|&&g| g < 0.0).count() as f64;
            steps += 1;
        }
    }
    if steps == 0 {
        return Err(SimError::EmptyInput);
    }
    Ok(Metrics { j_bar: j_acc / steps as f64, v_bar: v_acc / steps as f64, steps })
}

/// True when every face constrains a single coordinate, so projection is a
/// clamp.
fn is_axis_aligned(support: &Polytope) -> bool {
    (0..support.num_faces())
        .all(|k| (0..support.dim()).filter(|&c| support.h_mat[(k, c)] != 0.0).count() <= 1)
}

/// Euclidean projection onto the support. Axis-aligned faces clamp
/// coordinate-wise; anything else falls back to a small conic solve.
fn project(support: &Polytope, x: &DVector<f64>) -> Result<DVector<f64>, SimError> {
    if support.is_free() || support.contains(x, 0.0) {
        return Ok(x.clone());
    }
    if is_axis_aligned(support) {
        let bounds = support.bounding_box()?;
        return Ok(DVector::from_fn(x.len(), |r, _| x[r].clamp(bounds[r].0, bounds[r].1)));
    }
    let d = x.len();
    let mut prog = ConicProgram::new();
    let z = prog.add_vars("z", d);
    let epi = prog.add_vars("epi", 1);
    for k in 0..support.num_faces() {
        let mut e = LinExpr::constant(support.h_vec[k]);
        for c in 0..d {
            let coeff = -support.h_mat[(k, c)];
            if coeff != 0.0 {
                e.add_term(z.idx(c), coeff);
            }
        }
        prog.add_nonneg(e).map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    }
    let mut w = Vec::with_capacity(d);
    for c in 0..d {
        let mut e = LinExpr::term(z.idx(c), 1.0);
        e.add_constant(-x[c]);
        w.push(e);
    }
    prog.add_rsoc(LinExpr::var(epi.scalar()), LinExpr::constant(0.5), w)
        .map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    prog.set_objective(LinExpr::var(epi.scalar()))
        .map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    let sol = prog
        .solve(&SolveOptions::default())
        .map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    if sol.status != SolveStatus::Optimal {
        return Err(SimError::InvalidParameter(format!(
            "projection solve ended {:?}",
            sol.status
        )));
    }
    Ok(DVector::from_column_slice(sol.block(z)))
}

/// Splits every atom into `atom_split` equal-weight copies.
fn split_atoms(center: &EmpiricalDistribution, atom_split: usize) -> EmpiricalDistribution {
    let (m, d) = (center.m(), center.dim());
    let mut atoms = DMatrix::zeros(m * atom_split, d);
    let mut weights = DVector::zeros(m * atom_split);
    for i in 0..m {
        for s in 0..atom_split {
            atoms.row_mut(i * atom_split + s).copy_from(&center.atoms.row(i));
            weights[i * atom_split + s] = center.weights[i] / atom_split as f64;
        }
    }
    EmpiricalDistribution::new(atoms, weights).expect("split preserves validity")
}

/// Draws `count` empirical distributions at transport distance `radius`
/// from the center: atoms are split for diversity, perturbed uniformly and
/// projected onto the support until the distribution exits the ball, then
/// pulled back onto the sphere along the optimal transport interpolation.
/// Every returned distribution is re-measured against the radius.
pub fn sample_wasserstein_sphere<R: Rng>(
    center: &EmpiricalDistribution,
    radius: f64,
    count: usize,
    support: &Polytope,
    atom_split: usize,
    rng: &mut R,
) -> Result<Vec<EmpiricalDistribution>, SimError> {
    if radius < 0.0 {
        return Err(SimError::InvalidParameter(format!("negative radius {radius}")));
    }
    if atom_split == 0 {
        return Err(SimError::InvalidParameter("atom_split must be at least 1".into()));
    }
    if support.dim() != center.dim() {
        return Err(SimError::DimensionMismatch(format!(
            "support dimension {} vs atoms of dimension {}",
            support.dim(),
            center.dim()
        )));
    }
    let seed_dist = split_atoms(center, atom_split);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if radius == 0.0 {
            out.push(seed_dist.clone());
            continue;
        }
        let mut current = seed_dist.clone();
        let mut distance = 0.0;
        let mut exited = false;
        for _ in 0..STALL_LIMIT {
            for i in 0..current.m() {
                let step = DVector::from_fn(current.dim(), |_, _| rng.random_range(-1.0..1.0));
                let moved = current.atoms.row(i).transpose() + step;
                current.atoms.row_mut(i).copy_from(&project(support, &moved)?.transpose());
            }
            distance = wasserstein2(center, &current)?;
            if distance > radius {
                exited = true;
                break;
            }
        }
        if !exited {
            return Err(SimError::Stall { iterations: STALL_LIMIT });
        }
        // Interpolate along the optimal plan: the blend at fraction s sits
        // at distance s * W from the center.
        let s = radius / distance;
        let (_, flows) = optimal_coupling(center, &current)?;
        let d = center.dim();
        let mut atoms = DMatrix::zeros(flows.len(), d);
        let mut weights = DVector::zeros(flows.len());
        for (row, &(i, j, mass)) in flows.iter().enumerate() {
            let blend =
                center.atoms.row(i).transpose() * (1.0 - s) + current.atoms.row(j).transpose() * s;
            atoms.row_mut(row).copy_from(&blend.transpose());
            weights[row] = mass;
        }
        let sphere = EmpiricalDistribution::new(atoms, weights)?;
        let measured = wasserstein2(center, &sphere)?;
        if (measured - radius).abs() > SPHERE_TOL * radius {
            return Err(SimError::SphereDistance { measured, target: radius });
        }
        out.push(sphere);
    }
    Ok(out)
}

/// A test distribution labeled by its distance from the training center.
#[derive(Clone, Debug)]
pub struct TestDistribution {
    pub dist: EmpiricalDistribution,
    pub radius: f64,
}

/// One benchmark row: a design evaluated against one test distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub design: String,
    pub radius: f64,
    pub seed: u64,
    pub j_bar: f64,
    pub v_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub t_bar: usize,
    pub burn_in: usize,
    pub rollouts_per_dist: usize,
    pub radii: Vec<f64>,
    /// How rollout noise extends beyond one window: windows are drawn
    /// independently and laid end to end.
    pub noise_tiling: String,
}

/// Full benchmark output: overall averages plus the per-pair breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub j_bar: f64,
    pub v_bar: f64,
    pub rows: Vec<BenchmarkRow>,
    pub metadata: ReportMetadata,
}

/// Mixes the distribution index into the base seed. The stream depends on
/// the distribution only, so every design faces the same noise draws:
/// paired comparisons instead of independent ones.
fn mix_seed(base: u64, dist: usize) -> u64 {
    let mut h = DefaultHasher::new();
    (base, dist as u64).hash(&mut h);
    h.finish()
}

/// Draws one rollout's noise: enough window draws laid end to end, each an
/// atom of the test distribution picked by weight.
pub fn draw_noise<R: Rng>(
    dist: &EmpiricalDistribution,
    n: usize,
    p: usize,
    t: usize,
    t_bar: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let steps_per_window = t + 1;
    let blocks = t_bar.div_ceil(steps_per_window);
    let mut noise = DMatrix::zeros(blocks * steps_per_window, n + p);
    for b in 0..blocks {
        let pick = {
            let mut u = rng.random_range(0.0..1.0);
            let mut idx = dist.m() - 1;
            for i in 0..dist.m() {
                u -= dist.weights[i];
                if u <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        };
        let window = dist.atom(pick);
        for k in 0..steps_per_window {
            let row = b * steps_per_window + k;
            for c in 0..n {
                noise[(row, c)] = window[k * n + c];
            }
            for c in 0..p {
                noise[(row, n + c)] = window[steps_per_window * n + k * p + c];
            }
        }
    }
    noise
}

/// Evaluates every design against every test distribution: seeded noise,
/// parallel over pairs, deterministic output order and content. The report
/// averages each pair over `rollouts_per_dist` independent rollouts.
pub fn run_benchmark(
    designs: &[(String, SynthesisResult)],
    test_dists: &[TestDistribution],
    model: &SystemModel,
    cost: &CostSpec,
    safety: &SafetySpec,
    rollouts_per_dist: usize,
    t_bar: usize,
    seed: u64,
) -> Result<BenchmarkReport, SimError> {
    if rollouts_per_dist == 0 || designs.is_empty() || test_dists.is_empty() {
        return Err(SimError::EmptyInput);
    }
    let (n, p) = (model.n(), model.p());
    let burn_in = designs[0].1.phi_star.t;
    if t_bar <= burn_in + 1 {
        return Err(SimError::InvalidParameter(format!(
            "horizon {t_bar} leaves no steps after the burn-in {burn_in}"
        )));
    }
    for (_, result) in designs {
        if result.phi_star.t != burn_in {
            return Err(SimError::DimensionMismatch(
                "designs disagree on the response order".into(),
            ));
        }
    }
    let pairs: Vec<(usize, usize)> = (0..designs.len())
        .flat_map(|di| (0..test_dists.len()).map(move |ti| (di, ti)))
        .collect();
    let rows: Result<Vec<BenchmarkRow>, SimError> = pairs
        .par_iter()
        .map(|&(di, ti)| {
            let (name, result) = &designs[di];
            let test = &test_dists[ti];
            let mut controller = realize_controller(&result.phi_star, model)?;
            let pair_seed = mix_seed(seed, ti);
            let mut rng = ChaCha12Rng::seed_from_u64(pair_seed);
            let t = result.phi_star.t;
            let mut trajectories = Vec::with_capacity(rollouts_per_dist);
            for _ in 0..rollouts_per_dist {
                let noise = draw_noise(&test.dist, n, p, t, t_bar, &mut rng);
                trajectories.push(rollout(model, &mut controller, &noise, t_bar)?);
            }
            let m = metrics(&trajectories, cost, safety, burn_in)?;
            Ok(BenchmarkRow {
                design: name.clone(),
                radius: test.radius,
                seed: pair_seed,
                j_bar: m.j_bar,
                v_bar: m.v_bar,
            })
        })
        .collect();
    let rows = rows?;
    let j_bar = rows.iter().map(|r| r.j_bar).sum::<f64>() / rows.len() as f64;
    let v_bar = rows.iter().map(|r| r.v_bar).sum::<f64>() / rows.len() as f64;
    let mut radii: Vec<f64> = test_dists.iter().map(|t| t.radius).collect();
    radii.dedup();
    Ok(BenchmarkReport {
        j_bar,
        v_bar,
        rows,
        metadata: ReportMetadata {
            seed,
            t_bar,
            burn_in,
            rollouts_per_dist,
            radii,
            noise_tiling: "independent windows tiled end to end".into(),
        },
    })
}

/// Writes the full report as JSON.
pub fn save_report(report: &BenchmarkReport, path: &Path) -> Result<(), SimError> {
    std::fs::write(path, serde_json::to_string_pretty(report).expect("plain struct"))
        .map_err(|source| SimError::Io { path: path.display().to_string(), source })
}

/// Writes the per-pair rows as plot-ready CSV.
pub fn save_csv(report: &BenchmarkReport, path: &Path) -> Result<(), SimError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| SimError::InvalidParameter(format!("cannot open {}: {e}", path.display())))?;
    writer
        .write_record(["design", "radius", "seed", "J_bar", "V_bar"])
        .and_then(|()| {
            for row in &report.rows {
                writer.write_record([
                    row.design.as_str(),
                    &row.radius.to_string(),
                    &row.seed.to_string(),
                    &row.j_bar.to_string(),
                    &row.v_bar.to_string(),
                ])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| SimError::InvalidParameter(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_system;
    use crate::sls::{build_achievability, fir_predict, nearest_achievable};

    fn scalar_plant() -> SystemModel {
        validate_system(
            DMatrix::from_row_slice(1, 1, &[0.8]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap()
    }

    fn double_integrator() -> SystemModel {
        validate_system(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap()
    }

    /// Any achievable map near seeded random targets.
    fn random_map(model: &SystemModel, t: usize, seed: u64) -> crate::sls::ClosedLoopMap {
        let cons = build_achievability(model, t);
        let d = (model.n() + model.p()) * (t + 1);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let tx = DMatrix::from_fn(model.n(), d, |_, _| rng.random_range(-0.5..0.5));
        let tu = DMatrix::from_fn(model.m(), d, |_, _| rng.random_range(-0.5..0.5));
        nearest_achievable(&cons, &tx, &tu).unwrap()
    }

    #[test]
    fn zero_noise_stays_at_rest() {
        let model = double_integrator();
        let phi = random_map(&model, 3, 7);
        let mut controller = realize_controller(&phi, &model).unwrap();
        let noise = DMatrix::zeros(20, 3);
        let traj = rollout(&model, &mut controller, &noise, 20).unwrap();
        assert_eq!(traj.states.amax(), 0.0);
        assert_eq!(traj.inputs.amax(), 0.0);
        assert_eq!(traj.outputs.amax(), 0.0);
    }

    #[test]
    fn first_disturbance_passes_through_unchanged() {
        let model = double_integrator();
        let phi = random_map(&model, 3, 8);
        let mut controller = realize_controller(&phi, &model).unwrap();
        let mut noise = DMatrix::zeros(10, 3);
        noise[(0, 0)] = 1.0;
        let traj = rollout(&model, &mut controller, &noise, 10).unwrap();
        assert_eq!(traj.states[(1, 0)], 1.0);
        assert_eq!(traj.states[(1, 1)], 0.0);
        assert_eq!(traj.inputs[(0, 0)], 0.0);
    }

    #[test]
    fn rollout_replays_the_plant_exactly() {
        let model = double_integrator();
        let phi = random_map(&model, 3, 9);
        let mut controller = realize_controller(&phi, &model).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let noise = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let traj = rollout(&model, &mut controller, &noise, 30).unwrap();
        assert!(traj.dynamics_residual(&model) <= 1e-12);
    }

    #[test]
    fn states_match_the_response_map_after_burn_in() {
        for (model, t, seed) in
            [(scalar_plant(), 2, 11u64), (double_integrator(), 3, 12u64)]
        {
            let phi = random_map(&model, t, seed);
            let mut controller = realize_controller(&phi, &model).unwrap();
            let (n, p) = (model.n(), model.p());
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 100);
            let t_bar = 25;
            let noise = DMatrix::from_fn(t_bar, n + p, |_, _| rng.random_range(-1.0..1.0));
            let traj = rollout(&model, &mut controller, &noise, t_bar).unwrap();
            for step in t..t_bar {
                let mut window = DVector::zeros((n + p) * (t + 1));
                for k in 0..=t {
                    let row = step - t + k;
                    for c in 0..n {
                        window[k * n + c] = noise[(row, c)];
                    }
                    for c in 0..p {
                        window[(t + 1) * n + k * p + c] = noise[(row, n + c)];
                    }
                }
                let (x, u) = fir_predict(&phi, &window).unwrap();
                let x_err = (traj.states.row(step).transpose() - x).amax();
                let u_err = (traj.inputs.row(step).transpose() - u).amax();
                assert!(x_err <= 1e-8 && u_err <= 1e-8, "step {step}: {x_err} {u_err}");
            }
        }
    }

    fn unconstrained_metrics_inputs() -> (CostSpec, SafetySpec) {
        (
            CostSpec::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[
                1.0, 4.0, 1.0,
            ])))
            .unwrap(),
            SafetySpec::new(
                DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
                DVector::from_column_slice(&[6.4, 6.4, 64.0, 64.0]),
                DMatrix::zeros(0, 1),
                DVector::zeros(0),
                0.1,
                2,
                1,
            )
            .unwrap(),
        )
    }

    #[test]
    fn zero_trajectories_score_zero() {
        let (cost, safety) = unconstrained_metrics_inputs();
        let traj = Trajectory {
            states: DMatrix::zeros(11, 2),
            inputs: DMatrix::zeros(10, 1),
            outputs: DMatrix::zeros(10, 1),
            noise: DMatrix::zeros(10, 3),
        };
        let m = metrics(&[traj], &cost, &safety, 2).unwrap();
        assert_eq!(m.j_bar, 0.0);
        assert_eq!(m.v_bar, 0.0);
        assert_eq!(m.steps, 7);
    }

    #[test]
    fn constant_trajectory_costs_its_quadratic_form() {
        let (cost, safety) = unconstrained_metrics_inputs();
        let traj = Trajectory {
            states: DMatrix::from_element(11, 2, 1.0),
            inputs: DMatrix::from_element(10, 1, 1.0),
            outputs: DMatrix::zeros(10, 1),
            noise: DMatrix::zeros(10, 3),
        };
        let m = metrics(&[traj], &cost, &safety, 0).unwrap();
        assert!((m.j_bar - 6.0).abs() <= 1e-12);
        assert_eq!(m.v_bar, 0.0);
    }

    #[test]
    fn one_breached_row_counts_once() {
        let (cost, safety) = unconstrained_metrics_inputs();
        let mut states = DMatrix::zeros(11, 2);
        states[(5, 0)] = 7.0;
        let traj = Trajectory {
            states,
            inputs: DMatrix::zeros(10, 1),
            outputs: DMatrix::zeros(10, 1),
            noise: DMatrix::zeros(10, 3),
        };
        let m = metrics(&[traj], &cost, &safety, 0).unwrap();
        assert!((m.v_bar - 1.0 / 9.0).abs() <= 1e-12);
    }

    #[test]
    fn short_trajectories_are_rejected() {
        let (cost, safety) = unconstrained_metrics_inputs();
        let traj = Trajectory {
            states: DMatrix::zeros(3, 2),
            inputs: DMatrix::zeros(2, 1),
            outputs: DMatrix::zeros(2, 1),
            noise: DMatrix::zeros(2, 3),
        };
        assert!(matches!(
            metrics(&[traj], &cost, &safety, 5),
            Err(SimError::EmptyInput)
        ));
        assert!(matches!(metrics(&[], &cost, &safety, 0), Err(SimError::EmptyInput)));
    }

    fn small_center() -> EmpiricalDistribution {
        let atoms = DMatrix::from_row_slice(
            4,
            3,
            &[0.1, 0.2, 0.0, 0.6, 0.1, 0.3, 0.2, 0.8, 0.5, 0.9, 0.4, 0.7],
        );
        EmpiricalDistribution::new(atoms, DVector::from_element(4, 0.25)).unwrap()
    }

    #[test]
    fn zero_radius_returns_center_copies() {
        let center = small_center();
        let support = Polytope::uniform_box(0.0, 1.0, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let out =
            sample_wasserstein_sphere(&center, 0.0, 3, &support, 2, &mut rng).unwrap();
        assert_eq!(out.len(), 3);
        for dist in &out {
            assert!(wasserstein2(&center, dist).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn sphere_samples_land_on_the_requested_radius() {
        let center = small_center();
        let support = Polytope::uniform_box(0.0, 1.0, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let radius = 0.3;
        let out =
            sample_wasserstein_sphere(&center, radius, 4, &support, 5, &mut rng).unwrap();
        assert_eq!(out.len(), 4);
        let bounds = support.bounding_box().unwrap();
        for dist in &out {
            let measured = wasserstein2(&center, dist).unwrap();
            assert!(
                (measured - radius).abs() <= SPHERE_TOL * radius,
                "landed at {measured}"
            );
            for i in 0..dist.m() {
                for c in 0..dist.dim() {
                    let v = dist.atoms[(i, c)];
                    assert!(v >= bounds[c].0 - 1e-9 && v <= bounds[c].1 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn invalid_sphere_parameters_are_rejected() {
        let center = small_center();
        let support = Polytope::uniform_box(0.0, 1.0, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        assert!(matches!(
            sample_wasserstein_sphere(&center, -0.1, 1, &support, 1, &mut rng),
            Err(SimError::InvalidParameter(_))
        ));
        assert!(matches!(
            sample_wasserstein_sphere(&center, 0.1, 1, &support, 0, &mut rng),
            Err(SimError::InvalidParameter(_))
        ));
    }

    #[test]
    fn projection_clamps_into_axis_boxes_and_solves_general_faces() {
        let box3 = Polytope::uniform_box(-1.0, 1.0, 3).unwrap();
        let x = DVector::from_column_slice(&[2.0, -3.0, 0.5]);
        let proj = project(&box3, &x).unwrap();
        assert_eq!(proj, DVector::from_column_slice(&[1.0, -1.0, 0.5]));
        // Half-space x1 + x2 <= 1: projection of (1, 1) is (0.5, 0.5).
        let half = Polytope::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_column_slice(&[1.0]),
        )
        .unwrap();
        let proj = project(&half, &DVector::from_column_slice(&[1.0, 1.0])).unwrap();
        assert!((proj - DVector::from_column_slice(&[0.5, 0.5])).amax() <= 1e-6);
    }

    /// A tiny two-design benchmark setup on the scalar plant.
    fn benchmark_fixture() -> (
        Vec<(String, SynthesisResult)>,
        Vec<TestDistribution>,
        SystemModel,
        CostSpec,
        SafetySpec,
    ) {
        use crate::samples::SampleSet;
        use crate::synthesis::{synthesize_drinc, SynthesisSpec};
        let model = scalar_plant();
        let t = 2;
        let d = 6;
        let support = Polytope::uniform_box(-1.0, 1.0, d).unwrap();
        let data = DMatrix::from_row_slice(
            2,
            d,
            &[0.3, -0.2, 0.1, 0.05, -0.1, 0.2, -0.4, 0.1, 0.3, -0.05, 0.15, -0.1],
        );
        let samples = SampleSet::new(data, 1, 1, t, &support).unwrap();
        let cost = CostSpec::new(DMatrix::identity(2, 2)).unwrap();
        let safety = SafetySpec::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_column_slice(&[5.0, 5.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            0.1,
            1,
            1,
        )
        .unwrap();
        let spec = SynthesisSpec::new(
            model.clone(),
            cost.clone(),
            crate::model::SafetySpec::unconstrained(0.1, 1, 1).unwrap(),
            support.clone(),
            0.05,
            t,
            samples.clone(),
        )
        .unwrap();
        let result = synthesize_drinc(&spec).unwrap();
        let designs = vec![("a".to_string(), result.clone()), ("b".to_string(), result)];
        let center = crate::samples::empirical_center(&samples);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let dists: Vec<TestDistribution> =
            sample_wasserstein_sphere(&center, 0.2, 2, &support, 3, &mut rng)
                .unwrap()
                .into_iter()
                .map(|dist| TestDistribution { dist, radius: 0.2 })
                .collect();
        (designs, dists, model, cost, safety)
    }

    #[test]
    fn benchmark_is_deterministic_and_design_symmetric() {
        let (designs, dists, model, cost, safety) = benchmark_fixture();
        let run = || {
            run_benchmark(&designs, &dists, &model, &cost, &safety, 3, 20, 99).unwrap()
        };
        let first = run();
        let second = run();
        assert_eq!(first, second);
        // Identical designs under different names score identically.
        assert_eq!(first.rows.len(), 4);
        for ti in 0..2 {
            let a = &first.rows[ti];
            let b = &first.rows[2 + ti];
            assert_eq!(a.j_bar, b.j_bar);
            assert_eq!(a.v_bar, b.v_bar);
        }
    }

    #[test]
    fn empty_benchmarks_are_rejected() {
        let (designs, dists, model, cost, safety) = benchmark_fixture();
        assert!(matches!(
            run_benchmark(&designs, &dists, &model, &cost, &safety, 0, 20, 99),
            Err(SimError::EmptyInput)
        ));
        assert!(matches!(
            run_benchmark(&[], &dists, &model, &cost, &safety, 3, 20, 99),
            Err(SimError::EmptyInput)
        ));
    }

    #[test]
    fn report_files_round_trip() {
        let (designs, dists, model, cost, safety) = benchmark_fixture();
        let report =
            run_benchmark(&designs, &dists, &model, &cost, &safety, 2, 20, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let json_path = dir.path().join("report.json");
        let csv_path = dir.path().join("report.csv");
        save_report(&report, &json_path).unwrap();
        save_csv(&report, &csv_path).unwrap();
        let loaded: BenchmarkReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(loaded, report);
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "design,radius,seed,J_bar,V_bar");
        assert_eq!(lines.count(), report.rows.len());
    }
}
