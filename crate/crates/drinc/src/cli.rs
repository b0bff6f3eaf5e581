//! Command-line front end: a single JSON run configuration drives
//! synthesis, simulation, and benchmarking, and a self-check command runs
//! the oracle suites. All randomness flows from the config seed, so every
//! command is reproducible from its config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::SolveOptions;
use crate::dro::{
    brute_force_dro_risk, pwl_dro_risk, quad_dro_risk_bound, PwlLoss, QuadLoss,
};
use crate::model::{
    load_model, mat_from_rows, mat_rows, ModelError, Polytope, SafetySpec, SystemModel,
    validate_system,
};
use crate::samples::{
    empirical_center, load_samples, wasserstein2, AmbiguitySet, EmpiricalDistribution,
    SampleError,
};
use crate::sim::{
    draw_noise, metrics, rollout, run_benchmark, sample_wasserstein_sphere, save_csv,
    save_report, SimError, TestDistribution,
};
use crate::sls::{
    achievability_residual, build_achievability, fir_predict, nearest_achievable,
    realize_controller, ClosedLoopMap, SlsError,
};
use crate::synthesis::{
    cost_matrix_top, save_result, synthesis_opts, synthesize_drinc, synthesize_drinc_with,
    synthesize_empirical_with, synthesize_lqg_with, synthesize_robust_with, SynthesisError,
    SynthesisResult, SynthesisSpec,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("gamma is {0}, must lie strictly between 0 and 1")]
    InvalidGamma(f64),
    #[error("epsilon is {0}, must be a positive finite squared radius")]
    InvalidEpsilon(f64),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad --set override: {0}")]
    BadOverride(String),
    #[error("{failed} of {total} checks failed: {names}")]
    ValidationFailed { failed: usize, total: usize, names: String },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sls(#[from] SlsError),
}

impl CliError {
    /// Stable machine-readable code for the stderr error report.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::InvalidGamma(_) => "InvalidGamma",
            CliError::InvalidEpsilon(_) => "InvalidEpsilon",
            CliError::FileNotFound(_) => "FileNotFound",
            CliError::InvalidConfig(_) => "InvalidConfig",
            CliError::BadOverride(_) => "BadOverride",
            CliError::ValidationFailed { .. } => "ValidationFailed",
            CliError::Io { .. } => "IoError",
            CliError::Synthesis(e) => match e {
                SynthesisError::InvalidSpec(_) => "InvalidSpec",
                SynthesisError::EmptySampleSet => "EmptySampleSet",
                SynthesisError::InfeasibleSafety => "InfeasibleSafety",
                SynthesisError::SolverFailure { .. } => "SolverFailure",
                SynthesisError::TooManyScenarios { .. } => "TooManyScenarios",
                SynthesisError::UnboundedSupport => "UnboundedSupport",
                _ => "SynthesisError",
            },
            CliError::Sim(_) => "SimulationError",
            CliError::Sample(_) => "SampleError",
            CliError::Model(_) => "ModelError",
            CliError::Sls(_) => "ResponseMapError",
        }
    }

    /// 2 for usage and config problems, 1 for runtime and property failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidGamma(_)
            | CliError::InvalidEpsilon(_)
            | CliError::FileNotFound(_)
            | CliError::InvalidConfig(_)
            | CliError::BadOverride(_)
            | CliError::Sample(_)
            | CliError::Model(_) => 2,
            CliError::Synthesis(e) => match e {
                SynthesisError::InvalidSpec(_)
                | SynthesisError::EmptySampleSet
                | SynthesisError::TooManyScenarios { .. }
                | SynthesisError::UnboundedSupport => 2,
                _ => 1,
            },
            _ => 1,
        }
    }

    /// One-line JSON report for stderr.
    pub fn report_json(&self) -> String {
        serde_json::json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }
}

/// Design method selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Drinc,
    Empirical,
    Robust,
    Lqg,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Drinc => "drinc",
            Method::Empirical => "empirical",
            Method::Robust => "robust",
            Method::Lqg => "lqg",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Benchmark sweep grid: which methods to compare and where to place the
/// test distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Transport distances of the test distributions from the center.
    pub radii: Vec<f64>,
    pub dists_per_radius: usize,
    pub rollouts_per_dist: usize,
    /// Empirical atoms are split this many times before perturbation.
    pub atom_split: usize,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            radii: vec![0.02, 0.04, 0.06, 0.08, 0.10, 0.12],
            dists_per_radius: 1,
            rollouts_per_dist: 20,
            atom_split: 10,
            methods: vec![Method::Drinc, Method::Empirical, Method::Robust, Method::Lqg],
        }
    }
}

fn default_scenario_count() -> usize {
    256
}

/// One experiment in one artifact: plant and data files, the design knobs,
/// and the benchmark sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model file: plant, cost weight, window support, safety rows.
    pub model_path: String,
    /// Disturbance-window CSV, one window per row.
    pub samples_path: String,
    /// Squared ambiguity radius.
    pub epsilon: f64,
    /// Safety risk level; overrides the value stored in the model file.
    pub gamma: f64,
    /// Closed-loop response order.
    pub t: usize,
    /// Rollout horizon.
    pub t_bar: usize,
    pub seed: u64,
    pub method: Method,
    /// Solver options; defaults to the synthesis-tuned tolerances.
    #[serde(default = "synthesis_opts")]
    pub solver: SolveOptions,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Scenario budget for the worst-case baseline.
    #[serde(default = "default_scenario_count")]
    pub scenario_count: usize,
}

impl RunConfig {
    /// Checks numeric ranges and that the referenced files exist.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CliError::InvalidGamma(self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::InvalidEpsilon(self.epsilon));
        }
        if self.t == 0 {
            return Err(CliError::InvalidConfig("t must be at least 1".into()));
        }
        if self.t_bar <= self.t + 1 {
            return Err(CliError::InvalidConfig(format!(
                "t_bar = {} leaves no scored steps after the burn-in t = {}",
                self.t_bar, self.t
            )));
        }
        let sweep = &self.sweep;
        if sweep.radii.iter().any(|&r| r < 0.0 || !r.is_finite()) {
            return Err(CliError::InvalidConfig("sweep radii must be nonnegative".into()));
        }
        if sweep.dists_per_radius == 0 || sweep.rollouts_per_dist == 0 || sweep.atom_split == 0
        {
            return Err(CliError::InvalidConfig(
                "sweep counts must be at least 1".into(),
            ));
        }
        if self.scenario_count == 0 {
            return Err(CliError::InvalidConfig("scenario_count must be at least 1".into()));
        }
        for path in [&self.model_path, &self.samples_path] {
            if !Path::new(path).is_file() {
                return Err(CliError::FileNotFound(path.clone()));
            }
        }
        Ok(())
    }
}

/// Applies one `key=value` override to the raw config document. Dotted keys
/// descend into nested objects; values parse as JSON and fall back to plain
/// strings.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::BadOverride(format!("'{spec}' has no '='")))?;
    if key.is_empty() {
        return Err(CliError::BadOverride(format!("'{spec}' has an empty key")));
    }
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = root;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| CliError::BadOverride(format!("'{key}' descends into a non-object")))?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    cursor
        .as_object_mut()
        .ok_or_else(|| CliError::BadOverride(format!("'{key}' descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Loads and validates a run configuration, applying `--set` overrides and
/// an optional seed override on top of the file contents.
pub fn load_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CliError::FileNotFound(path.display().to_string()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    if let Some(s) = seed {
        apply_override(&mut value, &format!("seed={s}"))?;
    }
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Assembles the synthesis problem from the config: the model file supplies
/// plant, cost, support, and safety rows; the config supplies epsilon, the
/// risk level, and the response order.
pub fn build_problem(config: &RunConfig) -> Result<SynthesisSpec, CliError> {
    let model_spec = load_model(Path::new(&config.model_path))?;
    let (n, m, p) = (model_spec.system.n(), model_spec.system.m(), model_spec.system.p());
    let old = &model_spec.safety;
    let safety = SafetySpec::new(
        old.state_rows(n),
        old.g_vec.rows(0, old.j_x).into_owned(),
        old.input_rows(n),
        old.g_vec.rows(old.j_x, old.j_u).into_owned(),
        config.gamma,
        n,
        m,
    )?;
    let samples =
        load_samples(Path::new(&config.samples_path), n, p, config.t, &model_spec.support)?;
    Ok(SynthesisSpec::new(
        model_spec.system,
        model_spec.cost,
        safety,
        model_spec.support,
        config.epsilon,
        config.t,
        samples,
    )?)
}

fn run_method(
    method: Method,
    spec: &SynthesisSpec,
    opts: &SolveOptions,
    scenario_count: usize,
) -> Result<SynthesisResult, CliError> {
    Ok(match method {
        Method::Drinc => synthesize_drinc_with(spec, opts)?,
        Method::Empirical => synthesize_empirical_with(spec, opts)?,
        Method::Robust => synthesize_robust_with(spec, scenario_count, opts)?,
        Method::Lqg => synthesize_lqg_with(spec, opts)?,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Serialize, Deserialize)]
struct RawController {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "Phi_x")]
    phi_x: Vec<Vec<f64>>,
    #[serde(rename = "Phi_u")]
    phi_u: Vec<Vec<f64>>,
}

/// Writes a self-contained controller file: the response maps together with
/// the plant they were designed for.
pub fn save_controller(
    phi: &ClosedLoopMap,
    model: &SystemModel,
    path: &Path,
) -> Result<(), CliError> {
    let raw = RawController {
        a: mat_rows(&model.a),
        b: mat_rows(&model.b),
        c: mat_rows(&model.c),
        t: phi.t,
        phi_x: mat_rows(&phi.phi_x),
        phi_u: mat_rows(&phi.phi_u),
    };
    std::fs::write(path, serde_json::to_string_pretty(&raw).expect("plain struct"))
        .map_err(io_err(path))
}

/// Reads a controller file back into its plant and response maps.
pub fn load_controller(path: &Path) -> Result<(SystemModel, ClosedLoopMap), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CliError::FileNotFound(path.display().to_string()))?;
    let raw: RawController = serde_json::from_str(&text)
        .map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))?;
    let bad = |reason: String| CliError::InvalidConfig(format!("{}: {reason}", path.display()));
    let a = mat_from_rows("A", &raw.a, None).map_err(bad)?;
    let b = mat_from_rows("B", &raw.b, None).map_err(bad)?;
    let c = mat_from_rows("C", &raw.c, None).map_err(bad)?;
    let model = validate_system(a, b, c)?;
    let phi_x = mat_from_rows("Phi_x", &raw.phi_x, None).map_err(bad)?;
    let phi_u = mat_from_rows("Phi_u", &raw.phi_u, None).map_err(bad)?;
    let phi = ClosedLoopMap::new(phi_x, phi_u, raw.t, model.p())?;
    Ok((model, phi))
}

/// Residual above which a loaded controller is treated as corrupted.
pub const CONTROLLER_RESIDUAL_TOL: f64 = 1e-6;

/// Checks a loaded controller against its own plant: the response maps must
/// satisfy the closed-loop equations.
fn cross_check_controller(model: &SystemModel, phi: &ClosedLoopMap) -> Result<f64, CliError> {
    let cons = build_achievability(model, phi.t);
    let residual = achievability_residual(phi, &cons)?;
    if residual > CONTROLLER_RESIDUAL_TOL {
        return Err(CliError::InvalidConfig(format!(
            "controller fails the closed-loop equations with residual {residual:.3e}"
        )));
    }
    Ok(residual)
}

/// What `cmd_synthesize` reports on stdout.
#[derive(Clone, Debug, Serialize)]
pub struct SynthesisSummary {
    pub method: Method,
    pub objective: f64,
    /// Shadow cost of robustness.
    pub lambda: f64,
    pub tight: bool,
    /// lambda minus the top loss eigenvalue; nonnegative means the bound is
    /// the exact worst-case risk.
    pub tightness_margin: f64,
    pub result_path: PathBuf,
    pub controller_path: PathBuf,
}

/// Solves the configured design and writes `result.json` and
/// `controller.json` into the output directory.
pub fn cmd_synthesize(config: &RunConfig, out_dir: &Path) -> Result<SynthesisSummary, CliError> {
    config.validate()?;
    let spec = build_problem(config)?;
    let result = run_method(config.method, &spec, &config.solver, config.scenario_count)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let result_path = out_dir.join("result.json");
    save_result(&result, &result_path)?;
    let controller_path = out_dir.join("controller.json");
    save_controller(&result.phi_star, &spec.model, &controller_path)?;
    let margin = result.certificate.lambda - cost_matrix_top(&spec, &result.phi_star);
    Ok(SynthesisSummary {
        method: config.method,
        objective: result.objective,
        lambda: result.certificate.lambda,
        tight: result.tight,
        tightness_margin: margin,
        result_path,
        controller_path,
    })
}

/// What `cmd_simulate` reports on stdout.
#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub j_bar: f64,
    pub v_bar: f64,
    pub rollouts: usize,
    pub t_bar: usize,
    pub metrics_path: PathBuf,
}

/// Rolls a saved controller out on the training distribution and writes the
/// averaged metrics.
pub fn cmd_simulate(
    config: &RunConfig,
    design: &Path,
    out_dir: &Path,
) -> Result<SimulateSummary, CliError> {
    config.validate()?;
    let spec = build_problem(config)?;
    let (model, phi) = load_controller(design)?;
    if (&model.a - &spec.model.a).amax() > 1e-12
        || (&model.b - &spec.model.b).amax() > 1e-12
        || (&model.c - &spec.model.c).amax() > 1e-12
    {
        return Err(CliError::InvalidConfig(format!(
            "controller {} was designed for a different plant than {}",
            design.display(),
            config.model_path
        )));
    }
    cross_check_controller(&model, &phi)?;
    let center = empirical_center(&spec.samples);
    let mut controller = realize_controller(&phi, &model)?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let (n, p) = (model.n(), model.p());
    let rollouts = config.sweep.rollouts_per_dist;
    let mut trajectories = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let noise = draw_noise(&center, n, p, phi.t, config.t_bar, &mut rng);
        trajectories.push(rollout(&model, &mut controller, &noise, config.t_bar)?);
    }
    let m = metrics(&trajectories, &spec.cost, &spec.safety, phi.t)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let metrics_path = out_dir.join("simulation.json");
    let doc = serde_json::json!({
        "j_bar": m.j_bar,
        "v_bar": m.v_bar,
        "steps": m.steps,
        "rollouts": rollouts,
        "t_bar": config.t_bar,
        "seed": config.seed,
    });
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&doc).expect("plain value"))
        .map_err(io_err(&metrics_path))?;
    Ok(SimulateSummary {
        j_bar: m.j_bar,
        v_bar: m.v_bar,
        rollouts,
        t_bar: config.t_bar,
        metrics_path,
    })
}

/// What `cmd_benchmark` reports on stdout.
#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkSummary {
    pub j_bar: f64,
    pub v_bar: f64,
    pub rows: usize,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
}

/// Synthesizes every configured method, generates test distributions on the
/// configured transport spheres, evaluates all pairs, and writes the report
/// JSON plus a plot-ready CSV.
pub fn cmd_benchmark(config: &RunConfig, out_dir: &Path) -> Result<BenchmarkSummary, CliError> {
    config.validate()?;
    if config.sweep.methods.is_empty() || config.sweep.radii.is_empty() {
        return Err(CliError::InvalidConfig(
            "benchmark sweep needs at least one method and one radius".into(),
        ));
    }
    let spec = build_problem(config)?;
    let mut designs = Vec::with_capacity(config.sweep.methods.len());
    for &method in &config.sweep.methods {
        let result = run_method(method, &spec, &config.solver, config.scenario_count)?;
        designs.push((method.name().to_string(), result));
    }
    let center = empirical_center(&spec.samples);
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut test_dists = Vec::new();
    for &radius in &config.sweep.radii {
        let dists = sample_wasserstein_sphere(
            &center,
            radius,
            config.sweep.dists_per_radius,
            &spec.support,
            config.sweep.atom_split,
            &mut rng,
        )?;
        test_dists.extend(dists.into_iter().map(|dist| TestDistribution { dist, radius }));
    }
    let report = run_benchmark(
        &designs,
        &test_dists,
        &spec.model,
        &spec.cost,
        &spec.safety,
        config.sweep.rollouts_per_dist,
        config.t_bar,
        config.seed,
    )?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let report_path = out_dir.join("report.json");
    let csv_path = out_dir.join("report.csv");
    save_report(&report, &report_path)?;
    save_csv(&report, &csv_path)?;
    Ok(BenchmarkSummary {
        j_bar: report.j_bar,
        v_bar: report.v_bar,
        rows: report.rows.len(),
        report_path,
        csv_path,
    })
}

/// Self-check depth: `Fast` runs the analytic oracles, `Full` adds the grid
/// transport programs and end-to-end determinism checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidateLevel {
    Fast,
    Full,
}

impl FromStr for ValidateLevel {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "fast" => Ok(ValidateLevel::Fast),
            "full" => Ok(ValidateLevel::Full),
            other => Err(CliError::InvalidConfig(format!(
                "unknown validation level '{other}', expected fast or full"
            ))),
        }
    }
}

/// Outcome of one named self-check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn run_check(
    name: &'static str,
    body: impl FnOnce() -> Result<String, String>,
) -> CheckResult {
    match body() {
        Ok(detail) => CheckResult { name, passed: true, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

fn es(e: impl fmt::Display) -> String {
    e.to_string()
}

/// Transport distance on a pair small enough to compute by hand.
fn check_transport_distance() -> Result<String, String> {
    let p = EmpiricalDistribution::new(
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DVector::from_element(2, 0.5),
    )
    .map_err(es)?;
    let q = EmpiricalDistribution::new(
        DMatrix::from_row_slice(1, 1, &[0.5]),
        DVector::from_element(1, 1.0),
    )
    .map_err(es)?;
    let w = wasserstein2(&p, &q).map_err(es)?;
    if (w - 0.5).abs() <= 1e-9 {
        Ok(format!("distance {w:.9}"))
    } else {
        Err(format!("distance {w}, expected 0.5"))
    }
}

/// A single affine piece has a closed-form worst case: shift every atom by
/// the radius along the gradient direction.
fn check_affine_risk() -> Result<String, String> {
    let center = EmpiricalDistribution::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]),
        DVector::from_element(2, 0.5),
    )
    .map_err(es)?;
    let epsilon = 0.09;
    let amb = AmbiguitySet::new(center, epsilon, Polytope::full_space(2)).map_err(es)?;
    let a = DVector::from_column_slice(&[1.0, 2.0]);
    let norm = a.norm();
    let loss = PwlLoss::new(vec![(a, 0.3)]).map_err(es)?;
    let (risk, _) = pwl_dro_risk(&loss, &amb).map_err(es)?;
    let expected = 1.5 + 0.3 + norm * epsilon.sqrt();
    if (risk - expected).abs() <= 1e-6 * expected {
        Ok(format!("risk {risk:.9} matches {expected:.9}"))
    } else {
        Err(format!("risk {risk}, expected {expected}"))
    }
}

/// A scalar quadratic over a free support has a closed-form worst case:
/// push the atom away from the origin by the radius.
fn check_quadratic_risk() -> Result<String, String> {
    let center = EmpiricalDistribution::new(
        DMatrix::from_row_slice(1, 1, &[0.7]),
        DVector::from_element(1, 1.0),
    )
    .map_err(es)?;
    let amb = AmbiguitySet::new(center, 0.04, Polytope::full_space(1)).map_err(es)?;
    let loss = QuadLoss::new(DMatrix::from_row_slice(1, 1, &[2.0])).map_err(es)?;
    let (risk, _, exact) = quad_dro_risk_bound(&loss, &amb).map_err(es)?;
    let expected = 2.0 * (0.7 + 0.2) * (0.7 + 0.2);
    if !exact {
        return Err("free-support bound not flagged exact".into());
    }
    if (risk - expected).abs() <= 1e-6 * expected {
        Ok(format!("risk {risk:.9} matches {expected:.9}"))
    } else {
        Err(format!("risk {risk}, expected {expected}"))
    }
}

fn validate_plant() -> SystemModel {
    validate_system(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .expect("fixed plant is valid")
}

/// One controller, two execution paths: the finite response map applied to
/// the noise window and the realized recursive controller must agree.
fn equivalence_errors(
    model: &SystemModel,
    phi: &ClosedLoopMap,
    t_bar: usize,
    seed: u64,
) -> Result<f64, String> {
    let (n, p, t) = (model.n(), model.p(), phi.t);
    let mut controller = realize_controller(phi, model).map_err(es)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noise = DMatrix::from_fn(t_bar, n + p, |_, _| {
        rand::Rng::random_range(&mut rng, -1.0..1.0)
    });
    let traj = rollout(model, &mut controller, &noise, t_bar).map_err(es)?;
    let mut worst: f64 = 0.0;
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
        let (x, u) = fir_predict(phi, &window).map_err(es)?;
        worst = worst.max((traj.states.row(step).transpose() - x).amax());
        worst = worst.max((traj.inputs.row(step).transpose() - u).amax());
    }
    Ok(worst)
}

fn check_realization_equivalence() -> Result<String, String> {
    let model = validate_plant();
    let t = 3;
    let cons = build_achievability(&model, t);
    let d = (model.n() + model.p()) * (t + 1);
    let mut rng = ChaCha12Rng::seed_from_u64(41);
    let tx = DMatrix::from_fn(model.n(), d, |_, _| rand::Rng::random_range(&mut rng, -0.5..0.5));
    let tu = DMatrix::from_fn(model.m(), d, |_, _| rand::Rng::random_range(&mut rng, -0.5..0.5));
    let phi = nearest_achievable(&cons, &tx, &tu).map_err(es)?;
    let worst = equivalence_errors(&model, &phi, 30, 42)?;
    if worst <= 1e-8 {
        Ok(format!("largest deviation {worst:.3e}"))
    } else {
        Err(format!("largest deviation {worst:.3e} exceeds 1e-8"))
    }
}

/// Cross-checks a user-supplied controller file: closed-loop equations,
/// then execution-path equivalence on its own plant.
fn check_controller_file(path: &Path) -> Result<String, String> {
    let (model, phi) = load_controller(path).map_err(es)?;
    let residual = cross_check_controller(&model, &phi).map_err(es)?;
    let worst = equivalence_errors(&model, &phi, phi.t + 20, 43)?;
    if worst > 1e-8 {
        return Err(format!("execution paths deviate by {worst:.3e}"));
    }
    Ok(format!("residual {residual:.3e}, execution deviation {worst:.3e}"))
}

fn validate_fixture(epsilon: f64) -> Result<SynthesisSpec, String> {
    let model = validate_system(
        DMatrix::from_row_slice(1, 1, &[0.8]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DMatrix::from_row_slice(1, 1, &[1.0]),
    )
    .map_err(es)?;
    let t = 2;
    let support = Polytope::uniform_box(-1.0, 1.0, 6).map_err(es)?;
    let samples = crate::samples::SampleSet::new(
        DMatrix::from_row_slice(
            2,
            6,
            &[0.3, -0.2, 0.1, 0.05, -0.1, 0.2, -0.4, 0.1, 0.3, -0.05, 0.15, -0.1],
        ),
        1,
        1,
        t,
        &support,
    )
    .map_err(es)?;
    SynthesisSpec::new(
        model,
        crate::model::CostSpec::new(DMatrix::identity(2, 2)).map_err(es)?,
        SafetySpec::unconstrained(0.1, 1, 1).map_err(es)?,
        support,
        epsilon,
        t,
        samples,
    )
    .map_err(es)
}

/// Solves a small design and replays the certificate identities.
fn check_certificate_feasibility() -> Result<String, String> {
    let spec = validate_fixture(0.1)?;
    let result = synthesize_drinc(&spec).map_err(es)?;
    let cert = &result.certificate;
    let mean = cert.s.iter().sum::<f64>() / cert.s.len() as f64;
    let recomputed = cert.lambda * spec.epsilon + mean;
    if (result.objective - recomputed).abs() > 1e-9 {
        return Err(format!(
            "objective {} differs from its certificate value {recomputed}",
            result.objective
        ));
    }
    if cert.lambda < -1e-9 {
        return Err(format!("negative shadow cost {}", cert.lambda));
    }
    let cons = build_achievability(&spec.model, spec.t);
    let residual = achievability_residual(&result.phi_star, &cons).map_err(es)?;
    if residual > 1e-6 {
        return Err(format!("achievability residual {residual:.3e}"));
    }
    Ok(format!("objective {:.6}, residual {residual:.3e}", result.objective))
}

/// Exact piecewise risk against the discretized transport program.
fn check_pwl_grid() -> Result<String, String> {
    let center = EmpiricalDistribution::new(
        DMatrix::from_row_slice(2, 1, &[-0.3, 0.5]),
        DVector::from_element(2, 0.5),
    )
    .map_err(es)?;
    let support = Polytope::uniform_box(-1.0, 1.0, 1).map_err(es)?;
    let amb = AmbiguitySet::new(center, 0.02, support).map_err(es)?;
    let loss = PwlLoss::new(vec![
        (DVector::from_column_slice(&[1.0]), 0.0),
        (DVector::from_column_slice(&[-1.5]), 0.2),
    ])
    .map_err(es)?;
    let (risk, _) = pwl_dro_risk(&loss, &amb).map_err(es)?;
    let grid = brute_force_dro_risk(|xi| loss.eval(xi), &amb, 51).map_err(es)?;
    if risk < grid - 1e-7 {
        return Err(format!("risk {risk} below the grid lower bound {grid}"));
    }
    if (risk - grid) > 0.02 * risk.abs().max(1e-9) {
        return Err(format!("risk {risk} is more than 2% above the grid value {grid}"));
    }
    Ok(format!("risk {risk:.6}, grid {grid:.6}"))
}

/// Quadratic risk bound against the discretized transport program on a case
/// where the bound is provably exact.
fn check_quad_grid() -> Result<String, String> {
    let center = EmpiricalDistribution::new(
        DMatrix::from_row_slice(2, 1, &[0.2, -0.4]),
        DVector::from_element(2, 0.5),
    )
    .map_err(es)?;
    let support = Polytope::uniform_box(-1.0, 1.0, 1).map_err(es)?;
    let amb = AmbiguitySet::new(center, 0.05, support).map_err(es)?;
    let q = DMatrix::from_row_slice(1, 1, &[1.5]);
    let loss = QuadLoss::new(q.clone()).map_err(es)?;
    let (risk, _, _) = quad_dro_risk_bound(&loss, &amb).map_err(es)?;
    let grid = brute_force_dro_risk(|xi| (xi.transpose() * &q * xi)[(0, 0)], &amb, 51)
        .map_err(es)?;
    if risk < grid - 1e-7 {
        return Err(format!("bound {risk} below the grid lower bound {grid}"));
    }
    if (risk - grid) > 0.02 * risk.abs().max(1e-9) {
        return Err(format!("bound {risk} is more than 2% above the grid value {grid}"));
    }
    Ok(format!("bound {risk:.6}, grid {grid:.6}"))
}

/// The optimal bound can only grow with the ambiguity radius.
fn check_radius_monotonicity() -> Result<String, String> {
    let mut last = f64::NEG_INFINITY;
    let mut values = Vec::new();
    for epsilon in [1e-4, 0.05, 0.2] {
        let spec = validate_fixture(epsilon)?;
        let result = synthesize_drinc(&spec).map_err(es)?;
        if result.objective < last - 1e-7 {
            return Err(format!(
                "objective dropped from {last} to {} when the radius grew",
                result.objective
            ));
        }
        last = result.objective;
        values.push(format!("{:.6}", result.objective));
    }
    Ok(format!("objectives {}", values.join(" <= ")))
}

/// Two identical benchmark runs must agree bit for bit.
fn check_benchmark_determinism() -> Result<String, String> {
    let spec = validate_fixture(0.05)?;
    let result = crate::synthesis::synthesize_empirical(&spec).map_err(es)?;
    let designs = vec![("empirical".to_string(), result)];
    let center = empirical_center(&spec.samples);
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let dists: Vec<TestDistribution> =
        sample_wasserstein_sphere(&center, 0.1, 1, &spec.support, 3, &mut rng)
            .map_err(es)?
            .into_iter()
            .map(|dist| TestDistribution { dist, radius: 0.1 })
            .collect();
    let run = || {
        run_benchmark(&designs, &dists, &spec.model, &spec.cost, &spec.safety, 2, 12, 3)
            .map_err(es)
    };
    let first = run()?;
    let second = run()?;
    if first != second {
        return Err("two identical runs produced different reports".into());
    }
    Ok(format!("stable at J_bar {:.6}", first.j_bar))
}

/// Runs the oracle suite, optionally cross-checking a controller file.
pub fn cmd_validate(level: ValidateLevel, controller: Option<&Path>) -> Vec<CheckResult> {
    let mut results = vec![
        run_check("transport-distance-oracle", check_transport_distance),
        run_check("affine-risk-analytic-oracle", check_affine_risk),
        run_check("quadratic-risk-analytic-oracle", check_quadratic_risk),
        run_check("realization-equivalence", check_realization_equivalence),
        run_check("risk-certificate-feasibility", check_certificate_feasibility),
    ];
    if level == ValidateLevel::Full {
        results.push(run_check("piecewise-risk-grid-oracle", check_pwl_grid));
        results.push(run_check("quadratic-risk-grid-oracle", check_quad_grid));
        results.push(run_check("radius-monotonicity", check_radius_monotonicity));
        results.push(run_check("benchmark-determinism", check_benchmark_determinism));
    }
    if let Some(path) = controller {
        results.push(run_check("controller-cross-check", || check_controller_file(path)));
    }
    results
}

/// Summary table for stdout.
pub fn render_checks(results: &[CheckResult]) -> String {
    let mut out = String::from("check                              status  detail\n");
    for r in results {
        out.push_str(&format!(
            "{:<34} {:<7} {}\n",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.detail
        ));
    }
    out
}

/// The error to report when any check failed, or `None` when all passed.
pub fn validation_failure(results: &[CheckResult]) -> Option<CliError> {
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        None
    } else {
        Some(CliError::ValidationFailed {
            failed: failed.len(),
            total: results.len(),
            names: failed.join(", "),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, ModelSpec, save_model};
    use crate::samples::{save_samples, SampleSet};

    /// Writes a scalar-plant model file and a matching samples CSV.
    fn write_fixture(dir: &Path) -> (String, String) {
        let system = validate_system(
            DMatrix::from_row_slice(1, 1, &[0.8]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let support = Polytope::uniform_box(-1.0, 1.0, 6).unwrap();
        let spec = ModelSpec {
            system,
            cost: CostSpec::new(DMatrix::identity(2, 2)).unwrap(),
            support: support.clone(),
            safety: SafetySpec::new(
                DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
                DVector::from_column_slice(&[8.0, 8.0]),
                DMatrix::zeros(0, 1),
                DVector::zeros(0),
                0.1,
                1,
                1,
            )
            .unwrap(),
        };
        let model_path = dir.join("model.json");
        save_model(&spec, &model_path).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let data = DMatrix::from_fn(6, 6, |_, _| rand::Rng::random_range(&mut rng, -0.6..0.6));
        let samples = SampleSet::new(data, 1, 1, 2, &support).unwrap();
        let samples_path = dir.join("samples.csv");
        save_samples(&samples, &samples_path).unwrap();
        (
            model_path.to_string_lossy().into_owned(),
            samples_path.to_string_lossy().into_owned(),
        )
    }

    fn fixture_config(dir: &Path) -> RunConfig {
        let (model_path, samples_path) = write_fixture(dir);
        RunConfig {
            model_path,
            samples_path,
            epsilon: 0.05,
            gamma: 0.1,
            t: 2,
            t_bar: 12,
            seed: 7,
            method: Method::Empirical,
            solver: synthesis_opts(),
            sweep: SweepConfig {
                radii: vec![0.1],
                dists_per_radius: 1,
                rollouts_per_dist: 2,
                atom_split: 3,
                methods: vec![Method::Empirical, Method::Lqg],
            },
            scenario_count: 16,
        }
    }

    fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
        let path = dir.join("run.json");
        std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
        path
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let text = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn out_of_range_gamma_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fixture_config(dir.path());
        config.gamma = 1.5;
        let path = write_config(dir.path(), &config);
        let err = load_config(&path, &[], None).unwrap_err();
        assert_eq!(err.code(), "InvalidGamma");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn nonpositive_epsilon_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fixture_config(dir.path());
        config.epsilon = 0.0;
        let path = write_config(dir.path(), &config);
        let err = load_config(&path, &[], None).unwrap_err();
        assert_eq!(err.code(), "InvalidEpsilon");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_sample_file_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fixture_config(dir.path());
        config.samples_path = dir.path().join("absent.csv").to_string_lossy().into_owned();
        let path = write_config(dir.path(), &config);
        let err = load_config(&path, &[], None).unwrap_err();
        assert_eq!(err.code(), "FileNotFound");
        assert!(err.to_string().contains("absent.csv"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let path = write_config(dir.path(), &config);
        let sets = vec![
            "epsilon=0.25".to_string(),
            "solver.max_iter=500".to_string(),
            "sweep.radii=[0.05,0.07]".to_string(),
            "method=lqg".to_string(),
        ];
        let loaded = load_config(&path, &sets, Some(99)).unwrap();
        assert_eq!(loaded.epsilon, 0.25);
        assert_eq!(loaded.solver.max_iter, 500);
        assert_eq!(loaded.sweep.radii, vec![0.05, 0.07]);
        assert_eq!(loaded.method, Method::Lqg);
        assert_eq!(loaded.seed, 99);
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let path = write_config(dir.path(), &config);
        let err = load_config(&path, &["gamma".to_string()], None).unwrap_err();
        assert_eq!(err.code(), "BadOverride");
        let err = load_config(&path, &["epsilon.deep=1".to_string()], None).unwrap_err();
        assert_eq!(err.code(), "BadOverride");
        let err = load_config(&path, &["bogus_key=1".to_string()], None).unwrap_err();
        assert_eq!(err.code(), "InvalidConfig");
    }

    #[test]
    fn unknown_method_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let path = write_config(dir.path(), &config);
        let err = load_config(&path, &["method=magic".to_string()], None).unwrap_err();
        assert_eq!(err.code(), "InvalidConfig");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn error_reports_are_machine_readable() {
        let err = CliError::InvalidGamma(1.5);
        let doc: serde_json::Value = serde_json::from_str(&err.report_json()).unwrap();
        assert_eq!(doc["error"], "InvalidGamma");
        assert!(doc["message"].as_str().unwrap().contains("1.5"));
    }

    #[test]
    fn synthesize_writes_result_and_controller() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let out = dir.path().join("out");
        let summary = cmd_synthesize(&config, &out).unwrap();
        assert!(summary.result_path.is_file());
        assert!(summary.controller_path.is_file());
        assert!(summary.objective > 0.0);
        let (model, phi) = load_controller(&summary.controller_path).unwrap();
        assert_eq!(model.n(), 1);
        assert_eq!(phi.t, config.t);
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&summary.result_path).unwrap())
                .unwrap();
        assert!(doc["Phi_x"].is_array());
        assert!(doc["objective"].is_number());
    }

    #[test]
    fn simulate_scores_a_saved_controller() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let out = dir.path().join("out");
        let summary = cmd_synthesize(&config, &out).unwrap();
        let sim = cmd_simulate(&config, &summary.controller_path, &out).unwrap();
        assert!(sim.j_bar >= 0.0);
        assert!(sim.metrics_path.is_file());
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&sim.metrics_path).unwrap()).unwrap();
        assert_eq!(doc["rollouts"], 2);
    }

    #[test]
    fn corrupted_controllers_fail_the_cross_check() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let out = dir.path().join("out");
        let summary = cmd_synthesize(&config, &out).unwrap();
        let text = std::fs::read_to_string(&summary.controller_path).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["Phi_u"][0][0] = serde_json::json!(doc["Phi_u"][0][0].as_f64().unwrap() + 0.5);
        let bad = dir.path().join("bad_controller.json");
        std::fs::write(&bad, doc.to_string()).unwrap();
        let err = cmd_simulate(&config, &bad, &out).unwrap_err();
        assert_eq!(err.code(), "InvalidConfig");
        let checks = cmd_validate(ValidateLevel::Fast, Some(&bad));
        let cross = checks.iter().find(|c| c.name == "controller-cross-check").unwrap();
        assert!(!cross.passed, "corrupted controller passed: {}", cross.detail);
        assert!(validation_failure(&checks).is_some());
    }

    #[test]
    fn benchmark_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture_config(dir.path());
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let first = cmd_benchmark(&config, &out_a).unwrap();
        let second = cmd_benchmark(&config, &out_b).unwrap();
        assert_eq!(first.rows, 2);
        let bytes_a = std::fs::read(&first.csv_path).unwrap();
        let bytes_b = std::fs::read(&second.csv_path).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn fast_validation_passes() {
        let checks = cmd_validate(ValidateLevel::Fast, None);
        for check in &checks {
            assert!(check.passed, "{} failed: {}", check.name, check.detail);
        }
        assert!(validation_failure(&checks).is_none());
        let table = render_checks(&checks);
        assert!(table.contains("transport-distance-oracle"));
        assert!(table.contains("pass"));
    }

    #[test]
    fn validation_levels_parse_and_reject() {
        assert_eq!("fast".parse::<ValidateLevel>().unwrap(), ValidateLevel::Fast);
        assert_eq!("FULL".parse::<ValidateLevel>().unwrap(), ValidateLevel::Full);
        assert!("deep".parse::<ValidateLevel>().is_err());
    }
}
