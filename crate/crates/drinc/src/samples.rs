//! Disturbance-sample ingestion, empirical distributions, optimal-transport
//! distances, and generators for the benchmark test distributions.
//!
//! A sample is one flattened noise window [w_0'..w_T', v_0'..v_T'] of width
//! d = (n+p)(T+1); a sample set stacks N of them row-wise.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Polytope};
use crate::transport::{solve_transport, TransportError};

/// Tolerance for support membership of ingested or generated samples.
pub const SUPPORT_TOL: f64 = 1e-9;

/// Attempt budget per coordinate before rejection sampling is declared
/// stalled (acceptance below roughly 1e-3).
const REJECTION_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("parse failure in {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("row {row} has {got} columns, expected {expected}")]
    WidthMismatch { row: usize, got: usize, expected: usize },
    #[error("row {row} violates the support on face {face} by {violation:.3e}")]
    SupportViolation { row: usize, face: usize, violation: f64 },
    #[error("sample count must be at least 1")]
    InvalidCount,
    #[error("invalid generator shape: {0}")]
    InvalidShape(String),
    #[error("rejection sampling stalled: acceptance rate below 1e-3")]
    RejectionStall,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("negative weight at atom {0}")]
    NegativeWeight(usize),
    #[error("ambiguity radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// N flattened disturbance windows, all inside the declared support.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    /// N x d, one window per row.
    pub data: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
    pub t: usize,
}

impl SampleSet {
    /// Validates the window width and support membership of every row.
    pub fn new(
        data: DMatrix<f64>,
        n: usize,
        p: usize,
        t: usize,
        support: &Polytope,
    ) -> Result<Self, SampleError> {
        if data.nrows() == 0 {
            return Err(SampleError::InvalidCount);
        }
        let d = (n + p) * (t + 1);
        if data.ncols() != d {
            return Err(SampleError::WidthMismatch { row: 0, got: data.ncols(), expected: d });
        }
        if support.dim() != d {
            return Err(SampleError::DimensionMismatch(format!(
                "support lives in dimension {}, windows have width {}",
                support.dim(),
                d
            )));
        }
        for i in 0..data.nrows() {
            let row = data.row(i).transpose();
            if let Some((face, violation)) = support.worst_violation(&row) {
                if violation > SUPPORT_TOL {
                    return Err(SampleError::SupportViolation { row: i, face, violation });
                }
            }
        }
        Ok(Self { data, n, p, t })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Window width (n+p)(T+1).
    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }
}

/// Finitely supported distribution: weighted atoms in R^d.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution {
    /// M x d, one atom per row.
    pub atoms: DMatrix<f64>,
    /// Nonnegative, sums to one.
    pub weights: DVector<f64>,
}

impl EmpiricalDistribution {
    pub fn new(atoms: DMatrix<f64>, weights: DVector<f64>) -> Result<Self, SampleError> {
        if atoms.nrows() != weights.len() || atoms.nrows() == 0 {
            return Err(SampleError::DimensionMismatch(format!(
                "{} atoms with {} weights",
                atoms.nrows(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|&w| w < 0.0) {
            return Err(SampleError::NegativeWeight(i));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SampleError::WeightSum(total));
        }
        Ok(Self { atoms, weights })
    }

    pub fn m(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, i: usize) -> DVector<f64> {
        self.atoms.row(i).transpose()
    }
}

/// Ball of distributions around an empirical center: all distributions on
/// the support whose type-2 transport distance from the center is at most
/// sqrt(epsilon).
#[derive(Clone, Debug)]
pub struct AmbiguitySet {
    pub center: EmpiricalDistribution,
    /// Squared-radius parameter.
    pub epsilon: f64,
    pub support: Polytope,
}

impl AmbiguitySet {
    pub fn new(
        center: EmpiricalDistribution,
        epsilon: f64,
        support: Polytope,
    ) -> Result<Self, SampleError> {
        if !(epsilon > 0.0) {
            return Err(SampleError::InvalidRadius(epsilon));
        }
        if support.dim() != center.dim() {
            return Err(SampleError::DimensionMismatch(format!(
                "support dimension {} vs atom dimension {}",
                support.dim(),
                center.dim()
            )));
        }
        for i in 0..center.m() {
            let atom = center.atom(i);
            if let Some((face, violation)) = support.worst_violation(&atom) {
                if violation > SUPPORT_TOL {
                    return Err(SampleError::SupportViolation { row: i, face, violation });
                }
            }
        }
        Ok(Self { center, epsilon, support })
    }
}

/// Uniform distribution over the rows of a sample set.
pub fn empirical_center(set: &SampleSet) -> EmpiricalDistribution {
    let n = set.len();
    EmpiricalDistribution {
        atoms: set.data.clone(),
        weights: DVector::from_element(n, 1.0 / n as f64),
    }
}

fn squared_distance_costs(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Vec<f64> {
    let (m, k) = (p.m(), q.m());
    let mut cost = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            let mut acc = 0.0;
            for c in 0..p.dim() {
                let diff = p.atoms[(i, c)] - q.atoms[(j, c)];
                acc += diff * diff;
            }
            cost[i * k + j] = acc;
        }
    }
    cost
}

/// Type-2 transport distance: square root of the optimal squared-Euclidean
/// transport cost between the two atom sets.
pub fn wasserstein2(
    p: &EmpiricalDistribution,
    q: &EmpiricalDistribution,
) -> Result<f64, SampleError> {
    Ok(optimal_coupling(p, q)?.0)
}

/// Distance together with the optimal transport plan (atom index pairs and
/// moved mass).
pub fn optimal_coupling(
    p: &EmpiricalDistribution,
    q: &EmpiricalDistribution,
) -> Result<(f64, Vec<(usize, usize, f64)>), SampleError> {
    if p.dim() != q.dim() {
        return Err(SampleError::DimensionMismatch(format!(
            "atoms of dimension {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let cost = squared_distance_costs(p, q);
    let plan = solve_transport(p.weights.as_slice(), q.weights.as_slice(), &cost)?;
    Ok((plan.cost.max(0.0).sqrt(), plan.flows))
}

/// Loads a CSV of flattened windows, one per row, validating width and
/// support membership.
pub fn load_samples(
    path: &Path,
    n: usize,
    p: usize,
    t: usize,
    support: &Polytope,
) -> Result<SampleSet, SampleError> {
    let d = (n + p) * (t + 1);
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| SampleError::Parse { path: name.clone(), reason: e.to_string() })?;
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| SampleError::Parse { path: name.clone(), reason: e.to_string() })?;
        if record.len() != d {
            return Err(SampleError::WidthMismatch { row: i, got: record.len(), expected: d });
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| SampleError::Parse {
                path: name.clone(),
                reason: format!("row {i}: not a number: {field:?}"),
            })?;
            rows.push(v);
        }
        count += 1;
    }
    if count == 0 {
        return Err(SampleError::Parse { path: name, reason: "file contains no rows".into() });
    }
    SampleSet::new(DMatrix::from_row_slice(count, d, &rows), n, p, t, support)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    p: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "N")]
    count: usize,
}

/// Writes the CSV plus a small `<file>.meta.json` sidecar recording the
/// window shape.
pub fn save_samples(set: &SampleSet, path: &Path) -> Result<(), SampleError> {
    let name = path.display().to_string();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| SampleError::Parse { path: name.clone(), reason: e.to_string() })?;
    for i in 0..set.len() {
        let row: Vec<String> = (0..set.width()).map(|j| set.data[(i, j)].to_string()).collect();
        writer
            .write_record(&row)
            .map_err(|e| SampleError::Parse { path: name.clone(), reason: e.to_string() })?;
    }
    writer
        .flush()
        .map_err(|source| SampleError::Io { path: name.clone(), source })?;
    let sidecar = Sidecar { n: set.n, p: set.p, t: set.t, count: set.len() };
    let meta_path = format!("{name}.meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&sidecar).expect("plain struct"))
        .map_err(|source| SampleError::Io { path: meta_path, source })?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Loads a distribution file {atoms, weights}.
pub fn load_distribution(path: &Path) -> Result<EmpiricalDistribution, SampleError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| SampleError::Io { path: name.clone(), source })?;
    let raw: RawDistribution = serde_json::from_str(&text)
        .map_err(|e| SampleError::Parse { path: name.clone(), reason: e.to_string() })?;
    let atoms = crate::model::mat_from_rows("atoms", &raw.atoms, None)
        .map_err(|reason| SampleError::Parse { path: name, reason })?;
    EmpiricalDistribution::new(atoms, DVector::from_vec(raw.weights))
}

/// Writes a distribution file readable by `load_distribution`.
pub fn save_distribution(dist: &EmpiricalDistribution, path: &Path) -> Result<(), SampleError> {
    let raw = RawDistribution {
        atoms: crate::model::mat_rows(&dist.atoms),
        weights: dist.weights.iter().copied().collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&raw).expect("plain struct"))
        .map_err(|source| SampleError::Io { path: path.display().to_string(), source })
}

/// Two-component Gaussian mixture generating each window coordinate,
/// truncated to the support box by rejection.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BimodalParams {
    pub mode_low: f64,
    pub mode_high: f64,
    pub sigma: f64,
    /// Probability mass of the low mode.
    pub split: f64,
}

impl BimodalParams {
    pub fn with_split(split: f64) -> Self {
        Self { mode_low: 0.0, mode_high: 0.8, sigma: 0.15, split }
    }
}

fn bounded_box_intervals(support: &Polytope) -> Result<Vec<(f64, f64)>, SampleError> {
    let intervals = support
        .as_intervals()
        .ok_or_else(|| SampleError::InvalidShape("support must be an axis-aligned box".into()))?;
    for &(lo, hi) in &intervals {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(SampleError::InvalidShape("support box must be bounded".into()));
        }
        if hi < lo {
            return Err(SampleError::InvalidShape(format!(
                "support interval [{lo}, {hi}] is empty"
            )));
        }
    }
    Ok(intervals)
}

fn generate_coordinates<R: Rng, F: FnMut(&mut R) -> f64>(
    count: usize,
    intervals: &[(f64, f64)],
    n: usize,
    p: usize,
    t: usize,
    rng: &mut R,
    mut draw: F,
    truncate: bool,
) -> Result<DMatrix<f64>, SampleError> {
    let d = (n + p) * (t + 1);
    if intervals.len() != d {
        return Err(SampleError::DimensionMismatch(format!(
            "support dimension {} vs window width {}",
            intervals.len(),
            d
        )));
    }
    let mut data = DMatrix::zeros(count, d);
    for i in 0..count {
        for j in 0..d {
            let (lo, hi) = intervals[j];
            let v = if truncate {
                let mut accepted = None;
                for _ in 0..REJECTION_CAP {
                    let v = draw(rng);
                    if v >= lo && v <= hi {
                        accepted = Some(v);
                        break;
                    }
                }
                accepted.ok_or(SampleError::RejectionStall)?
            } else {
                draw(rng)
            };
            data[(i, j)] = v;
        }
    }
    Ok(data)
}

/// Draws `count` windows with i.i.d. coordinates from the truncated bimodal
/// mixture; `mode_split` is the mass of the mode at zero.
pub fn generate_bimodal<R: Rng>(
    count: usize,
    support: &Polytope,
    mode_split: f64,
    n: usize,
    p: usize,
    t: usize,
    rng: &mut R,
) -> Result<SampleSet, SampleError> {
    generate_bimodal_with(count, support, &BimodalParams::with_split(mode_split), n, p, t, rng)
}

/// Bimodal generator with explicit mixture parameters.
pub fn generate_bimodal_with<R: Rng>(
    count: usize,
    support: &Polytope,
    params: &BimodalParams,
    n: usize,
    p: usize,
    t: usize,
    rng: &mut R,
) -> Result<SampleSet, SampleError> {
    if count == 0 {
        return Err(SampleError::InvalidCount);
    }
    if !(0.0..=1.0).contains(&params.split) {
        return Err(SampleError::InvalidShape(format!(
            "mode split must lie in [0, 1], got {}",
            params.split
        )));
    }
    if !(params.sigma > 0.0) {
        return Err(SampleError::InvalidShape(format!(
            "component deviation must be positive, got {}",
            params.sigma
        )));
    }
    let intervals = bounded_box_intervals(support)?;
    let low = Normal::new(params.mode_low, params.sigma).expect("finite parameters");
    let high = Normal::new(params.mode_high, params.sigma).expect("finite parameters");
    let split = params.split;
    let data = generate_coordinates(
        count,
        &intervals,
        n,
        p,
        t,
        rng,
        |rng| {
            if rng.random_bool(split) {
                low.sample(rng)
            } else {
                high.sample(rng)
            }
        },
        true,
    )?;
    SampleSet::new(data, n, p, t, support)
}

/// Draws `count` windows with i.i.d. coordinates Beta(alpha, beta) rescaled
/// from [0, 1] onto each support interval.
pub fn generate_beta<R: Rng>(
    count: usize,
    support: &Polytope,
    alpha: f64,
    beta: f64,
    n: usize,
    p: usize,
    t: usize,
    rng: &mut R,
) -> Result<SampleSet, SampleError> {
    if count == 0 {
        return Err(SampleError::InvalidCount);
    }
    let dist = Beta::new(alpha, beta)
        .map_err(|e| SampleError::InvalidShape(format!("beta({alpha}, {beta}): {e}")))?;
    let intervals = bounded_box_intervals(support)?;
    let d = (n + p) * (t + 1);
    if intervals.len() != d {
        return Err(SampleError::DimensionMismatch(format!(
            "support dimension {} vs window width {}",
            intervals.len(),
            d
        )));
    }
    let mut data = DMatrix::zeros(count, d);
    for i in 0..count {
        for j in 0..d {
            let (lo, hi) = intervals[j];
            data[(i, j)] = lo + (hi - lo) * dist.sample(rng);
        }
    }
    SampleSet::new(data, n, p, t, support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn unit_box(d: usize) -> Polytope {
        Polytope::uniform_box(-1.0, 1.0, d).unwrap()
    }

    fn dist(atoms: &[&[f64]], weights: &[f64]) -> EmpiricalDistribution {
        let d = atoms[0].len();
        let flat: Vec<f64> = atoms.iter().flat_map(|r| r.iter().copied()).collect();
        EmpiricalDistribution::new(
            DMatrix::from_row_slice(atoms.len(), d, &flat),
            DVector::from_column_slice(weights),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_preserves_samples() {
        let support = Polytope::uniform_box(-0.2, 1.0, 30).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let set = generate_bimodal(100, &support, 0.5, 2, 1, 9, &mut rng).unwrap();
        assert_eq!((set.len(), set.width()), (100, 30));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        save_samples(&set, &path).unwrap();
        let loaded = load_samples(&path, 2, 1, 9, &support).unwrap();
        assert_eq!(loaded, set);
        assert!(path.with_extension("csv.meta.json").exists());
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        let r = load_samples(&path, 2, 1, 9, &Polytope::uniform_box(-0.2, 1.0, 30).unwrap());
        assert!(matches!(r, Err(SampleError::Parse { .. })));
    }

    #[test]
    fn short_row_is_a_width_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.csv");
        let row: Vec<String> = vec!["0.1".into(); 29];
        std::fs::write(&path, row.join(",")).unwrap();
        let r = load_samples(&path, 2, 1, 9, &Polytope::uniform_box(-0.2, 1.0, 30).unwrap());
        assert!(matches!(
            r,
            Err(SampleError::WidthMismatch { row: 0, got: 29, expected: 30 })
        ));
    }

    #[test]
    fn out_of_support_row_is_rejected_not_clipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("outside.csv");
        let good: Vec<String> = vec!["0.1".into(); 4];
        let bad: Vec<String> = vec!["0.1".into(), "2.0".into(), "0.1".into(), "0.1".into()];
        std::fs::write(&path, format!("{}\n{}", good.join(","), bad.join(","))).unwrap();
        let r = load_samples(&path, 1, 1, 1, &unit_box(4));
        assert!(matches!(r, Err(SampleError::SupportViolation { row: 1, .. })));
    }

    #[test]
    fn center_weights_are_uniform() {
        let support = unit_box(4);
        let data = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.1, 0.2, 0.3, 0.4, //
                0.1, 0.2, 0.3, 0.4, //
                -0.5, 0.0, 0.5, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        let set = SampleSet::new(data, 1, 1, 1, &support).unwrap();
        let center = empirical_center(&set);
        assert_eq!(center.m(), 4);
        assert!(center.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        // Duplicate rows stay distinct atoms.
        assert_eq!(center.atoms.row(0), center.atoms.row(1));

        let single = SampleSet::new(DMatrix::zeros(1, 4), 1, 1, 1, &support).unwrap();
        let center = empirical_center(&single);
        assert_eq!(center.m(), 1);
        assert!((center.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distance_to_self_is_zero() {
        let p = dist(&[&[0.3, -0.2], &[0.5, 0.5]], &[0.5, 0.5]);
        assert!(wasserstein2(&p, &p).unwrap().abs() < 1e-9);
    }

    #[test]
    fn dirac_pair_distance_is_euclidean() {
        let p = dist(&[&[0.0, 0.0]], &[1.0]);
        let q = dist(&[&[3.0, 4.0]], &[1.0]);
        assert!((wasserstein2(&p, &q).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn two_atom_matching_beats_the_crossed_pairing() {
        let p = dist(&[&[0.0], &[2.0]], &[0.5, 0.5]);
        let q = dist(&[&[1.0], &[3.0]], &[0.5, 0.5]);
        let w = wasserstein2(&p, &q).unwrap();
        assert!((w - 1.0).abs() < 1e-12, "squared cost should be 1, got W = {w}");
    }

    #[test]
    fn uniform_translation_moves_distance_by_shift_norm() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let atoms: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = DMatrix::from_row_slice(4, 3, &atoms);
        let shift = DVector::from_vec(vec![0.3, -0.1, 0.25]);
        let mut moved = base.clone();
        for i in 0..4 {
            for j in 0..3 {
                moved[(i, j)] += shift[j];
            }
        }
        let w = DVector::from_element(4, 0.25);
        let p = EmpiricalDistribution::new(base, w.clone()).unwrap();
        let q = EmpiricalDistribution::new(moved, w).unwrap();
        let d = wasserstein2(&p, &q).unwrap();
        assert!((d - shift.norm()).abs() < 1e-9, "{d} vs {}", shift.norm());
    }

    #[test]
    fn metric_symmetry_and_triangle_inequality() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..10 {
            let mut make = |m: usize| {
                let atoms: Vec<f64> = (0..m * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                // Renormalize exactly against accumulated rounding.
                let total: f64 = weights.iter().sum();
                weights[0] += 1.0 - total;
                EmpiricalDistribution::new(
                    DMatrix::from_row_slice(m, 2, &atoms),
                    DVector::from_vec(weights),
                )
                .unwrap()
            };
            let (p, q, r) = (make(3), make(4), make(2));
            let pq = wasserstein2(&p, &q).unwrap();
            let qp = wasserstein2(&q, &p).unwrap();
            assert!((pq - qp).abs() < 1e-7);
            let pr = wasserstein2(&p, &r).unwrap();
            let qr = wasserstein2(&q, &r).unwrap();
            assert!(pr <= pq + qr + 1e-7, "triangle violated: {pr} > {pq} + {qr}");
        }
    }

    #[test]
    fn degenerate_mixture_concentrates_at_its_mode() {
        let support = Polytope::uniform_box(-0.2, 1.0, 6).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let at_zero = generate_bimodal(50, &support, 1.0, 1, 1, 2, &mut rng).unwrap();
        let at_high = generate_bimodal(50, &support, 0.0, 1, 1, 2, &mut rng).unwrap();
        let mean = |s: &SampleSet| s.data.iter().sum::<f64>() / (s.len() * s.width()) as f64;
        assert!(mean(&at_zero) < 0.2, "low mode mean {}", mean(&at_zero));
        assert!(mean(&at_high) > 0.6, "high mode mean {}", mean(&at_high));
    }

    #[test]
    fn balanced_mixture_mean_matches_the_moment_oracle() {
        // Truncation at [-0.2, 1.0] trims both modes symmetrically, keeping
        // the even-split mixture mean at 0.4.
        let support = Polytope::uniform_box(-0.2, 1.0, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let set = generate_bimodal(2500, &support, 0.5, 1, 1, 1, &mut rng).unwrap();
        let mean = set.data.iter().sum::<f64>() / (set.len() * set.width()) as f64;
        assert!((mean - 0.4).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn generator_outputs_stay_in_support() {
        let support = Polytope::uniform_box(-0.2, 1.0, 6).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let bimodal = generate_bimodal(200, &support, 0.5, 1, 1, 2, &mut rng).unwrap();
        let beta = generate_beta(200, &support, 0.5, 0.5, 1, 1, 2, &mut rng).unwrap();
        for set in [bimodal, beta] {
            for i in 0..set.len() {
                assert!(support.contains(&set.row(i), 0.0));
            }
        }
    }

    #[test]
    fn generator_input_validation() {
        let support = Polytope::uniform_box(-0.2, 1.0, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(
            generate_bimodal(0, &support, 0.5, 1, 1, 1, &mut rng),
            Err(SampleError::InvalidCount)
        ));
        assert!(matches!(
            generate_beta(10, &support, -1.0, 0.5, 1, 1, 1, &mut rng),
            Err(SampleError::InvalidShape(_))
        ));
        // A raw empty-interval box is caught before any drawing.
        let broken = Polytope {
            h_mat: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            h_vec: DVector::from_vec(vec![0.2, -0.5]), // encodes [0.5, 0.2]
        };
        let r = generate_beta(10, &broken, 0.5, 0.5, 1, 0, 0, &mut rng);
        assert!(matches!(r, Err(SampleError::InvalidShape(_))));
        let tri = Polytope::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            generate_bimodal(10, &tri, 0.5, 1, 0, 1, &mut rng),
            Err(SampleError::InvalidShape(_))
        ));
    }

    #[test]
    fn rejection_stalls_on_an_unreachable_box() {
        // Acceptance probability of N(0, 0.15) landing in [0.9999, 1.0] is
        // far below the stall threshold.
        let support = Polytope::uniform_box(0.9999, 1.0, 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let r = generate_bimodal(1, &support, 1.0, 1, 1, 0, &mut rng);
        assert!(matches!(r, Err(SampleError::RejectionStall)));
    }

    #[test]
    fn beta_half_half_mean_is_midpoint() {
        let support = Polytope::uniform_box(-0.2, 1.0, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let set = generate_beta(2500, &support, 0.5, 0.5, 1, 1, 1, &mut rng).unwrap();
        let mean = set.data.iter().sum::<f64>() / (set.len() * set.width()) as f64;
        assert!((mean - 0.4).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let support = Polytope::uniform_box(-0.2, 1.0, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(27);
        let set = generate_beta(2500, &support, 1.0, 1.0, 1, 1, 1, &mut rng).unwrap();
        let mut coords: Vec<f64> = set.data.iter().copied().collect();
        coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = coords.len() as f64;
        let mut ks = 0.0f64;
        for (i, &v) in coords.iter().enumerate() {
            let cdf = (v + 0.2) / 1.2;
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            ks = ks.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        assert!(ks < 1.95 / n.sqrt(), "Kolmogorov-Smirnov statistic {ks}");
    }

    #[test]
    fn distribution_file_round_trip() {
        let p = dist(&[&[0.25, -0.125], &[1.0 / 3.0, 0.5]], &[0.375, 0.625]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.json");
        save_distribution(&p, &path).unwrap();
        let loaded = load_distribution(&path).unwrap();
        assert_eq!(loaded, p);
    }

    #[test]
    fn ambiguity_set_validation() {
        let center = dist(&[&[0.0, 0.0]], &[1.0]);
        let support = unit_box(2);
        assert!(AmbiguitySet::new(center.clone(), 0.0, support.clone()).is_err());
        assert!(AmbiguitySet::new(center.clone(), 0.1, support).is_ok());
        let outside = dist(&[&[3.0, 0.0]], &[1.0]);
        let r = AmbiguitySet::new(outside, 0.1, unit_box(2));
        assert!(matches!(r, Err(SampleError::SupportViolation { .. })));
    }

    #[test]
    fn weight_validation() {
        let atoms = DMatrix::zeros(2, 1);
        let r = EmpiricalDistribution::new(atoms.clone(), DVector::from_vec(vec![0.6, 0.3]));
        assert!(matches!(r, Err(SampleError::WeightSum(_))));
        let r = EmpiricalDistribution::new(atoms, DVector::from_vec(vec![1.2, -0.2]));
        assert!(matches!(r, Err(SampleError::NegativeWeight(1))));
    }
}
