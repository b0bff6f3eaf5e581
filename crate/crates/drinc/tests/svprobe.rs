use std::time::Instant;

use drinc::model::{validate_system, CostSpec, Polytope, SafetySpec};
use drinc::samples::generate_bimodal;
use drinc::synthesis::{synthesize_drinc, SynthesisSpec};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn flagship_spec(n_samples: usize, epsilon: f64) -> SynthesisSpec {
    let model = validate_system(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let t = 9;
    let d = 30;
    let support = Polytope::uniform_box(-0.2, 1.0, d).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let samples = generate_bimodal(n_samples, &support, 0.5, 2, 1, t, &mut rng).unwrap();
    let cost = CostSpec::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[
        1.0, 4.0, 1.0,
    ])))
    .unwrap();
    let safety = if std::env::var("PROBE_NOSAFE").is_ok() {
        SafetySpec::unconstrained(0.1, 2, 1).unwrap()
    } else {
        SafetySpec::new(
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            DVector::from_column_slice(&[6.4, 6.4, 64.0, 64.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            0.1,
            2,
            1,
        )
        .unwrap()
    };
    SynthesisSpec::new(model, cost, safety, support, epsilon, t, samples).unwrap()
}

#[test]
#[ignore]
fn probe_flagship_solve_time() {
    use drinc::conic::SolveOptions;
    use drinc::synthesis::{synthesis_opts, synthesize_drinc_with};
    let verbose = std::env::var("PROBE_VERBOSE").is_ok();
    let ns: Vec<usize> = std::env::var("PROBE_N")
        .unwrap_or_else(|_| "10".into())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    for n in ns {
        let spec = flagship_spec(n, 0.1);
        let opts = SolveOptions { verbose, ..synthesis_opts() };
        let start = Instant::now();
        let out = synthesize_drinc_with(&spec, &opts);
        let elapsed = start.elapsed().as_secs_f64();
        match out {
            Ok(result) => println!(
                "N={n}: OK in {elapsed:.1}s, objective {:.4}, tight {}, iters {}, note {}",
                result.objective, result.tight, result.stats.iterations, result.stats.note
            ),
            Err(e) => println!("N={n}: ERR in {elapsed:.1}s: {e}"),
        }
    }
}
