use curriculum_core::estimators::{
    calibrate_g, empirical_mean, g_of_delta, squared_error, trace_hat, variance_hat, GFunction, DEFAULT_DELTA_GRID,
};
use curriculum_core::models::{build_instance, BudgetedSampler, ProblemInstance, SampleBatch, TaskParams};
use curriculum_core::Error;
use proptest::prelude::*;
use rayon::prelude::*;

fn single(theta: Vec<f64>, sigma2: f64, n: usize) -> ProblemInstance {
    ProblemInstance::new(vec![TaskParams::isotropic(theta, sigma2)], n, 10.0).unwrap()
}

/// Mean over `reps` of `‖θ̄(K) − θ‖²`.
fn mean_sq_error(theta: &[f64], sigma2: f64, k: usize, reps: u64, seed: u64) -> f64 {
    let inst = single(theta.to_vec(), sigma2, k);
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut s = BudgetedSampler::new(&inst, seed + r);
            squared_error(&empirical_mean(&s.draw(0, k).unwrap()).unwrap(), theta).unwrap()
        })
        .sum::<f64>()
        / reps as f64
}

#[test]
fn mean_examples() {
    assert_eq!(empirical_mean(&SampleBatch::from_rows(&[vec![2.0, 4.0]]).unwrap()).unwrap(), vec![2.0, 4.0]);
    let b = SampleBatch::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
    assert_eq!(empirical_mean(&b).unwrap(), vec![1.0, 1.0]);
    assert!(matches!(empirical_mean(&SampleBatch::new(2, vec![]).unwrap()), Err(Error::EmptySample)));
}

#[test]
fn mean_rate_large_k() {
    // dσ²/K = 2·2/10⁵.
    let m = mean_sq_error(&[1.0, -1.0], 2.0, 100_000, 200, 11);
    assert!((m / 4e-5 - 1.0).abs() < 0.1, "{m}");
}

#[test]
fn mean_error_quarters_when_k_quadruples() {
    let a = mean_sq_error(&[0.0, 0.0], 1.0, 100, 10_000, 1);
    let b = mean_sq_error(&[0.0, 0.0], 1.0, 400, 10_000, 2);
    assert!((a / b / 4.0 - 1.0).abs() < 0.15, "{a} {b}");
}

#[test]
fn g_examples() {
    let g = GFunction::new(2.0).unwrap();
    assert!((g_of_delta(&g, (-2.0f64).exp()).unwrap() - 6.0).abs() < 1e-12);
    assert!((g_of_delta(&g, 1.0 - 1e-12).unwrap() - 2.0).abs() < 1e-9);
    assert!(matches!(g_of_delta(&g, 1.0), Err(Error::DeltaOutOfRange(_))));
    assert!(matches!(g_of_delta(&g, 0.0), Err(Error::DeltaOutOfRange(_))));
    assert!(GFunction::new(1.0).is_err());
    assert_eq!(GFunction::default().c_const(), 4.0);
}

#[test]
fn variance_examples() {
    let same = SampleBatch::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
    assert_eq!(variance_hat(&same).unwrap(), 0.0);
    assert_eq!(trace_hat(&same).unwrap(), 0.0);
    let b = SampleBatch::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
    assert_eq!(variance_hat(&b).unwrap(), 2.0);
    let one = SampleBatch::from_rows(&[vec![0.0]]).unwrap();
    assert!(matches!(variance_hat(&one), Err(Error::TooFewSamples { needed: 2, got: 1 })));
}

#[test]
fn squared_error_examples() {
    assert_eq!(squared_error(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
    assert_eq!(squared_error(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
    assert!(matches!(squared_error(&[0.0], &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn variance_hat_unbiased() {
    let inst = single(vec![0.0, 0.0], 1.5, 20);
    let est: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|r| variance_hat(&BudgetedSampler::new(&inst, r).draw(0, 20).unwrap()).unwrap())
        .collect();
    let n = est.len() as f64;
    let m = est.iter().sum::<f64>() / n;
    let sd = (est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((m - 1.5).abs() <= 3.0 * sd / n.sqrt(), "{m} ± {}", sd / n.sqrt());
}

#[test]
fn trace_hat_anisotropic() {
    // Σ = diag(2, 0): ς² = 1.
    let inst =
        build_instance(vec![vec![0.0, 0.0]], vec![1.0], Some(vec![vec![2.0, 0.0, 0.0, 0.0]]), 10_000, 1.0).unwrap();
    let est = trace_hat(&BudgetedSampler::new(&inst, 8).draw(0, 10_000).unwrap()).unwrap();
    assert!((est - 1.0).abs() < 0.1, "{est}");
}

#[test]
fn trace_hat_coverage_isotropic() {
    let (d, k, reps) = (3usize, 300usize, 1000u64);
    let inst = single(vec![0.0; d], 0.7, k);
    let hits = (0..reps)
        .into_par_iter()
        .filter(|&r| {
            let e = trace_hat(&BudgetedSampler::new(&inst, r).draw(0, k).unwrap()).unwrap();
            (0.35..=1.05).contains(&e)
        })
        .count();
    let floor = 1.0 - 2.0 * (-((k - 1) as f64 / 24.0 - (d as f64).ln())).exp();
    assert!(hits as f64 / reps as f64 >= floor, "{hits} < {floor}");
}

#[test]
fn calibration_zero_noise_floor() {
    let g = calibrate_g(2, 0.0, 10, &DEFAULT_DELTA_GRID, 1000, 0).unwrap();
    assert_eq!(g.c_const(), 1.01);
    assert!(calibrate_g(2, 1.0, 10, &DEFAULT_DELTA_GRID, 999, 0).is_err());
}

#[test]
fn calibrated_g_covers_on_fresh_seed() {
    let (d, k) = (2usize, 100usize);
    let g = calibrate_g(d, 1.0, k, &[0.05], 10_000, 123).unwrap();
    assert!(g.c_const() > 1.0);
    let radius = g.eval(0.05).unwrap() * d as f64 / k as f64;
    let inst = single(vec![0.0; d], 1.0, k);
    let covered = (0..10_000u64)
        .into_par_iter()
        .filter(|&r| {
            let mut s = BudgetedSampler::new(&inst, 1_000_000 + r);
            let m = empirical_mean(&s.draw(0, k).unwrap()).unwrap();
            m.iter().map(|x| x * x).sum::<f64>() <= radius
        })
        .count();
    assert!(covered as f64 / 1e4 >= 0.95, "{covered}");
}

#[test]
fn calibration_nonincreasing_in_k() {
    // The spec setting: both sizes sit at the floor.
    let small = calibrate_g(2, 1.0, 100, &DEFAULT_DELTA_GRID, 10_000, 5).unwrap();
    let large = calibrate_g(2, 1.0, 10_000, &DEFAULT_DELTA_GRID, 10_000, 5).unwrap();
    assert!(large.c_const() <= small.c_const());
}

#[test]
fn calibration_above_floor_agrees_across_k() {
    // For Gaussian noise K‖θ̄ − θ‖²/(dσ²) is χ²_d/d whatever K is, so a larger
    // K can only differ by Monte-Carlo error. With 10⁴ reps the 99% quantile
    // of χ²₁ has a relative standard error near 2.6%; allow four of them on
    // the difference.
    let small = calibrate_g(1, 1.0, 100, &DEFAULT_DELTA_GRID, 10_000, 5).unwrap();
    let large = calibrate_g(1, 1.0, 10_000, &DEFAULT_DELTA_GRID, 10_000, 5).unwrap();
    assert!(small.c_const() > 1.01);
    assert!(large.c_const() <= small.c_const() * 1.15, "{} vs {}", large.c_const(), small.c_const());
}

proptest! {
    #[test]
    fn g_decreasing(c in 1.01..10.0f64, a in 1e-6..0.999f64, b in 1e-6..0.999f64) {
        prop_assume!(a < b);
        let g = GFunction::new(c).unwrap();
        prop_assert!(g.eval(a).unwrap() > g.eval(b).unwrap());
        prop_assert!(g.eval(b).unwrap() > 0.0);
    }

    #[test]
    fn variance_shift_invariant(
        rows in prop::collection::vec(prop::collection::vec(-4i32..4, 3), 2..20),
        shift in prop::collection::vec(-8i32..8, 3),
    ) {
        // Dyadic values make the shifted differences exact, so equality is bitwise.
        let to_f = |r: &Vec<i32>| r.iter().map(|&x| x as f64 * 0.25).collect::<Vec<f64>>();
        let base: Vec<Vec<f64>> = rows.iter().map(to_f).collect();
        let moved: Vec<Vec<f64>> = base
            .iter()
            .map(|r| r.iter().zip(&shift).map(|(x, s)| x + *s as f64).collect())
            .collect();
        let a = variance_hat(&SampleBatch::from_rows(&base).unwrap()).unwrap();
        let b = variance_hat(&SampleBatch::from_rows(&moved).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn squared_error_matches_coordinate_sum(
        a in prop::collection::vec(-1e3..1e3f64, 1..8),
        b in prop::collection::vec(-1e3..1e3f64, 1..8),
    ) {
        let n = a.len().min(b.len());
        let direct: f64 = (0..n).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum();
        prop_assert_eq!(squared_error(&a[..n], &b[..n]).unwrap(), direct);
    }
}
