use curriculum_core::models::{build_instance, BudgetedSampler, ProblemInstance};
use curriculum_core::oracles::{
    oracle_report, oracle_risk, run_weak_oracle, select_t_bar, strong_bound, strong_oracle_index, strong_oracle_set,
    weak_oracle_set,
};
use curriculum_core::Error;
use proptest::prelude::*;
use rayon::prelude::*;

/// Target at the origin, sources on the first axis at distance `q_t`.
fn line(q: &[f64], sigma2: &[f64], n: usize, d: usize) -> ProblemInstance {
    let thetas = std::iter::once(0.0)
        .chain(q.iter().copied())
        .map(|x| {
            let mut v = vec![0.0; d];
            v[0] = x;
            v
        })
        .collect();
    build_instance(thetas, sigma2.to_vec(), None, n, 1e3).unwrap()
}

#[test]
fn strong_oracle_prefers_clean_source() {
    let inst = line(&[0.0], &[10.0, 1.0], 100, 2);
    assert!((oracle_risk(&inst, 0) - 0.2).abs() < 1e-15);
    assert!((oracle_risk(&inst, 1) - 0.02).abs() < 1e-15);
    assert_eq!(strong_oracle_index(&inst), 1);
}

#[test]
fn far_sources_leave_the_target() {
    let inst = line(&[100.0, 200.0], &[10.0, 1.0, 1.0], 100, 2);
    assert_eq!(strong_oracle_index(&inst), 0);
}

#[test]
fn strong_set_extremes() {
    let inst = line(&[0.0, 0.3, 1.0], &[10.0, 1.0, 1.0, 2.0], 100, 2);
    assert_eq!(strong_oracle_set(&inst, 1.0).unwrap(), vec![1]);
    assert_eq!(strong_oracle_set(&inst, 1e12).unwrap(), vec![0, 1, 2, 3]);
    assert!(matches!(strong_oracle_set(&inst, 0.5), Err(Error::KappaBelowOne(_))));
}

#[test]
fn weak_set_threshold() {
    // Threshold κdσ₀²/N = 0.02.
    let inst = line(&[0.1, 0.05f64.sqrt()], &[10.0, 1.0, 1.0], 1000, 2);
    assert!((inst.q2(1) - 0.01).abs() < 1e-15);
    assert_eq!(weak_oracle_set(&inst, 1.0), vec![1]);
    let zeros = line(&[0.0, 0.0, 0.0], &[10.0, 1.0, 1.0, 1.0], 1000, 2);
    assert_eq!(weak_oracle_set(&zeros, 1.0), vec![1, 2, 3]);
}

#[test]
fn t_bar_rules() {
    let inst = line(&[0.1f64.sqrt(), 0.2f64.sqrt()], &[10.0, 1.0, 1.0], 10, 1);
    assert_eq!(select_t_bar(&inst, &[]), 0);
    assert_eq!(select_t_bar(&inst, &[1, 2]), 2);
    let inst = line(&[0.1f64.sqrt(), 0.2f64.sqrt()], &[10.0, 0.5, 1.0], 10, 1);
    assert_eq!(select_t_bar(&inst, &[1, 2]), 1);
    assert_eq!(select_t_bar(&inst, &[2, 1]), 1);
}

#[test]
fn weak_oracle_without_candidates_uses_target() {
    let inst = line(&[50.0], &[1.0, 0.5], 100, 1);
    let mut s = BudgetedSampler::new(&inst, 1);
    let (_, report) = run_weak_oracle(&inst, &mut s, 1.0).unwrap();
    assert_eq!(report.weak_choice, 0);
    assert_eq!(s.drawn_per_task(), &[100, 0]);
}

#[test]
fn weak_oracle_noiseless_source_is_exact() {
    let inst = line(&[0.0], &[1.0, 0.0], 100, 2);
    let mut s = BudgetedSampler::new(&inst, 1);
    let (est, report) = run_weak_oracle(&inst, &mut s, 1.0).unwrap();
    assert_eq!(report.weak_choice, 1);
    assert_eq!(est, vec![0.0, 0.0]);
}

#[test]
fn weak_oracle_loss_rate() {
    let inst = line(&[0.0], &[1.0, 0.1], 10_000, 2);
    let loss: f64 = (0..200u64)
        .into_par_iter()
        .map(|r| {
            let mut s = BudgetedSampler::new(&inst, r);
            let (est, _) = run_weak_oracle(&inst, &mut s, 1.0).unwrap();
            est.iter().map(|x| x * x).sum::<f64>()
        })
        .sum::<f64>()
        / 200.0;
    assert!((loss / 2e-5 - 1.0).abs() < 0.15, "{loss}");
}

#[test]
fn report_serializes_with_spec_names() {
    let inst = line(&[0.0, 3.0], &[10.0, 1.0, 2.0], 100, 2);
    let v = serde_json::to_value(oracle_report(&inst, 2.0).unwrap()).unwrap();
    for key in ["t_star", "strong_set", "weak_set", "strong_bound", "weak_choice", "kappa"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

fn arb_instance() -> impl Strategy<Value = ProblemInstance> {
    (1usize..4, 1usize..8, 10usize..5000).prop_flat_map(|(d, t, n)| {
        (prop::collection::vec(0.0..0.5f64, t), prop::collection::vec(0.01..0.99f64, t), Just(n), Just(d)).prop_map(
            |(q, r, n, d)| {
                let s: Vec<f64> = std::iter::once(1.0).chain(r).collect();
                line(&q, &s, n, d)
            },
        )
    })
}

proptest! {
    #[test]
    fn strong_index_is_brute_force_argmin(inst in arb_instance()) {
        let risks: Vec<f64> = (0..=inst.num_sources()).map(|t| oracle_risk(&inst, t)).collect();
        let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
        let first = risks.iter().position(|&r| r == min).unwrap();
        prop_assert_eq!(strong_oracle_index(&inst), first);
        prop_assert_eq!(strong_bound(&inst), min);
    }

    #[test]
    fn sets_match_brute_force_filters(inst in arb_instance(), kappa in 1.0..5.0f64) {
        let d = inst.dim() as f64;
        let n = inst.n_budget() as f64;
        let best = strong_bound(&inst);
        let strong: Vec<usize> = (0..=inst.num_sources()).filter(|&t| oracle_risk(&inst, t) <= kappa * best).collect();
        let weak: Vec<usize> = (1..=inst.num_sources()).filter(|&t| inst.q2(t) <= kappa * d * inst.sigma2(0) / n).collect();
        prop_assert_eq!(strong_oracle_set(&inst, kappa).unwrap(), strong);
        prop_assert_eq!(weak_oracle_set(&inst, kappa), weak);
    }

    #[test]
    fn sets_nest(inst in arb_instance(), a in 1.0..5.0f64, b in 1.0..5.0f64) {
        let (k1, k2) = (a.min(b), a.max(b));
        let w1 = weak_oracle_set(&inst, k1);
        let w2 = weak_oracle_set(&inst, k2);
        prop_assert!(w1.iter().all(|t| w2.contains(t)));
        let s1 = strong_oracle_set(&inst, k1).unwrap();
        let s2 = strong_oracle_set(&inst, k2).unwrap();
        prop_assert!(s1.iter().all(|t| s2.contains(t)));
    }

    #[test]
    fn report_invariants(inst in arb_instance(), kappa in 1.0..5.0f64) {
        let r = oracle_report(&inst, kappa).unwrap();
        prop_assert!(r.strong_set.contains(&r.t_star));
        prop_assert_eq!(r.weak_choice == 0, r.weak_set.is_empty());
        prop_assert!(r.weak_choice == 0 || r.weak_set.contains(&r.weak_choice));
    }

    #[test]
    fn weak_oracle_spends_budget_on_one_task(inst in arb_instance(), seed in any::<u64>()) {
        let mut s = BudgetedSampler::new(&inst, seed);
        let (_, r) = run_weak_oracle(&inst, &mut s, 1.0).unwrap();
        prop_assert_eq!(s.drawn_total(), inst.n_budget());
        prop_assert_eq!(s.drawn_per_task()[r.weak_choice], inst.n_budget());
    }
}
