use curriculum_core::lower_bounds::{
    build_packing, build_packing_with_stall, build_testing_set, kl_gaussian, packing_cardinality, packing_separation,
    theorem3_value, theorem4_value, two_point_t1, two_point_t2, BoundRegime, BoundReport,
};
use curriculum_core::models::build_instance;
use curriculum_core::oracles::weak_benchmark;
use curriculum_core::Error;
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Bivariate normal density from an explicit 2×2 inverse.
fn pdf2(x: [f64; 2], mu: [f64; 2], c: [f64; 4]) -> f64 {
    let det = c[0] * c[3] - c[1] * c[2];
    let (a, b) = (x[0] - mu[0], x[1] - mu[1]);
    let q = (c[3] * a * a - (c[1] + c[2]) * a * b + c[0] * b * b) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

#[test]
fn kl_examples() {
    let id = [1.0, 0.0, 0.0, 1.0];
    assert_eq!(kl_gaussian(&[1.0, 2.0], &id, &[1.0, 2.0], &id).unwrap(), 0.0);
    let kl = kl_gaussian(&[0.0], &[2.0], &[3.0], &[2.0]).unwrap();
    assert!((kl - 9.0 / 4.0).abs() < 1e-12);
    assert!(matches!(
        kl_gaussian(&[0.0, 0.0], &[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &id),
        Err(Error::SingularCovariance)
    ));
}

#[test]
fn kl_matches_quadrature() {
    let (m1, c1) = ([0.3, -0.2], [1.0, 0.3, 0.3, 0.8]);
    let (m2, c2) = ([-0.1, 0.4], [1.5, -0.2, -0.2, 1.2]);
    let h = 0.01;
    let mut sum = 0.0;
    for i in 0..1600 {
        for j in 0..1600 {
            let x = [-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h];
            let p = pdf2(x, m1, c1);
            if p > 0.0 {
                sum += p * (p / pdf2(x, m2, c2)).ln() * h * h;
            }
        }
    }
    let kl = kl_gaussian(&m1, &c1, &m2, &c2).unwrap();
    assert!((kl - sum).abs() < 1e-3, "{kl} vs {sum}");
}

#[test]
fn t1_without_offset() {
    // q₁ = 0: V = σ₁/(4√N) = 0.025.
    let tp = two_point_t1(0.0, 4.0, 1.0, 100).unwrap();
    assert_eq!(tp.hypothesis0[0], -0.025);
    assert!(tp.in_regime);
    assert!(tp.lecam_value >= 0.8 * 0.025f64.powi(2));
    let flat = two_point_t1(0.0, 4.0, 0.0, 100).unwrap();
    assert_eq!(flat.lecam_value, 0.0);
}

#[test]
fn t1_regime_boundary() {
    // σ₀²/(4N) = 0.01 so V = 0.1 sits on the boundary.
    let tp = two_point_t1(0.075, 4.0, 1.0, 100).unwrap();
    assert!(tp.in_regime);
    assert!((tp.kl_total - 0.625).abs() < 1e-12);
    assert!(tp.lecam_value >= 4.0 / (5.0 * 100.0));
    assert!(!two_point_t1(0.08, 4.0, 1.0, 100).unwrap().in_regime);
}

#[test]
fn t2_degenerate_and_symmetric() {
    let tp = two_point_t2(0.0, 0.0, 4.0, 1.0, 0.0, 100).unwrap();
    assert_eq!(tp.lecam_value, 0.0);
    let tp = two_point_t2(0.01, 0.03, 4.0, 1.0, 0.5, 100).unwrap();
    let (h0, h1) = (&tp.hypothesis0, &tp.hypothesis1);
    assert_eq!(h1[0], -h0[0]);
    assert_eq!(h1[1], -h0[2]);
    assert_eq!(h1[2], -h0[1]);
}

#[test]
fn t2_ordering_errors() {
    assert!(matches!(two_point_t2(0.1, 0.0, 4.0, 1.0, 0.5, 10), Err(Error::OrderingViolation(_))));
    assert!(matches!(two_point_t2(0.0, 0.1, 4.0, 0.5, 1.0, 10), Err(Error::OrderingViolation(_))));
}

#[test]
fn theorem3_all_zero_distances() {
    let v = theorem3_value(&[0.0; 4], &[2.0, 1.5, 1.0, 0.5], 100, 2).unwrap();
    assert!((v.value - 0.5 / 72_000.0).abs() < 1e-18);
    assert_eq!(v.t_wo, 3);
    assert_eq!(v.t_med, 2);
    assert!(v.ambiguous);
}

#[test]
fn theorem3_ordering_errors() {
    assert!(theorem3_value(&[0.0, 2.0, 1.0], &[2.0, 1.0, 0.5], 10, 1).is_err());
    assert!(theorem3_value(&[0.0, 1.0, 2.0], &[2.0, 0.5, 1.0], 10, 1).is_err());
}

#[test]
fn packing_examples() {
    assert_eq!(packing_separation(3).unwrap(), (-5.0f64).exp());
    assert!(matches!(build_packing(2, 5, 0), Err(Error::DimensionTooSmall(2))));
    let target = packing_cardinality(3).ceil() as usize;
    assert_eq!(target, 81);
    let p = build_packing(3, target, 7).unwrap();
    assert_eq!(p.points.len(), target);
}

#[test]
fn testing_set_with_zero_distances() {
    let p = build_packing(4, 10, 1).unwrap();
    let ts = build_testing_set(&p, &[0.0; 3], &[2.0, 1.0, 0.5], 100).unwrap();
    assert_eq!(ts.t_wo, 2);
    assert!((ts.radius - (4.0 * 0.5 / 100.0f64).sqrt()).abs() < 1e-15);
    for (h, v) in ts.hypotheses.iter().zip(&p.points) {
        for point in h {
            let scaled: Vec<f64> = v.iter().map(|x| ts.radius * x).collect();
            assert_eq!(point, &scaled);
        }
    }
}

#[test]
fn testing_set_identities() {
    let (n, d) = (1000usize, 5usize);
    let p = build_packing(d, 30, 3).unwrap();
    // Threshold dσ₀²/N = 0.01; sources 1, 2 are close, 3, 4 far.
    let q2s = [0.0, 0.001, 0.002, 0.05, 0.2];
    let s2s = [2.0, 1.5, 1.0, 0.5, 0.1];
    let ts = build_testing_set(&p, &q2s, &s2s, n).unwrap();
    assert_eq!(ts.t_wo, 2);
    let c = packing_separation(d).unwrap();
    for (j, h) in ts.hypotheses.iter().enumerate() {
        for (t, q2) in q2s.iter().enumerate() {
            assert!((dist(&h[0], &h[t]) - q2.sqrt()).abs() < 1e-9, "j={j} t={t}");
        }
        assert_eq!(h[3..], ts.hypotheses[0][3..]);
        for other in &ts.hypotheses[..j] {
            assert!(dist(&h[0], &other[0]) >= c * ts.radius - 1e-12);
        }
    }
}

#[test]
fn testing_set_regime_violation() {
    let p = build_packing(3, 5, 0).unwrap();
    let err = build_testing_set(&p, &[0.0, 0.001], &[1.0, 0.01], 1000).unwrap_err();
    assert!(matches!(err, Error::RegimeViolation(_)));
}

#[test]
fn theorem4_examples() {
    let c2 = (-10.0f64).exp();
    let (v, r) = theorem4_value(0.0, 1.0, 100, 3).unwrap();
    assert_eq!(r, BoundRegime::NoiseDominating);
    assert!((v - c2 / 2.0 * 0.03).abs() < 1e-20);
    // dσ²/N = q² = 0.25.
    let (_, r) = theorem4_value(0.5, 25.0, 300, 3).unwrap();
    assert_eq!(r, BoundRegime::NoiseDominating);
    let (v, r) = theorem4_value(1.0, 1.0, 100, 3).unwrap();
    assert_eq!(r, BoundRegime::DistanceDominating);
    assert!((v - c2 / 8.0).abs() < 1e-20);
    assert!(matches!(theorem4_value(0.0, 1.0, 10, 2), Err(Error::DimensionTooSmall(2))));
}

#[test]
fn bound_report_fields() {
    let inst = build_instance(
        vec![vec![0.0; 3], vec![0.01, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        vec![1.0, 0.5, 0.1],
        None,
        1000,
        10.0,
    )
    .unwrap();
    let r = BoundReport::for_instance(&inst);
    let v = serde_json::to_value(&r).unwrap();
    for key in ["strong_bound", "weak_bound", "theorem3", "theorem4", "regime"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(r.theorem4.unwrap() <= r.weak_bound);
    assert!(r.theorem3.unwrap() <= r.weak_bound);
}

fn sorted_inputs(t: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(0.0..0.05f64, t), prop::collection::vec(0.01..0.99f64, t)).prop_map(|(mut q, mut s)| {
        q.sort_by(f64::total_cmp);
        s.sort_by(|a, b| b.total_cmp(a));
        (std::iter::once(0.0).chain(q).collect(), std::iter::once(1.0).chain(s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn theorem3_below_weak_benchmark(
        (q2s, s2s) in (1usize..8).prop_flat_map(sorted_inputs),
        n in 10usize..2000,
        d in 1usize..5,
    ) {
        let thetas = q2s.iter().map(|q| {
            let mut v = vec![0.0; d];
            v[0] = q.sqrt();
            v
        }).collect();
        let inst = build_instance(thetas, s2s.clone(), None, n, 10.0).unwrap();
        let v = theorem3_value(&q2s, &s2s, n, d).unwrap();
        prop_assert!(v.value <= weak_benchmark(&inst, 1.0));
        prop_assert!(v.t_med <= v.t_wo);
    }

    #[test]
    fn theorem4_sandwich(frac in 0.0..=1.0f64, s in 0.0..4.0f64, n in 1usize..1000, d in 3usize..10) {
        let noise = d as f64 * s / n as f64;
        let q = (frac * noise).sqrt();
        let (v, r) = theorem4_value(q, s, n, d).unwrap();
        prop_assert_eq!(r, BoundRegime::NoiseDominating);
        prop_assert!(v <= noise + q * q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn t1_kl_closed_form(q in 0.0..0.5f64, s0 in 0.1..4.0f64, s1 in 0.01..4.0f64, n in 1usize..500) {
        let tp = two_point_t1(q, s0, s1, n).unwrap();
        let v = q + s1.sqrt() / (4.0 * (n as f64).sqrt());
        let closed = n as f64 * 2.0 * v * v / s0 + n as f64 * 2.0 * (s1 / (16.0 * n as f64)) / s1;
        prop_assert!((tp.kl_total - closed).abs() <= 1e-9 * closed.max(1.0));
        prop_assert!((tp.tv_bound - (tp.kl_total / 2.0).sqrt().min(1.0)).abs() < 1e-15);
        if tp.in_regime {
            prop_assert!(tp.kl_total <= 5.0 / 8.0 + 1e-12);
            prop_assert!(tp.lecam_value >= 0.8 * v * v - 1e-15);
        }
    }

    #[test]
    fn t2_kl_additive_and_feasible(
        a in 0.0..0.2f64,
        b in 0.0..0.2f64,
        s in prop::collection::vec(0.01..4.0f64, 3),
        n in 1usize..500,
    ) {
        let (q1, q2) = (a.min(b), a.max(b));
        let mut s = s;
        s.sort_by(|x, y| y.total_cmp(x));
        let tp = two_point_t2(q1, q2, s[0], s[1], s[2], n).unwrap();
        let per_model: f64 = (0..3)
            .map(|t| kl_gaussian(&[tp.hypothesis0[t]], &[s[t]], &[tp.hypothesis1[t]], &[s[t]]).unwrap())
            .sum::<f64>() * n as f64;
        prop_assert!((tp.kl_total - per_model).abs() <= 1e-9 * per_model.max(1.0));
        prop_assert!((tp.kl_total - tp.per_model_kl.iter().sum::<f64>()).abs() <= 1e-12 * tp.kl_total.max(1.0));
        let h0 = &tp.hypothesis0;
        let h1 = &tp.hypothesis1;
        prop_assert!(((h0[0] - h0[1]).abs() - q1).abs() < 1e-12);
        prop_assert!(((h0[0] - h0[2]).abs() - q2).abs() < 1e-12);
        // The alternative carries the same distances with the sources swapped.
        prop_assert!(((h1[0] - h1[1]).abs() - q2).abs() < 1e-12);
        prop_assert!(((h1[0] - h1[2]).abs() - q1).abs() < 1e-12);
        let u = (q1 + q2) / 2.0 + s[2].sqrt() / (4.0 * (n as f64).sqrt());
        if tp.in_regime {
            prop_assert!(tp.kl_total <= 0.75 + 1e-12);
            prop_assert!(tp.lecam_value >= 30.0 / 45.0 * u * u - 1e-15);
        }
    }

    #[test]
    fn packing_invariants(d in 3usize..7, k in 1usize..40, seed in any::<u64>(), stall in 1usize..200) {
        let p = build_packing_with_stall(d, k, seed, stall).unwrap();
        prop_assert!(p.points.len() <= k && !p.points.is_empty());
        for (i, v) in p.points.iter().enumerate() {
            prop_assert_eq!(v[0], 0.0);
            prop_assert!((dist(v, &vec![0.0; d]) - 1.0).abs() < 1e-9);
            for w in &p.points[..i] {
                prop_assert!(dist(v, w) >= p.separation);
            }
        }
    }
}
