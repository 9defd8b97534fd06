use monge_core::datasets::{gaussian_monge_map, gaussian_w2, sample, Dataset, Gaussian, MeasureSpec};
use monge_core::discrete_ot::{exact_assignment, w2_estimate, CostSpec};
use monge_core::eval::{evaluate_map, EvalSet};

#[test]
fn matched_targets_score_as_exact() {
    // 300 points per side takes the warm-started assignment path
    let (s, t) = Dataset::FourGaussians.kinds();
    let src = sample(&MeasureSpec::new(s, 1), 300).unwrap();
    let tgt = sample(&MeasureSpec::new(t, 2), 300).unwrap();
    let set = EvalSet::new(src.clone(), tgt.clone(), None).unwrap();
    let report = evaluate_map("exact", &set.matched_targets().unwrap(), &set).unwrap();
    assert_eq!(report.cost_ratio_vs_hungarian, 1.0);
    assert_eq!(report.displacement_error, 0.0);
    assert!(report.marginal_w2 < 1e-12);

    let (plan, _) = exact_assignment(&src, &tgt, CostSpec::default()).unwrap();
    assert!((report.transport_cost - plan.cost_value).abs() < 1e-12);
    assert!((report.initial_w2 - w2_estimate(&src, &tgt, CostSpec::default()).unwrap()).abs() < 1e-12);
}

#[test]
fn gaussian_monge_map_is_near_optimal_on_samples() {
    let a = MeasureSpec::gaussian(Gaussian::new(vec![0.0, 0.0], vec![vec![1.0, 0.3], vec![0.3, 0.6]]).unwrap(), 3);
    let b = MeasureSpec::gaussian(Gaussian::new(vec![2.0, -1.0], vec![vec![0.5, -0.2], vec![-0.2, 1.4]]).unwrap(), 4);
    let map = gaussian_monge_map(&a, &b).unwrap();
    let src = sample(&a, 1000).unwrap();
    let pushed = src.map_points(|_, x| map.apply(x)).unwrap();
    let cost = CostSpec::default();
    let mapped: f64 = (0..src.len())
        .map(|i| src.point(i).iter().zip(pushed.point(i)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 2.0)
        .sum::<f64>()
        / src.len() as f64;
    // the sample assignment can only undercut the map, and only slightly
    let (plan, _) = exact_assignment(&src, &pushed, cost).unwrap();
    assert!(plan.cost_value <= mapped + 1e-12);
    assert!(plan.cost_value > 0.98 * mapped, "{} vs {}", plan.cost_value, mapped);
    let w2 = gaussian_w2(&a, &b).unwrap();
    assert!((cost.distance_from_cost(mapped) - w2).abs() < 0.1 * w2);
}
