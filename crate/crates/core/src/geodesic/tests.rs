use proptest::prelude::*;

use super::*;
use crate::autodiff::{Activation, MlpSpec};
use crate::datasets::{gaussian_w2_closed, sample, MeasureSpec};
use crate::discrete_ot::w2_estimate;

fn pair() -> (Gaussian, Gaussian) {
    let src = Gaussian::new(vec![0.0, 0.0], vec![vec![1.0, 0.3], vec![0.3, 0.6]]).unwrap();
    let tgt = Gaussian::new(vec![2.0, -1.0], vec![vec![0.5, -0.2], vec![-0.2, 1.4]]).unwrap();
    (src, tgt)
}

fn cloud(g: &Gaussian, n: usize, seed: u64) -> EmpiricalMeasure {
    sample(&MeasureSpec::gaussian(g.clone(), seed), n).unwrap()
}

#[test]
fn update_endpoints() {
    let (src, tgt) = pair();
    let mu = cloud(&src, 50, 1);
    let t = crate::datasets::monge_map(&src, &tgt).unwrap();
    let map = MongeMapEstimate::ClosedFormAffine(t.clone());
    assert_eq!(functional_update(&mu, &map, 0.0).unwrap(), mu);
    let full = functional_update(&mu, &map, 1.0).unwrap();
    for i in 0..50 {
        assert_eq!(full.point(i), t.apply(mu.point(i)).as_slice());
    }
    assert!(functional_update(&mu, &map, 1.5).is_err());
}

#[test]
fn sampled_update_contracts_by_one_minus_alpha() {
    let (src, tgt) = pair();
    let mu = cloud(&src, 2000, 2);
    let nu = cloud(&tgt, 2000, 3);
    let map = MongeMapEstimate::ClosedFormAffine(crate::datasets::monge_map(&src, &tgt).unwrap());
    let before = w2_estimate(&mu, &nu, CostSpec::default()).unwrap();
    let after = w2_estimate(&functional_update(&mu, &map, 0.3).unwrap(), &nu, CostSpec::default()).unwrap();
    assert!((after / before - 0.7).abs() < 0.7 * 0.03 + 0.03, "{}", after / before);
    // closed-form tier
    let g = gaussian_geodesic_point(&src, &tgt, 0.3).unwrap();
    let exact = gaussian_w2_closed(&g, &tgt).unwrap() / gaussian_w2_closed(&src, &tgt).unwrap();
    assert!((exact - 0.7).abs() < 1e-9);
}

#[test]
fn ideal_descent_examples() {
    let (src, tgt) = pair();
    let one = simulate_ideal_descent(&src, &tgt, 1.0, 1).unwrap();
    assert!(one.trace.rows[1].w2 < 1e-7);

    // shift by (2, 0) so that W2(0) = 2
    let a = Gaussian::isotropic(&[0.0, 0.0], 1.0);
    let b = Gaussian::isotropic(&[2.0, 0.0], 1.0);
    let d = simulate_ideal_descent(&a, &b, 0.5, 3).unwrap();
    assert!((d.trace.rows[0].w2 - 2.0).abs() < 1e-12);
    assert!((d.trace.rows[3].w2 - 0.25).abs() < 1e-9);

    let d = simulate_ideal_descent(&src, &tgt, 0.2, 6).unwrap();
    for r in &d.trace.rows {
        assert!((r.f_t.unwrap() - 0.8f64.powi(r.t as i32)).abs() < 1e-9);
    }
    for ratio in d.trace.decay_ratios() {
        assert!((ratio - 0.8).abs() < 1e-9);
    }
    assert!(d.trace.rows.windows(2).all(|w| w[1].w2 < w[0].w2));
}

#[test]
fn iterates_lie_on_the_geodesic() {
    let (src, tgt) = pair();
    let d = simulate_ideal_descent(&src, &tgt, 0.35, 5).unwrap();
    for (t, mu) in d.measures.iter().enumerate() {
        let f = d.trace.rows[t].f_t.unwrap();
        let g = gaussian_geodesic_point(&src, &tgt, 1.0 - f).unwrap();
        let diff = mu
            .mean
            .iter()
            .zip(&g.mean)
            .map(|(a, b)| (a - b).abs())
            .chain(mu.cov.iter().flatten().zip(g.cov.iter().flatten()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "step {t}: {diff}");
    }
}

#[test]
fn constant_speed_between_gaussians() {
    let (src, tgt) = pair();
    let w = gaussian_w2_closed(&src, &tgt).unwrap();
    let mid = gaussian_geodesic_point(&src, &tgt, 0.5).unwrap();
    assert!((gaussian_w2_closed(&mid, &tgt).unwrap() - 0.5 * w).abs() < 1e-9);
    for (s, t) in [(0.0, 0.25), (0.25, 0.75), (0.5, 1.0)] {
        let a = gaussian_geodesic_point(&src, &tgt, s).unwrap();
        let b = gaussian_geodesic_point(&src, &tgt, t).unwrap();
        assert!((gaussian_w2_closed(&a, &b).unwrap() - (t - s) * w).abs() < 1e-9);
    }
}

#[test]
fn constant_speed_on_discrete_clouds() {
    let (src, tgt) = pair();
    let mu = cloud(&src, 64, 4);
    let nu = cloud(&tgt, 64, 5);
    let (plan, _) = exact_assignment(&mu, &nu, CostSpec::default()).unwrap();
    let map = MongeMapEstimate::DiscreteAssignment { plan, target: nu };
    let end = geodesic_point(&mu, &map, 1.0).unwrap();
    let total = w2_estimate(&mu, &end, CostSpec::default()).unwrap();
    let ts = [0.0, 0.25, 0.5, 0.75, 1.0];
    for (i, &s) in ts.iter().enumerate() {
        for &t in &ts[i + 1..] {
            let a = geodesic_point(&mu, &map, s).unwrap();
            let b = geodesic_point(&mu, &map, t).unwrap();
            let w = w2_estimate(&a, &b, CostSpec::default()).unwrap();
            assert!((w - (t - s) * total).abs() <= 0.02 * (t - s) * total, "{s}->{t}: {w}");
        }
    }
    assert_eq!(geodesic_point(&mu, &map, 0.0).unwrap(), mu);
}

#[test]
fn composition_matches_direct_map() {
    let (src, tgt) = pair();
    let one = simulate_ideal_descent(&src, &tgt, 0.4, 1).unwrap();
    assert!(composition_check(&one, 1e-9).unwrap().passed);
    let d = simulate_ideal_descent(&src, &tgt, 0.25, 3).unwrap();
    let c = composition_check(&d, 1e-9).unwrap();
    assert!(c.passed, "{}", c.max_abs_diff);
    assert!(c.composed.is_symmetric_psd(1e-9));
}

#[test]
fn gradient_flow_law() {
    let (src, tgt) = pair();
    let w0 = gaussian_w2_closed(&src, &tgt).unwrap();
    let (_, w) = gradient_flow_point(&src, &tgt, 0.0).unwrap();
    assert!((w - w0).abs() < 1e-12);
    let (_, w) = gradient_flow_point(&src, &tgt, std::f64::consts::LN_2).unwrap();
    assert!((w * w - w0 * w0 / 4.0).abs() < 1e-9);
    let (_, w) = gradient_flow_point(&src, &tgt, 20.0).unwrap();
    assert!(w < 1e-8 * w0);
    for t in [0.1, 0.7, 2.5] {
        let (_, w) = gradient_flow_point(&src, &tgt, t).unwrap();
        assert!((w * w - (-2.0 * t).exp() * w0 * w0).abs() < 1e-9);
    }
    assert!(gradient_flow_point(&src, &tgt, -1.0).is_err());
}

#[test]
fn potential_map_is_x_minus_gradient() {
    let spec = MlpSpec::uniform(2, &[], 1, Activation::Relu, false, 0);
    let mut phi = Mlp::new(spec).unwrap();
    {
        let mut p = phi.params_mut();
        p[0].data_mut().copy_from_slice(&[-2.0, 0.0]);
    }
    let mu = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let t = MongeMapEstimate::FromPotential { phi: phi.clone(), p: 2 }.apply(&mu).unwrap();
    assert_eq!(t.data(), &[2.0, 0.0, 3.0, 1.0]);
    // p = 3: ‖∇φ‖^{-1/2} ∇φ has norm √2
    let t = MongeMapEstimate::FromPotential { phi, p: 3 }.apply(&mu).unwrap();
    assert!((t.row(0)[0] - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn bump_gradient_respects_bound() {
    let (src, _) = pair();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bump = BumpPerturbation::random(0.5, 0.4, &src, 5, &mut rng).unwrap();
    assert!((bump.gradient_bound() - 0.5).abs() < 1e-12);
    let mu = cloud(&src, 5000, 7);
    let mut worst: f64 = 0.0;
    for i in 0..mu.len() {
        let g = bump.gradient(mu.point(i));
        worst = worst.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    assert!(worst <= 0.5 + 1e-12);
    // single bump attains the bound on the ring of radius s
    let single = BumpPerturbation {
        epsilon: 0.5,
        width: 0.4,
        centers: vec![vec![0.0, 0.0]],
        weights: vec![1.0],
    };
    let g = single.gradient(&[0.4, 0.0]);
    assert!((g[0].abs() - 0.5).abs() < 1e-12);
}

#[test]
fn deviation_examples() {
    let (src, tgt) = pair();
    let opts = DeviationOptions {
        n: 500,
        bootstrap: 50,
        ..Default::default()
    };
    let zero = deviation_experiment(&src, &tgt, 0.0, 0.0, 0.1, &opts).unwrap();
    assert_eq!(zero.measured_w2_deviation, 0.0);
    assert_eq!(zero.bound, 0.0);
    let r = deviation_experiment(&src, &tgt, 0.5, 0.0, 0.1, &opts).unwrap();
    assert!((r.bound - 0.05 / std::f64::consts::SQRT_2).abs() < 1e-12);
    assert!(r.within(3.0), "{r:?}");
    let r = deviation_experiment(&src, &tgt, 0.0, 0.2, 0.1, &opts).unwrap();
    assert!(r.within(3.0), "{r:?}");
    assert!(r.measured_w2_deviation > 0.0);
}

#[test]
fn trace_csv_layout() {
    let (src, tgt) = pair();
    let d = simulate_ideal_descent(&src, &tgt, 0.5, 2).unwrap();
    let mut buf = Vec::new();
    d.trace.write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "t,w2,f_t,deviation,bound");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(",,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decay_is_exactly_geometric(alpha in 0.05f64..0.95, steps in 1usize..8, m0 in -3.0f64..3.0, v in 0.2f64..3.0) {
        let src = Gaussian::new(vec![m0, 0.5], vec![vec![v, 0.1], vec![0.1, 1.0]]).unwrap();
        let (_, tgt) = pair();
        let d = simulate_ideal_descent(&src, &tgt, alpha, steps).unwrap();
        for r in d.trace.decay_ratios() {
            prop_assert!((r - (1.0 - alpha)).abs() < 1e-9);
        }
    }

    #[test]
    fn composed_map_is_affine_interpolation(alpha in 0.05f64..0.95, steps in 1usize..6) {
        let (src, tgt) = pair();
        let d = simulate_ideal_descent(&src, &tgt, alpha, steps).unwrap();
        let c = composition_check(&d, 1e-9).unwrap();
        prop_assert!(c.passed);
    }
}
