use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::{Activation, Direction, Graph, Mlp, MlpSpec, Mode, OptimizerKind, OptimizerState, Tensor};
use crate::datasets::{sample, Gaussian, MeasureSpec};

fn batch(n: usize, seed: u64, shift: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..2 * n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect();
    Tensor::matrix(n, 2, data).unwrap()
}

fn weights(lambda_ineq: f64, lambda_eq: f64, lambda_eps: f64, pairing: Pairing) -> PenaltyWeights {
    PenaltyWeights {
        lambda_ineq,
        lambda_eq,
        lambda_eps,
        pairing,
    }
}

/// Sets every weight to zero and the output bias to `c`.
fn make_constant(net: &mut Mlp, c: f64) {
    let mut params = net.params_mut();
    let k = params.len();
    for p in params.iter_mut() {
        p.data_mut().fill(0.0);
    }
    params[k - 1].data_mut()[0] = c;
}

fn shift_output_bias(net: &mut Mlp, c: f64) {
    let mut params = net.params_mut();
    let k = params.len();
    params[k - 1].data_mut()[0] += c;
}

/// Plain evaluation of a ReLU potential without batch norm: value and input
/// gradient at one point, written with explicit loops.
fn oracle_potential(net: &Mlp, x: &[f64]) -> (f64, Vec<f64>) {
    let params = net.params();
    let layers: Vec<(&Tensor, &Tensor)> = params.chunks(2).map(|c| (c[0], c[1])).collect();
    let mut h = x.to_vec();
    let mut masks = Vec::new();
    for (l, (w, b)) in layers.iter().enumerate() {
        let (din, dout) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0; dout];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = b.data()[o];
            for i in 0..din {
                acc += h[i] * w.data()[i * dout + o];
            }
            *slot = acc;
        }
        if l + 1 < layers.len() {
            let mask: Vec<f64> = out.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
            out = out.iter().map(|&v| v.max(0.0)).collect();
            masks.push(mask);
        }
        h = out;
    }
    let mut grad = vec![1.0];
    for (l, (w, _)) in layers.iter().enumerate().rev() {
        let (din, dout) = (w.shape()[0], w.shape()[1]);
        if l + 1 < layers.len() {
            for (gv, m) in grad.iter_mut().zip(&masks[l]) {
                *gv *= m;
            }
        }
        let mut next = vec![0.0; din];
        for (i, slot) in next.iter_mut().enumerate() {
            for o in 0..dout {
                *slot += w.data()[i * dout + o] * grad[o];
            }
        }
        grad = next;
    }
    (h[0], grad)
}

fn oracle_phi(pp: &PotentialPair, x: &[f64]) -> (f64, Vec<f64>) {
    oracle_potential(&pp.phi, x)
}

fn oracle_psi(pp: &PotentialPair, y: &[f64]) -> (f64, Vec<f64>) {
    let (s, gs) = oracle_potential(&pp.second, y);
    match pp.parameterization {
        Parameterization::Direct => (s, gs),
        Parameterization::EpsilonReparam => {
            let (p, gp) = oracle_phi(pp, y);
            (s - p, gs.iter().zip(&gp).map(|(a, b)| a - b).collect())
        }
    }
}

fn half_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 2.0
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    (2.0 * half_sq(a, b)).sqrt()
}

fn oracle_ineq(pp: &PotentialPair, u: &Tensor, v: &Tensor, pairing: Pairing) -> f64 {
    let n = u.rows();
    let mut acc = 0.0;
    let mut count = 0.0;
    for i in 0..n {
        let js: Vec<usize> = match pairing {
            Pairing::Diagonal => vec![i],
            Pairing::AllPairs => (0..n).collect(),
        };
        for j in js {
            let s = oracle_phi(pp, u.row(i)).0 + oracle_psi(pp, v.row(j)).0 - half_sq(u.row(i), v.row(j));
            acc += s.max(0.0).powi(2);
            count += 1.0;
        }
    }
    acc / count
}

fn oracle_eq(pp: &PotentialPair, u: &Tensor, v: &Tensor) -> f64 {
    let n = u.rows() as f64;
    let mut t1 = 0.0;
    for i in 0..u.rows() {
        let x = u.row(i);
        let (p, gp) = oracle_phi(pp, x);
        let moved: Vec<f64> = x.iter().zip(&gp).map(|(a, b)| a - b).collect();
        let r = p + oracle_psi(pp, &moved).0 - gp.iter().map(|g| g * g).sum::<f64>() / 2.0;
        t1 += r * r;
    }
    let mut t2 = 0.0;
    for j in 0..v.rows() {
        let y = v.row(j);
        let (q, gq) = oracle_psi(pp, y);
        let moved: Vec<f64> = y.iter().zip(&gq).map(|(a, b)| a - b).collect();
        let r = q + oracle_phi(pp, &moved).0 - gq.iter().map(|g| g * g).sum::<f64>() / 2.0;
        t2 += r * r;
    }
    t1 / n + t2 / v.rows() as f64
}

fn oracle_disc(
    pp: &PotentialPair,
    gz: &Tensor,
    x: &Tensor,
    interp: Option<(&Tensor, &Tensor)>,
    w: &PenaltyWeights,
) -> LossBreakdown {
    let n = gz.rows() as f64;
    let l_ot = (0..gz.rows()).map(|i| oracle_phi(pp, gz.row(i)).0).sum::<f64>() / n
        + (0..x.rows()).map(|j| oracle_psi(pp, x.row(j)).0).sum::<f64>() / n;
    let l_ineq = match interp {
        None => oracle_ineq(pp, gz, x, w.pairing),
        Some((a, b)) => oracle_ineq(pp, a, b, w.pairing),
    };
    let l_eq = if w.lambda_eq > 0.0 { oracle_eq(pp, gz, x) } else { 0.0 };
    let l_eps = match pp.parameterization {
        Parameterization::Direct => 0.0,
        Parameterization::EpsilonReparam => {
            (0..x.rows()).map(|j| oracle_potential(&pp.second, x.row(j)).0.max(0.0).powi(2)).sum::<f64>() / n
        }
    };
    LossBreakdown {
        l_ot,
        l_ineq,
        l_eq,
        l_eps,
        total: l_ot - w.lambda_ineq * l_ineq - w.lambda_eq * l_eq - w.lambda_eps * l_eps,
    }
}

fn assert_close(a: &LossBreakdown, b: &LossBreakdown, tol: f64) {
    for (x, y, name) in [
        (a.l_ot, b.l_ot, "l_ot"),
        (a.l_ineq, b.l_ineq, "l_ineq"),
        (a.l_eq, b.l_eq, "l_eq"),
        (a.l_eps, b.l_eps, "l_eps"),
        (a.total, b.total, "total"),
    ] {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{name}: {x} vs {y}");
    }
}

fn random_pair(param: Parameterization, seed: u64) -> PotentialPair {
    PotentialPair::new(MlpSpec::potential(2, 0), param, seed).unwrap()
}

#[test]
fn zero_potentials_give_zero_losses() {
    let mut pp = random_pair(Parameterization::Direct, 1);
    make_constant(&mut pp.phi, 0.0);
    make_constant(&mut pp.second, 0.0);
    let (gz, x) = (batch(16, 1, 0.0), batch(16, 2, 1.0));
    let l = disc_loss(&pp, &gz, &x, None, &weights(200.0, 0.0, 0.0, Pairing::AllPairs)).unwrap();
    assert_eq!((l.l_ot, l.l_ineq, l.total), (0.0, 0.0, 0.0));
    assert_eq!(eq_penalty(&pp, &gz, &x).unwrap(), 0.0);
}

#[test]
fn unit_potentials_single_pair() {
    let mut pp = random_pair(Parameterization::Direct, 2);
    make_constant(&mut pp.phi, 1.0);
    make_constant(&mut pp.second, 1.0);
    let x = Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap();
    let lambda = 7.0;
    let l = disc_loss(&pp, &x, &x, None, &weights(lambda, 0.0, 0.0, Pairing::Diagonal)).unwrap();
    assert_eq!(l.l_ot, 2.0);
    assert_eq!(l.l_ineq, 4.0);
    assert_eq!(l.total, 2.0 - 4.0 * lambda);
}

#[test]
fn disc_loss_matches_straight_line_oracle() {
    let (gz, x) = (batch(12, 3, 0.0), batch(12, 4, 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (xt, yt) = interpolate_pairs(&gz, &x, &mut rng).unwrap();
    for param in [Parameterization::Direct, Parameterization::EpsilonReparam] {
        let pp = random_pair(param, 6);
        for pairing in [Pairing::Diagonal, Pairing::AllPairs] {
            for w in [weights(200.0, 0.0, 0.0, pairing), weights(3.0, 2.0, 5.0, pairing)] {
                for interp in [None, Some((&xt, &yt))] {
                    let got = disc_loss(&pp, &gz, &x, interp, &w).unwrap();
                    let want = oracle_disc(&pp, &gz, &x, interp, &w);
                    assert_close(&got, &want, 1e-12);
                }
            }
        }
    }
}

#[test]
fn eq_penalty_matches_oracle() {
    let (u, v) = (batch(10, 7, 0.0), batch(10, 8, -0.5));
    for param in [Parameterization::Direct, Parameterization::EpsilonReparam] {
        let pp = random_pair(param, 9);
        let got = eq_penalty(&pp, &u, &v).unwrap();
        let want = oracle_eq(&pp, &u, &v);
        assert!(got >= 0.0);
        assert!((got - want).abs() <= 1e-12 * (1.0 + want), "{got} vs {want}");
    }
}

#[test]
fn eq_penalty_vanishes_on_saturating_pair() {
    // φ(x) = x₀ − 1/2 agrees with ‖x‖²/2 and its gradient at (1, 0); ψ ≡ 0
    let spec = MlpSpec::uniform(2, &[], 1, Activation::Relu, false, 0);
    let mut pp = PotentialPair::new(spec, Parameterization::Direct, 0).unwrap();
    make_constant(&mut pp.second, 0.0);
    {
        let mut p = pp.phi.params_mut();
        p[0].data_mut().copy_from_slice(&[1.0, 0.0]);
        p[1].data_mut()[0] = -0.5;
    }
    let u = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
    let v = Tensor::matrix(1, 2, vec![0.5, 0.0]).unwrap();
    assert_eq!(eq_penalty(&pp, &u, &v).unwrap(), 0.0);
}

#[test]
fn translation_of_potentials_leaves_losses_unchanged() {
    let (gz, x) = (batch(12, 10, 0.0), batch(12, 11, 1.0));
    for param in [Parameterization::Direct, Parameterization::EpsilonReparam] {
        let pp = random_pair(param, 12);
        let mut shifted = pp.clone();
        shift_output_bias(&mut shifted.phi, 0.37);
        if param == Parameterization::Direct {
            shift_output_bias(&mut shifted.second, -0.37);
        }
        for pairing in [Pairing::Diagonal, Pairing::AllPairs] {
            let w = weights(200.0, 10.0, 0.0, pairing);
            let a = disc_loss(&pp, &gz, &x, None, &w).unwrap();
            let b = disc_loss(&shifted, &gz, &x, None, &w).unwrap();
            assert!((a.l_ot - b.l_ot).abs() < 1e-12);
            assert!((a.l_ineq - b.l_ineq).abs() < 1e-12);
            assert!((a.l_eq - b.l_eq).abs() < 1e-12);
        }
    }
}

#[test]
fn reparameterized_psi_is_eps_minus_phi() {
    let pp = random_pair(Parameterization::EpsilonReparam, 13);
    let y = batch(8, 14, 0.0);
    let psi = pp.psi(&y).unwrap();
    let want = pp.second.eval(&y).unwrap().zip_map(&pp.phi(&y).unwrap(), |e, p| e - p);
    assert_eq!(psi, want);
}

#[test]
fn interpolation_endpoints_and_segment() {
    let (gz, x) = (batch(20, 15, 0.0), batch(20, 16, 2.0));
    assert_eq!(interpolate(&gz, &x, &[1.0; 20]).unwrap(), x);
    assert_eq!(interpolate(&gz, &x, &[0.0; 20]).unwrap(), gz);
    let norm = dist;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (xt, yt) = interpolate_pairs(&gz, &x, &mut rng).unwrap();
    for i in 0..20 {
        let (p, a, b) = (xt.row(i), x.row(i), gz.row(i));
        assert!((norm(p, a) + norm(p, b) - norm(a, b)).abs() < 1e-9);
    }
    // ỹ rows lie on segments between some real point and some generated point
    for i in 0..20 {
        let p = yt.row(i);
        assert!((0..20).any(|k| (norm(p, x.row(k)) + norm(p, gz.row(k)) - norm(x.row(k), gz.row(k))).abs() < 1e-9));
    }
    let mut rng2 = ChaCha8Rng::seed_from_u64(17);
    assert_eq!(interpolate_pairs(&gz, &x, &mut rng2).unwrap(), (xt, yt));
}

#[test]
fn identity_init_generator_is_near_identity() {
    let gen = GeneratorNet::identity_init(MlpSpec::generator(2, 1), 1e-3).unwrap();
    let z = batch(10_000, 18, 0.0);
    let gz = gen.eval(&z).unwrap();
    let mean = (0..z.rows()).map(|i| dist(gz.row(i), z.row(i))).sum::<f64>() / 1e4;
    assert!(mean < 0.05, "{mean}");
}

fn identity_generator() -> GeneratorNet {
    let mut gen = GeneratorNet::identity_init(MlpSpec::generator(2, 2), 1.0).unwrap();
    make_constant(&mut gen.h, 0.0);
    gen
}

#[test]
fn gen_loss_examples() {
    let gen = identity_generator();
    let mut pp = random_pair(Parameterization::Direct, 19);
    make_constant(&mut pp.phi, 0.8);
    let z = batch(16, 20, 0.0);
    assert!((gen_loss(&pp, &gen, &z).unwrap() - 0.8).abs() < 1e-15);
    let mut g = Graph::new();
    let zi = g.constant(z.clone()).unwrap();
    let (loss, gb) = gen_objective(&mut g, &pp, &gen, zi, Mode::Train).unwrap();
    let grads = g.backward_scalar(loss).unwrap();
    assert!(gen.gradients(&grads, &gb).iter().all(|t| t.max_abs() == 0.0));

    // φ(x) = (relu(x₀) + relu(−x₀))/2 equals ‖x‖²/2 at (±1, 0)
    let spec = MlpSpec::uniform(2, &[2], 1, Activation::Relu, false, 0);
    let mut abs = PotentialPair::new(spec, Parameterization::Direct, 0).unwrap();
    {
        let mut p = abs.phi.params_mut();
        p[0].data_mut().copy_from_slice(&[1.0, -1.0, 0.0, 0.0]);
        p[1].data_mut().fill(0.0);
        p[2].data_mut().copy_from_slice(&[0.5, 0.5]);
        p[3].data_mut()[0] = 0.0;
    }
    let z = Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
    assert_eq!(gen_loss(&abs, &gen, &z).unwrap(), 0.5);
}

#[test]
fn generator_descent_direction_is_minus_grad_phi() {
    let pp = random_pair(Parameterization::Direct, 21);
    let z = batch(32, 22, 0.0);
    let n = z.rows();
    // free per-sample displacement θ: G(z_i) = z_i + θ_i with θ = 0
    let mut g = Graph::new();
    let zi = g.constant(z.clone()).unwrap();
    let theta = g.param(Tensor::zeros(&[n, 2])).unwrap();
    let gz = g.add(zi, theta).unwrap();
    let mut b = pp.bind_frozen(&mut g).unwrap();
    let phi = pp.phi_node(&mut g, &mut b, gz).unwrap();
    let loss = g.mean(phi).unwrap();
    let grads = g.backward_scalar(loss).unwrap();
    let step = grads.get(theta).unwrap().map(|v| -v * n as f64);
    let want = pp.phi_gradient(&z).unwrap().map(|v| -v);
    for i in 0..n {
        let (a, c) = (step.row(i), want.row(i));
        let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nc = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nc > 1e-12 {
            assert!(dot / (na * nc) > 0.999);
        }
    }

    // the generator's output bias receives the batch mean of ∇φ(G(z))
    let gen = identity_generator();
    let mut g = Graph::new();
    let zi = g.constant(z.clone()).unwrap();
    let (loss, gb) = gen_objective(&mut g, &pp, &gen, zi, Mode::Eval).unwrap();
    let grads = g.backward_scalar(loss).unwrap();
    let gr = gen.gradients(&grads, &gb);
    let bias = gr.last().unwrap();
    let gphi = pp.phi_gradient(&z).unwrap();
    for k in 0..2 {
        let mean = (0..n).map(|i| gphi.row(i)[k]).sum::<f64>() / n as f64;
        assert!((bias.data()[k] - mean).abs() < 1e-12);
    }
}

fn oracle_wgan(critic: &Mlp, gz: &Tensor, x: &Tensor, xhat: &Tensor, variant: WganVariant, lambda: f64) -> WganBreakdown {
    let n = x.rows() as f64;
    let fx = (0..x.rows()).map(|i| oracle_potential(critic, x.row(i)).0).sum::<f64>() / n;
    let fg = (0..gz.rows()).map(|i| oracle_potential(critic, gz.row(i)).0).sum::<f64>() / n;
    let penalty = (0..xhat.rows())
        .map(|i| {
            let g = oracle_potential(critic, xhat.row(i)).1;
            let dev = g.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0;
            match variant {
                WganVariant::Gp => dev * dev,
                WganVariant::Lp => dev.max(0.0).powi(2),
            }
        })
        .sum::<f64>()
        / n;
    WganBreakdown {
        l_w: fx - fg,
        penalty,
        total: fx - fg - lambda * penalty,
    }
}

#[test]
fn wgan_baselines() {
    let (gz, x) = (batch(16, 23, 0.0), batch(16, 24, 1.0));
    let xhat = interpolate(&gz, &x, &[0.25; 16]).unwrap();
    let mut f = Mlp::new(MlpSpec::potential(2, 25)).unwrap();
    for variant in [WganVariant::Gp, WganVariant::Lp] {
        let got = wgan_baseline_disc_loss(&f, &gz, &x, &xhat, variant, 10.0).unwrap();
        let want = oracle_wgan(&f, &gz, &x, &xhat, variant, 10.0);
        for (a, b) in [(got.l_w, want.l_w), (got.penalty, want.penalty), (got.total, want.total)] {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
    make_constant(&mut f, 0.0);
    assert_eq!(wgan_baseline_disc_loss(&f, &gz, &x, &xhat, WganVariant::Gp, 10.0).unwrap().total, -10.0);
    assert_eq!(wgan_baseline_disc_loss(&f, &gz, &x, &xhat, WganVariant::Lp, 10.0).unwrap().total, 0.0);

    let spec = MlpSpec::uniform(2, &[], 1, Activation::Relu, false, 0);
    let mut lin = Mlp::new(spec).unwrap();
    lin.params_mut()[0].data_mut().copy_from_slice(&[1.0, 0.0]);
    for variant in [WganVariant::Gp, WganVariant::Lp] {
        assert_eq!(wgan_baseline_disc_loss(&lin, &gz, &x, &xhat, variant, 10.0).unwrap().penalty, 0.0);
    }
}

#[test]
fn discriminator_ascent_increases_objective() {
    let (gz, x) = (batch(128, 26, 0.0), batch(128, 27, 2.0));
    let mut pp = random_pair(Parameterization::Direct, 28);
    let w = weights(200.0, 0.0, 0.0, Pairing::AllPairs);
    let mut opt = OptimizerState::new(OptimizerKind::adam(0.5, 0.999), 5e-5, Direction::Ascent).unwrap();
    let (mut up, blocks) = (0, 20);
    for _ in 0..blocks {
        let before = disc_loss(&pp, &gz, &x, None, &w).unwrap().total;
        for _ in 0..10 {
            let mut g = Graph::new();
            let gi = g.input(gz.clone()).unwrap();
            let xi = g.input(x.clone()).unwrap();
            let mut b = pp.bind(&mut g).unwrap();
            let nodes = disc_objective(&mut g, &pp, &mut b, gi, xi, None, &w).unwrap();
            let grads = g.backward_scalar(nodes.total).unwrap();
            let gr = pp.gradients(&grads, &b);
            opt.apply(pp.params_mut(), &gr).unwrap();
        }
        if disc_loss(&pp, &gz, &x, None, &w).unwrap().total >= before {
            up += 1;
        }
    }
    assert!(up * 10 >= blocks * 9, "{up}/{blocks}");
}

#[test]
fn config_validation_and_serde() {
    let cfg = TrainingConfig::default();
    cfg.validate().unwrap();
    assert!(TrainingConfig { n_critic: 0, ..cfg.clone() }.validate().is_err());
    assert!(TrainingConfig { lambda_eq: -1.0, ..cfg.clone() }.validate().is_err());
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<TrainingConfig>(&json).unwrap(), cfg);
    let partial: TrainingConfig = serde_json::from_str(r#"{"n_critic": 5}"#).unwrap();
    assert_eq!(partial.n_critic, 5);
    assert!(serde_json::from_str::<TrainingConfig>(r#"{"ncritic": 5}"#).is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let mut gen = GeneratorNet::identity_init(MlpSpec::generator(2, 30), 1e-3).unwrap();
    let z = batch(64, 31, 0.0);
    let mut g = Graph::new();
    let zi = g.constant(z.clone()).unwrap();
    let mut b = gen.bind(&mut g).unwrap();
    gen.forward(&mut g, &mut b, zi, Mode::Train).unwrap();
    gen.commit_batch_stats(&b, 64);
    let ck = Checkpoint::from_generator(&gen, 7);
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back, ck);
    let mut fresh = GeneratorNet::identity_init(MlpSpec::generator(2, 99), 1.0).unwrap();
    back.restore_generator(&mut fresh).unwrap();
    assert_eq!(fresh.eval(&z).unwrap(), gen.eval(&z).unwrap());
    let mut small = GeneratorNet::identity_init(MlpSpec::uniform(2, &[4], 2, Activation::Relu, false, 0), 1.0).unwrap();
    assert!(back.restore_generator(&mut small).is_err());
}

fn gaussian(mean: [f64; 2], seed: u64) -> MeasureSpec {
    MeasureSpec::gaussian(Gaussian::isotropic(&mean, 1.0), seed)
}

fn short_config(iterations: usize) -> TrainingConfig {
    TrainingConfig {
        iterations,
        n_critic: 2,
        batch: 64,
        n_train: 128,
        eval_every: 5,
        checkpoint_every: 5,
        ..Default::default()
    }
}

#[test]
fn training_zero_iterations_on_identical_measures() {
    let spec = gaussian([0.0, 0.0], 3);
    let out = train(&short_config(0), &spec, &spec).unwrap();
    assert_eq!(out.status, TrainStatus::Completed);
    assert_eq!(out.trace.rows.len(), 1);
    assert!(out.trace.rows[0].w2_estimate.unwrap() < 0.01);
    assert_eq!(out.checkpoints.len(), 1);
}

#[test]
fn training_is_deterministic_and_logs() {
    let (src, tgt) = (gaussian([0.0, 0.0], 1), gaussian([2.0, 0.0], 2));
    let cfg = short_config(10);
    let a = train(&cfg, &src, &tgt).unwrap();
    let b = train(&cfg, &src, &tgt).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.trace.write_csv(&mut ca).unwrap();
    b.trace.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert!(text.starts_with("iteration,l_ot,l_ineq,l_eq,l_eps,w2_estimate\n"));
    assert_eq!(a.trace.rows.len(), 11);
    assert_eq!(a.trace.w2_series().len(), 3);
    assert_eq!(a.checkpoints.iter().map(|c| c.iteration).collect::<Vec<_>>(), vec![0, 5, 10]);
}

#[test]
fn wgan_training_runs() {
    let (src, tgt) = (gaussian([0.0, 0.0], 1), gaussian([2.0, 0.0], 2));
    for m in [Method::WganGp, Method::WganLp] {
        let out = train_method(&short_config(4), m, &src, &tgt).unwrap();
        assert_eq!(out.status, TrainStatus::Completed);
        assert!(out.potentials().is_none());
    }
}

#[test]
fn divergence_restores_last_checkpoint() {
    let (src, tgt) = (gaussian([0.0, 0.0], 1), gaussian([30.0, 0.0], 2));
    let cfg = TrainingConfig {
        alpha_disc: 50.0,
        alpha_gen: 50.0,
        gen_optimizer: OptimizerKind::Sgd,
        disc_optimizer: OptimizerKind::Sgd,
        ..short_config(40)
    };
    let out = train(&cfg, &src, &tgt).unwrap();
    match &out.status {
        TrainStatus::Diverged { iteration, .. } => {
            let ck = out.checkpoints.last().unwrap();
            assert!(ck.iteration < *iteration);
            assert_eq!(Checkpoint::from_generator(&out.generator, ck.iteration), *ck);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn pools_follow_specs() {
    let (src, tgt) = (gaussian([0.0, 0.0], 1), gaussian([2.0, 0.0], 2));
    let cfg = short_config(0);
    let (a, b) = training_pools(&cfg, &src, &tgt).unwrap();
    assert_eq!(a, sample(&src, 128).unwrap());
    assert_eq!(b, sample(&tgt, 128).unwrap());
}
