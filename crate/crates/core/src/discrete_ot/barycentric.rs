use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TransportPlan;
use crate::autodiff::{Direction, Graph, Mode, OptimizerKind, OptimizerState, Tensor};
use crate::datasets::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::w2gan::GeneratorNet;

/// `b(x_i) = Σ_j π_ij y_j / Σ_j π_ij` as an `[n, d]` tensor.
pub fn barycentric_map(plan: &TransportPlan, target: &EmpiricalMeasure) -> Result<Tensor> {
    if plan.m != target.len() {
        return Err(Error::Contract(format!("plan has {} columns, target has {} points", plan.m, target.len())));
    }
    let d = target.dim();
    let mut acc = vec![0.0; plan.n * d];
    let mut mass = vec![0.0; plan.n];
    for (i, j, v) in plan.entries() {
        mass[i] += v;
        for (a, y) in acc[i * d..(i + 1) * d].iter_mut().zip(target.point(j)) {
            *a += v * y;
        }
    }
    for (i, &w) in mass.iter().enumerate() {
        if w <= 0.0 {
            return Err(Error::Validation(format!("source point {i} has zero mass in the plan")));
        }
        acc[i * d..(i + 1) * d].iter_mut().for_each(|a| *a /= w);
    }
    Tensor::matrix(plan.n, d, acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarycentricFit {
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BarycentricFit {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 256,
            learning_rate: 5e-3,
            seed: 0,
        }
    }
}

/// Regresses `net` onto the barycentric targets by least squares with Adam.
/// Returns the final mean squared error over all points.
pub fn fit_barycentric_net(
    net: &mut GeneratorNet,
    source: &EmpiricalMeasure,
    targets: &Tensor,
    cfg: &BarycentricFit,
) -> Result<f64> {
    if targets.shape() != source.points().shape() {
        return Err(Error::Shape(format!(
            "targets {:?} do not match sources {:?}",
            targets.shape(),
            source.points().shape()
        )));
    }
    let (n, d) = (source.len(), source.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(OptimizerKind::adam(0.9, 0.999), cfg.learning_rate, Direction::Descent)?;
    let bsz = cfg.batch.min(n).max(1);
    for _ in 0..cfg.iterations {
        let idx: Vec<usize> = (0..bsz).map(|_| rng.random_range(0..n)).collect();
        let xs: Vec<f64> = idx.iter().flat_map(|&i| source.point(i).to_vec()).collect();
        let ys: Vec<f64> = idx.iter().flat_map(|&i| targets.row(i).to_vec()).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(bsz, d, xs)?)?;
        let y = g.constant(Tensor::matrix(bsz, d, ys)?)?;
        let mut bound = net.bind(&mut g)?;
        let out = net.forward(&mut g, &mut bound, x, Mode::Train)?;
        let diff = g.sub(out, y)?;
        let sq = g.square(diff)?;
        let loss = g.mean(sq)?;
        let grads = g.backward_scalar(loss)?;
        let gr = net.gradients(&grads, &bound);
        net.commit_batch_stats(&bound, bsz);
        opt.apply(net.params_mut(), &gr)?;
    }
    let pred = net.eval(source.points())?;
    let mse = pred
        .data()
        .iter()
        .zip(targets.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (n * d) as f64;
    Ok(mse)
}
