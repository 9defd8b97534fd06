use serde::{Deserialize, Serialize};

use super::{CostMatrix, DiscretePotentials, TransportPlan};
use crate::datasets::EmpiricalMeasure;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2DualOptions {
    pub lambda: f64,
    /// Stop once the Euclidean norm of the gradient falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Ascent step; defaults to `1/L` for the gradient's Lipschitz constant.
    pub step: Option<f64>,
}

impl Default for L2DualOptions {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            tol: 1e-10,
            max_iter: 200_000,
            step: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct L2DualSolution {
    pub potentials: DiscretePotentials,
    /// `Σ a φ + Σ b ψ − λ Σ a_i b_j (φ_i + ψ_j − c_ij)_+²`.
    pub objective: f64,
    /// `Σ a φ + Σ b ψ` without the penalty.
    pub dual_value: f64,
    /// `π ∝ a_i b_j (φ_i + ψ_j − c_ij)_+`, normalized to unit mass.
    pub plan: TransportPlan,
    pub marginal_violation: f64,
    pub iterations: usize,
}

fn objective_and_gradient(
    x: &[f64],
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    lambda: f64,
    grad: &mut [f64],
) -> f64 {
    let (n, m) = (cost.n, cost.m);
    let (phi, psi) = x.split_at(n);
    grad[..n].copy_from_slice(a);
    grad[n..].copy_from_slice(b);
    let mut value: f64 = phi.iter().zip(a).map(|(p, w)| p * w).sum::<f64>() + psi.iter().zip(b).map(|(p, w)| p * w).sum::<f64>();
    for i in 0..n {
        let row = cost.row(i);
        for j in 0..m {
            let s = phi[i] + psi[j] - row[j];
            if s > 0.0 {
                let w = a[i] * b[j];
                value -= lambda * w * s * s;
                let d = 2.0 * lambda * w * s;
                grad[i] -= d;
                grad[n + j] -= d;
            }
        }
    }
    value
}

/// Maximizes the L2-penalized Kantorovich dual by accelerated gradient
/// ascent with adaptive restart.
pub fn l2_regularized_dual(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cost: &CostMatrix,
    opts: &L2DualOptions,
) -> Result<L2DualSolution> {
    if !(opts.lambda > 0.0 && opts.lambda.is_finite()) {
        return Err(Error::Validation(format!("lambda must be > 0, got {}", opts.lambda)));
    }
    let (n, m) = (cost.n, cost.m);
    if n != a.len() || m != b.len() {
        return Err(Error::Contract("cost matrix does not match the measures".into()));
    }
    let (wa, wb) = (a.weights(), b.weights());
    let amax = wa.iter().chain(wb).copied().fold(0.0, f64::max);
    let lipschitz = 4.0 * opts.lambda * amax;
    let step = opts.step.unwrap_or(1.0 / lipschitz);
    if !(step > 0.0) {
        return Err(Error::Validation(format!("step must be > 0, got {step}")));
    }

    let mut x = vec![0.0; n + m];
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut grad = vec![0.0; n + m];
    let mut momentum_k = 0usize;
    let mut iterations = 0;
    let mut last_norm = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let value = objective_and_gradient(&y, wa, wb, cost, opts.lambda, &mut grad);
        if !value.is_finite() || value.abs() > 1e12 {
            return Err(Error::Divergence(format!(
                "L2 dual objective reached {value:e} after {iterations} iterations; use a smaller step"
            )));
        }
        last_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if last_norm < opts.tol {
            x.copy_from_slice(&y);
            break;
        }
        x_prev.copy_from_slice(&x);
        for k in 0..n + m {
            x[k] = y[k] + step * grad[k];
        }
        // restart when the momentum direction opposes the gradient
        let dot: f64 = (0..n + m).map(|k| grad[k] * (x[k] - x_prev[k])).sum();
        momentum_k = if dot < 0.0 { 0 } else { momentum_k + 1 };
        let beta = momentum_k as f64 / (momentum_k as f64 + 3.0);
        for k in 0..n + m {
            y[k] = x[k] + beta * (x[k] - x_prev[k]);
        }
    }
    if last_norm >= opts.tol {
        return Err(Error::NonConvergence {
            solver: "l2_regularized_dual",
            iterations,
            residual: last_norm,
        });
    }
    let objective = objective_and_gradient(&x, wa, wb, cost, opts.lambda, &mut grad);
    let potentials = DiscretePotentials {
        phi: x[..n].to_vec(),
        psi: x[n..].to_vec(),
    };
    let dual_value = potentials.dual_value(wa, wb);
    let mut pi = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let s = potentials.phi[i] + potentials.psi[j] - cost.at(i, j);
            pi[i * m + j] = 2.0 * opts.lambda * wa[i] * wb[j] * s.max(0.0);
        }
    }
    let total: f64 = pi.iter().sum();
    if total <= 0.0 {
        return Err(Error::NonConvergence {
            solver: "l2_regularized_dual",
            iterations,
            residual: f64::INFINITY,
        });
    }
    pi.iter_mut().for_each(|p| *p /= total);
    let plan = TransportPlan::dense(a, b, pi, cost);
    let marginal_violation = plan.marginal_violation();
    Ok(L2DualSolution {
        potentials,
        objective,
        dual_value,
        plan,
        marginal_violation,
        iterations,
    })
}
