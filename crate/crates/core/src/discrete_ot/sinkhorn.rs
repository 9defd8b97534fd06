use serde::{Deserialize, Serialize};

use super::{CostMatrix, DiscretePotentials, TransportPlan};
use crate::datasets::EmpiricalMeasure;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Target regularization strength.
    pub epsilon: f64,
    /// Iteration budget of the final (target-ε) stage.
    pub max_iter: usize,
    /// L1 marginal violation at which the final stage stops.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iter: 100_000,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    /// Dual potentials with `π_ij = a_i b_j exp((φ_i + ψ_j − c_ij)/ε)`.
    pub potentials: DiscretePotentials,
    pub iterations: usize,
    /// L1 violation of the source marginal after the last update.
    pub marginal_violation: f64,
}

// iterations spent per intermediate ε before moving on
const STAGE_ITERS: usize = 200;
const STAGE_TOL: f64 = 1e-4;

/// Entropic OT in the log domain, annealing ε from the median cost down to
/// the target by halving and warm-starting the potentials at each stage.
pub fn sinkhorn(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cost: &CostMatrix,
    opts: &SinkhornOptions,
) -> Result<SinkhornSolution> {
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::Validation(format!("sinkhorn epsilon must be > 0, got {}", opts.epsilon)));
    }
    if cost.n != a.len() || cost.m != b.len() {
        return Err(Error::Contract(format!(
            "cost matrix is {}×{} for measures of sizes {} and {}",
            cost.n,
            cost.m,
            a.len(),
            b.len()
        )));
    }
    let (n, m) = (cost.n, cost.m);
    let loga: Vec<f64> = a.weights().iter().map(|w| w.ln()).collect();
    let logb: Vec<f64> = b.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut scratch = vec![0.0; n.max(m)];

    let mut eps = cost.median().max(opts.epsilon);
    let mut total_iters = 0;
    loop {
        let last = eps <= opts.epsilon;
        let (budget, tol) = if last { (opts.max_iter, opts.tol) } else { (STAGE_ITERS, STAGE_TOL) };
        let mut err = f64::INFINITY;
        for _ in 0..budget {
            total_iters += 1;
            // φ update makes the row sums exact
            for i in 0..n {
                let row = cost.row(i);
                for j in 0..m {
                    scratch[j] = logb[j] + (g[j] - row[j]) / eps;
                }
                f[i] = -eps * log_sum_exp(&scratch[..m]);
            }
            for j in 0..m {
                for i in 0..n {
                    scratch[i] = loga[i] + (f[i] - cost.at(i, j)) / eps;
                }
                g[j] = -eps * log_sum_exp(&scratch[..n]);
            }
            err = row_violation(&f, &g, &loga, &logb, cost, eps, a.weights());
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("sinkhorn marginals at ε = {eps:e}")));
            }
            if err <= tol {
                break;
            }
        }
        if last {
            if err > opts.tol {
                return Err(Error::NonConvergence {
                    solver: "sinkhorn",
                    iterations: total_iters,
                    residual: err,
                });
            }
            let mut pi = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    pi[i * m + j] = (loga[i] + logb[j] + (f[i] + g[j] - cost.at(i, j)) / eps).exp();
                }
            }
            return Ok(SinkhornSolution {
                plan: TransportPlan::dense(a, b, pi, cost),
                potentials: DiscretePotentials { phi: f, psi: g },
                iterations: total_iters,
                marginal_violation: err,
            });
        }
        eps = (eps / 2.0).max(opts.epsilon);
    }
}

fn row_violation(
    f: &[f64],
    g: &[f64],
    loga: &[f64],
    logb: &[f64],
    cost: &CostMatrix,
    eps: f64,
    a: &[f64],
) -> f64 {
    let mut err = 0.0;
    for i in 0..cost.n {
        let row = cost.row(i);
        let s: f64 = (0..cost.m)
            .map(|j| (loga[i] + logb[j] + (f[i] + g[j] - row[j]) / eps).exp())
            .sum();
        err += (s - a[i]).abs();
    }
    err
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}
