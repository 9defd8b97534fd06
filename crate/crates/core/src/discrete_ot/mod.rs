//! Exact and regularized optimal transport between empirical measures.

mod barycentric;
mod hungarian;
mod l2;
mod sinkhorn;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use barycentric::{barycentric_map, fit_barycentric_net, BarycentricFit};
pub use hungarian::{brute_force_assignment, exact_assignment, hungarian, Assignment};
pub use l2::{l2_regularized_dual, L2DualOptions, L2DualSolution};
pub use sinkhorn::{sinkhorn, SinkhornOptions, SinkhornSolution};

use crate::datasets::EmpiricalMeasure;
use crate::error::{Error, Result};

/// `c(x, y) = ‖x − y‖^p / p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSpec {
    pub p: u32,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self { p: 2 }
    }
}

impl CostSpec {
    pub fn new(p: u32) -> Result<Self> {
        if p == 0 {
            return Err(Error::Validation("cost exponent p must be at least 1".into()));
        }
        Ok(Self { p })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match self.p {
            2 => sq / 2.0,
            1 => sq.sqrt(),
            p => sq.powf(p as f64 / 2.0) / p as f64,
        }
    }

    /// Row-major `n × m` cost matrix.
    pub fn matrix(&self, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<CostMatrix> {
        if a.dim() != b.dim() {
            return Err(Error::Contract(format!("dimensions differ: {} vs {}", a.dim(), b.dim())));
        }
        let (n, m) = (a.len(), b.len());
        let mut data = vec![0.0; n * m];
        data.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let x = a.point(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = self.eval(x, b.point(j));
            }
        });
        Ok(CostMatrix { n, m, data })
    }

    /// `W_p` from a plan cost `Σ π c`.
    pub fn distance_from_cost(&self, cost: f64) -> f64 {
        let c = (self.p as f64 * cost).max(0.0);
        c.powf(1.0 / self.p as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub n: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(n: usize, m: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..n * m).map(|k| f(k / m, k % m)).collect();
        Self { n, m, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn median(&self) -> f64 {
        let mut v = self.data.clone();
        let k = v.len() / 2;
        let (_, med, _) = v.select_nth_unstable_by(k, f64::total_cmp);
        *med
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    Dense(Vec<f64>),
    /// Source `i` sends all its mass to target `sigma[i]`.
    Permutation(Vec<usize>),
}

/// Coupling between a source with `n` points and a target with `m` points.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub n: usize,
    pub m: usize,
    pub coupling: Coupling,
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
    /// `Σ π_ij c(x_i, y_j)`.
    pub cost_value: f64,
}

impl TransportPlan {
    pub fn dense(a: &EmpiricalMeasure, b: &EmpiricalMeasure, pi: Vec<f64>, cost: &CostMatrix) -> Self {
        let cost_value = pi.iter().zip(&cost.data).map(|(p, c)| p * c).sum();
        Self {
            n: a.len(),
            m: b.len(),
            coupling: Coupling::Dense(pi),
            source_weights: a.weights().to_vec(),
            target_weights: b.weights().to_vec(),
            cost_value,
        }
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        match &self.coupling {
            Coupling::Dense(p) => p[i * self.m + j],
            Coupling::Permutation(s) => {
                if s[i] == j {
                    self.source_weights[i]
                } else {
                    0.0
                }
            }
        }
    }

    /// Nonzero entries `(i, j, mass)` in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        match &self.coupling {
            Coupling::Dense(p) => p
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| (k / self.m, k % self.m, v))
                .collect(),
            Coupling::Permutation(s) => s.iter().enumerate().map(|(i, &j)| (i, j, self.source_weights[i])).collect(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for (i, _, v) in self.entries() {
            r[i] += v;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        for (_, j, v) in self.entries() {
            c[j] += v;
        }
        c
    }

    /// Largest absolute deviation of either marginal from its weights.
    pub fn marginal_violation(&self) -> f64 {
        let r = self.row_sums().iter().zip(&self.source_weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(&self.target_weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }

    /// `-Σ π log π` over nonzero entries.
    pub fn entropy(&self) -> f64 {
        self.entries().iter().map(|&(_, _, v)| -v * v.ln()).sum()
    }

    pub fn assignment(&self) -> Option<&[usize]> {
        match &self.coupling {
            Coupling::Permutation(s) => Some(s),
            Coupling::Dense(_) => None,
        }
    }

    /// CSV triplets with header `i,j,mass`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j", "mass"]).map_err(crate::datasets::csv_err)?;
        for (i, j, v) in self.entries() {
            wr.write_record([i.to_string(), j.to_string(), format!("{v:e}")])
                .map_err(crate::datasets::csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Dual variables on the supports of the two measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DiscretePotentials {
    /// `Σ a_i φ_i + Σ b_j ψ_j`.
    pub fn dual_value(&self, a: &[f64], b: &[f64]) -> f64 {
        let x: f64 = self.phi.iter().zip(a).map(|(p, w)| p * w).sum();
        let y: f64 = self.psi.iter().zip(b).map(|(p, w)| p * w).sum();
        x + y
    }

    /// `max_ij (φ_i + ψ_j − c_ij)`, positive when the constraint is violated.
    pub fn max_violation(&self, cost: &CostMatrix) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..cost.n {
            for j in 0..cost.m {
                worst = worst.max(self.phi[i] + self.psi[j] - cost.at(i, j));
            }
        }
        worst
    }

    /// CSV with header `side,index,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["side", "index", "value"]).map_err(crate::datasets::csv_err)?;
        for (side, vals) in [("phi", &self.phi), ("psi", &self.psi)] {
            for (k, v) in vals.iter().enumerate() {
                wr.write_record([side.to_string(), k.to_string(), format!("{v:e}")])
                    .map_err(crate::datasets::csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `W_p(a, b)`: exact assignment for equal-size uniform measures, otherwise
/// Sinkhorn annealed to a small regularization.
pub fn w2_estimate(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cost: CostSpec) -> Result<f64> {
    let c = cost.matrix(a, b)?;
    let value = if a.len() == b.len() && a.is_uniform() && b.is_uniform() {
        hungarian(&c)?.total / a.len() as f64
    } else {
        let med = c.median();
        let opts = SinkhornOptions {
            epsilon: 5e-3 * med.max(f64::MIN_POSITIVE),
            max_iter: 100_000,
            tol: 1e-7,
        };
        sinkhorn(a, b, &c, &opts)?.plan.cost_value
    };
    Ok(cost.distance_from_cost(value))
}
