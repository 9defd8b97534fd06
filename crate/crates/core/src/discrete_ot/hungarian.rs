use super::{CostMatrix, CostSpec, Coupling, DiscretePotentials, TransportPlan};
use crate::datasets::EmpiricalMeasure;
use crate::error::{Error, Result};

/// Optimal assignment of rows to distinct columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Row `i` is matched to column `sigma[i]`.
    pub sigma: Vec<usize>,
    /// `Σ_i c(i, σ(i))`.
    pub total: f64,
    /// Feasible duals with `u_i + v_j ≤ c_ij`, tight on the matching.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Shortest augmenting path with row/column potentials, `O(n² m)` for
/// `n ≤ m`.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    solve(cost, cost.n == cost.m && cost.n >= WARM_FROM)
}

/// With `warm`, column duals start from auction prices instead of column
/// minima so that most rows are matched before the path search.
pub(crate) fn solve(cost: &CostMatrix, warm: bool) -> Result<Assignment> {
    let (n, m) = (cost.n, cost.m);
    if n == 0 || n > m {
        return Err(Error::Contract(format!("assignment needs 0 < rows ≤ cols, got {n}×{m}")));
    }
    if let Some(k) = cost.data.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("cost matrix entry ({}, {})", k / m, k % m)));
    }
    // 1-based internally; column 0 is a virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    // column and row reduction, then a greedy matching on tight edges; the
    // remaining rows go through the shortest augmenting path search
    if warm && n == m {
        v[1..].copy_from_slice(&auction_prices(cost));
    } else if n == m {
        for j in 1..=m {
            v[j] = (0..n).map(|i| cost.at(i, j - 1)).fold(f64::INFINITY, f64::min);
        }
    }
    let mut free = Vec::new();
    for i in 1..=n {
        let row = cost.row(i - 1);
        let (mut best, mut arg) = (f64::INFINITY, 0);
        for j in 1..=m {
            let r = row[j - 1] - v[j];
            if r < best {
                best = r;
                arg = j;
            }
        }
        u[i] = best;
        if p[arg] == 0 {
            p[arg] = i;
        } else {
            free.push(i);
        }
    }
    let mut dist = vec![f64::INFINITY; m + 1];
    let mut todo: Vec<usize> = Vec::with_capacity(m);
    let mut scanned: Vec<usize> = Vec::with_capacity(m + 1);
    for i in free {
        // Dijkstra over columns in reduced costs; potentials are updated once
        // the path to a free column is found
        p[0] = i;
        dist.fill(f64::INFINITY);
        dist[0] = 0.0;
        todo.clear();
        todo.extend(1..=m);
        scanned.clear();
        let mut j0 = 0;
        loop {
            scanned.push(j0);
            let i0 = p[j0];
            let row = cost.row(i0 - 1);
            let base = dist[j0] - u[i0];
            let mut delta = f64::INFINITY;
            let mut pos = 0;
            for (k, &j) in todo.iter().enumerate() {
                let cur = base + row[j - 1] - v[j];
                if cur < dist[j] {
                    dist[j] = cur;
                    way[j] = j0;
                }
                if dist[j] < delta {
                    delta = dist[j];
                    pos = k;
                }
            }
            j0 = todo.swap_remove(pos);
            if p[j0] == 0 {
                break;
            }
        }
        let reach = dist[j0];
        for &j in &scanned {
            let shift = reach - dist[j];
            u[p[j]] += shift;
            v[j] -= shift;
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            sigma[p[j] - 1] = j - 1;
        }
    }
    let total = sigma.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum();
    Ok(Assignment {
        sigma,
        total,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    })
}

const WARM_FROM: usize = 256;

/// Column prices from an ε-scaling auction (Gauss-Seidel bids, minimization
/// form). Reduced costs `c_ij − v_j` then have each row's final partner
/// within `n·ε` of its row minimum.
pub(crate) fn auction_prices(cost: &CostMatrix) -> Vec<f64> {
    let n = cost.n;
    let scale = cost.data.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let mut v = vec![0.0; n];
    if scale == 0.0 {
        return v;
    }
    let mut eps = scale / 4.0;
    let end = scale * 1e-9;
    let mut owner = vec![usize::MAX; n];
    loop {
        owner.fill(usize::MAX);
        let mut free: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = free.pop() {
            let row = cost.row(i);
            let (mut r1, mut r2, mut j1) = (f64::INFINITY, f64::INFINITY, 0);
            for j in 0..n {
                let r = row[j] - v[j];
                if r < r1 {
                    r2 = r1;
                    r1 = r;
                    j1 = j;
                } else if r < r2 {
                    r2 = r;
                }
            }
            let gap = if r2.is_finite() { r2 - r1 } else { 0.0 };
            v[j1] -= gap + eps;
            if owner[j1] != usize::MAX {
                free.push(owner[j1]);
            }
            owner[j1] = i;
        }
        if eps <= end {
            return v;
        }
        eps = (eps / 5.0).max(end);
    }
}

/// Exact OT between equal-size uniform measures as a permutation plan, with
/// duals scaled so that `Σ a φ + Σ b ψ` equals the plan cost.
pub fn exact_assignment(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cost: CostSpec,
) -> Result<(TransportPlan, DiscretePotentials)> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "exact assignment needs equal counts, got {} and {}; use sinkhorn",
            a.len(),
            b.len()
        )));
    }
    if !a.is_uniform() || !b.is_uniform() {
        return Err(Error::Contract("exact assignment needs uniform weights; use sinkhorn".into()));
    }
    let c = cost.matrix(a, b)?;
    let asg = hungarian(&c)?;
    let n = a.len() as f64;
    let plan = TransportPlan {
        n: a.len(),
        m: b.len(),
        coupling: Coupling::Permutation(asg.sigma),
        source_weights: a.weights().to_vec(),
        target_weights: b.weights().to_vec(),
        cost_value: asg.total / n,
    };
    Ok((plan, DiscretePotentials { phi: asg.u, psi: asg.v }))
}

/// Exhaustive search over all permutations (Heap's algorithm); `n ≤ 10`.
pub fn brute_force_assignment(cost: &CostMatrix) -> Result<(Vec<usize>, f64)> {
    let n = cost.n;
    if n != cost.m || n == 0 || n > 10 {
        return Err(Error::Contract(format!("brute force needs a square matrix with 1..=10 rows, got {n}×{}", cost.m)));
    }
    let total = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum::<f64>();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), total(&perm));
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total(&perm);
            if t < best.1 {
                best = (perm.clone(), t);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}
