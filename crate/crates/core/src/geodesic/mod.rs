//! Ideal functional updates along W2 geodesics and their perturbations.

use std::f64::consts::SQRT_2;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mlp, Tensor};
use crate::datasets::{derive_seed, AffineMap, EmpiricalMeasure, Gaussian};
use crate::discrete_ot::{barycentric_map, exact_assignment, CostSpec, TransportPlan};
use crate::error::{Error, Result};

/// A transport map `T` estimated in one of three ways.
#[derive(Clone, Debug)]
pub enum MongeMapEstimate {
    ClosedFormAffine(AffineMap),
    /// `T(x) = x − ‖∇φ‖^{1/(p−1) − 1} ∇φ(x)`, which is `x − ∇φ(x)` for `p = 2`.
    FromPotential { phi: Mlp, p: u32 },
    /// Barycentric image of each source point; only defined on the source
    /// support the plan was computed for.
    DiscreteAssignment { plan: TransportPlan, target: EmpiricalMeasure },
}

impl MongeMapEstimate {
    /// `T` applied to every point of `mu`.
    pub fn apply(&self, mu: &EmpiricalMeasure) -> Result<Tensor> {
        match self {
            MongeMapEstimate::ClosedFormAffine(map) => {
                let data = (0..mu.len()).flat_map(|i| map.apply(mu.point(i))).collect();
                Tensor::matrix(mu.len(), mu.dim(), data)
            }
            MongeMapEstimate::FromPotential { phi, p } => {
                if *p < 2 {
                    return Err(Error::Validation(format!("potential maps need p ≥ 2, got {p}")));
                }
                let grad = phi.input_gradient(mu.points())?;
                let expo = 1.0 / (*p as f64 - 1.0) - 1.0;
                let d = mu.dim();
                let mut out = mu.points().clone();
                for i in 0..mu.len() {
                    let g = grad.row(i);
                    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let scale = if *p == 2 || norm == 0.0 { 1.0 } else { norm.powf(expo) };
                    for k in 0..d {
                        out.data_mut()[i * d + k] -= scale * g[k];
                    }
                }
                Ok(out)
            }
            MongeMapEstimate::DiscreteAssignment { plan, target } => {
                if plan.n != mu.len() {
                    return Err(Error::Contract(format!(
                        "plan covers {} source points, measure has {}",
                        plan.n,
                        mu.len()
                    )));
                }
                barycentric_map(plan, target)
            }
        }
    }
}

/// One ideal or perturbed step `x ↦ (1 − α) x + α T(x)`; weights unchanged.
pub fn functional_update(points: &EmpiricalMeasure, map: &MongeMapEstimate, alpha: f64) -> Result<EmpiricalMeasure> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let t = map.apply(points)?;
    let moved = points.points().zip_map(&t, |x, y| (1.0 - alpha) * x + alpha * y);
    points.with_points(moved)
}

/// Pushforward of `src` through `(1 − t) I + t T`.
pub fn geodesic_point(src: &EmpiricalMeasure, map: &MongeMapEstimate, t: f64) -> Result<EmpiricalMeasure> {
    functional_update(src, map, t)
}

/// Closed-form geodesic point between two Gaussians.
pub fn gaussian_geodesic_point(src: &Gaussian, tgt: &Gaussian, t: f64) -> Result<Gaussian> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Validation(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(src.pushforward(&crate::datasets::monge_map(src, tgt)?.interpolate(t)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicRow {
    pub t: usize,
    pub w2: f64,
    pub f_t: Option<f64>,
    pub deviation: Option<f64>,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeodesicTrace {
    pub rows: Vec<GeodesicRow>,
}

impl GeodesicTrace {
    /// Consecutive ratios `w2(t + 1) / w2(t)`.
    pub fn decay_ratios(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[1].w2 / w[0].w2).collect()
    }

    /// CSV with header `t,w2,f_t,deviation,bound`; absent values are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "w2", "f_t", "deviation", "bound"])
            .map_err(crate::datasets::csv_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        for r in &self.rows {
            wr.write_record([r.t.to_string(), format!("{:e}", r.w2), opt(r.f_t), opt(r.deviation), opt(r.bound)])
                .map_err(crate::datasets::csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Exact iterates of the ideal update between Gaussians.
#[derive(Clone, Debug)]
pub struct IdealDescent {
    pub trace: GeodesicTrace,
    /// `μ_0, …, μ_steps`.
    pub measures: Vec<Gaussian>,
    /// Per-step maps `H_{t,t+1} = (1 − α) I + α T_t`.
    pub step_maps: Vec<AffineMap>,
    /// Monge map from `μ_0` to the target.
    pub initial_map: AffineMap,
}

/// Runs `steps` ideal updates from `src` toward `tgt`, each recomputing the
/// Monge map from the current iterate.
pub fn simulate_ideal_descent(src: &Gaussian, tgt: &Gaussian, alpha: f64, steps: usize) -> Result<IdealDescent> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let initial_map = crate::datasets::monge_map(src, tgt)?;
    let w0 = crate::datasets::gaussian_w2_closed(src, tgt)?;
    let mut measures = vec![src.clone()];
    let mut step_maps = Vec::with_capacity(steps);
    let mut rows = vec![GeodesicRow {
        t: 0,
        w2: w0,
        f_t: (w0 > 0.0).then_some(1.0),
        deviation: None,
        bound: None,
    }];
    for t in 1..=steps {
        let cur = measures.last().expect("nonempty");
        let h = crate::datasets::monge_map(cur, tgt)?.interpolate(alpha);
        let next = cur.pushforward(&h);
        let w = crate::datasets::gaussian_w2_closed(&next, tgt)?;
        rows.push(GeodesicRow {
            t,
            w2: w,
            f_t: (w0 > 0.0).then(|| w / w0),
            deviation: None,
            bound: None,
        });
        step_maps.push(h);
        measures.push(next);
    }
    Ok(IdealDescent {
        trace: GeodesicTrace { rows },
        measures,
        step_maps,
        initial_map,
    })
}

/// Composition of per-step maps compared with the direct Monge map.
#[derive(Clone, Debug)]
pub struct CompositionCheck {
    pub composed: AffineMap,
    pub direct: AffineMap,
    /// `f(k) I + (1 − f(k)) T` with `T` the map from `μ_0` to the target.
    pub predicted: AffineMap,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Composes `H_{k−1,k} ∘ … ∘ H_{0,1}` and compares it with the Monge map
/// from `μ_0` to `μ_k`.
pub fn composition_check(descent: &IdealDescent, tol: f64) -> Result<CompositionCheck> {
    let d = descent.initial_map.offset.len();
    let composed = descent
        .step_maps
        .iter()
        .fold(AffineMap::identity(d), |acc, h| h.compose(&acc));
    let k = descent.step_maps.len();
    let direct = crate::datasets::monge_map(&descent.measures[0], &descent.measures[k])?;
    let f = descent.trace.rows[k].f_t.unwrap_or(0.0);
    let predicted = descent.initial_map.interpolate(1.0 - f);
    let max_abs_diff = composed.max_abs_diff(&direct).max(composed.max_abs_diff(&predicted));
    Ok(CompositionCheck {
        passed: max_abs_diff <= tol,
        composed,
        direct,
        predicted,
        max_abs_diff,
    })
}

/// `μ_t = [e^{−t} I + (1 − e^{−t}) T]#μ_0` and `W2(μ_t, tgt)`.
pub fn gradient_flow_point(src: &Gaussian, tgt: &Gaussian, t: f64) -> Result<(Gaussian, f64)> {
    if !(t >= 0.0) {
        return Err(Error::Validation(format!("time must be nonnegative, got {t}")));
    }
    let map = crate::datasets::monge_map(src, tgt)?.interpolate(1.0 - (-t).exp());
    let mu = src.pushforward(&map);
    let w = crate::datasets::gaussian_w2_closed(&mu, tgt)?;
    Ok((mu, w))
}

/// Smooth perturbation `g(x) = ε √e Σ_k w_k s exp(−‖x − c_k‖² / (2 s²))`
/// with `Σ |w_k| = 1`, so that `‖∇g‖ ≤ ε` everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpPerturbation {
    pub epsilon: f64,
    pub width: f64,
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl BumpPerturbation {
    pub fn random(epsilon: f64, width: f64, around: &Gaussian, bumps: usize, rng: &mut impl Rng) -> Result<Self> {
        let l = around.cholesky()?;
        let m = around.mean_vec();
        let d = around.dim();
        let centers = (0..bumps)
            .map(|_| {
                let z = nalgebra::DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (&m + &l * z).iter().copied().collect()
            })
            .collect();
        let raw: Vec<f64> = (0..bumps).map(|_| rng.random_range(-1.0..1.0)).collect();
        let total: f64 = raw.iter().map(|w| w.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        Ok(Self {
            epsilon,
            width,
            centers,
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.width;
        let mut g = vec![0.0; x.len()];
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            let e = (-r2 / (2.0 * s * s)).exp();
            for k in 0..x.len() {
                g[k] -= self.epsilon * 0.5f64.exp() * w * e * (x[k] - c[k]) / s;
            }
        }
        g
    }

    /// Analytic bound on `‖∇g‖`.
    pub fn gradient_bound(&self) -> f64 {
        self.epsilon * self.weights.iter().map(|w| w.abs()).sum::<f64>()
    }
}

/// Update error `ΔG(x) = ε′ (cos(a·x + b), sin(a·x + b))` with `‖ΔG‖ = ε′`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateError {
    pub epsilon_prime: f64,
    pub freq: Vec<f64>,
    pub phase: f64,
}

impl UpdateError {
    pub fn random(epsilon_prime: f64, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            epsilon_prime,
            freq: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    pub fn at(&self, x: &[f64]) -> Vec<f64> {
        let a: f64 = x.iter().zip(&self.freq).map(|(u, v)| u * v).sum::<f64>() + self.phase;
        let mut out = vec![0.0; x.len()];
        out[0] = self.epsilon_prime * a.cos();
        if x.len() > 1 {
            out[1] = self.epsilon_prime * a.sin();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub epsilon: f64,
    pub epsilon_prime: f64,
    pub alpha: f64,
    /// Empirical W2 between the ideal and the perturbed one-step pushforwards,
    /// with cost `‖x − y‖²/2`.
    pub measured_w2_deviation: f64,
    /// `(α ε + ε′) / √2`.
    pub bound: f64,
    /// Bootstrap standard deviation of the measurement.
    pub sampling_sigma: f64,
}

impl DeviationReport {
    pub fn within(&self, sigmas: f64) -> bool {
        self.measured_w2_deviation <= self.bound + sigmas * self.sampling_sigma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationOptions {
    pub n: usize,
    pub bumps: usize,
    pub bump_width: f64,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for DeviationOptions {
    fn default() -> Self {
        Self {
            n: 2000,
            bumps: 4,
            bump_width: 0.5,
            bootstrap: 200,
            seed: 0,
        }
    }
}

/// One ideal step `x − α ∇φ̃(x)` against the perturbed step
/// `x − α (∇φ̃ + ∇g)(x) + ΔG(x)` on `n` samples from `src`, where
/// `∇φ̃ = I − T` for the closed-form map `T` to `tgt`.
///
/// The two clouds are compared by exact assignment; σ comes from a
/// bootstrap over the matched pairs.
pub fn deviation_experiment(
    src: &Gaussian,
    tgt: &Gaussian,
    epsilon: f64,
    epsilon_prime: f64,
    alpha: f64,
    opts: &DeviationOptions,
) -> Result<DeviationReport> {
    if !(epsilon >= 0.0 && epsilon_prime >= 0.0) {
        return Err(Error::Validation("perturbation sizes must be nonnegative".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let map = crate::datasets::monge_map(src, tgt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0));
    let bump = BumpPerturbation::random(epsilon, opts.bump_width, src, opts.bumps, &mut rng)?;
    let upd = UpdateError::random(epsilon_prime, src.dim(), &mut rng);
    let spec = crate::datasets::MeasureSpec::gaussian(src.clone(), derive_seed(opts.seed, 1));
    let mu = crate::datasets::sample(&spec, opts.n)?;
    let ideal = mu.map_points(|_, x| {
        let t = map.apply(x);
        x.iter().zip(&t).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect()
    })?;
    let perturbed = ideal.map_points(|i, y| {
        let x = mu.point(i);
        let gg = bump.gradient(x);
        let dg = upd.at(x);
        y.iter().zip(gg.iter().zip(&dg)).map(|(v, (a, b))| v - alpha * a + b).collect()
    })?;
    let cost = CostSpec::default();
    let (plan, _) = exact_assignment(&ideal, &perturbed, cost)?;
    let sigma = plan.assignment().expect("permutation plan").to_vec();
    let pair_costs: Vec<f64> = sigma
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.eval(ideal.point(i), perturbed.point(j)))
        .collect();
    let measured = plan.cost_value.max(0.0).sqrt();
    let n = pair_costs.len();
    let mut boot = Vec::with_capacity(opts.bootstrap);
    for _ in 0..opts.bootstrap {
        let s: f64 = (0..n).map(|_| pair_costs[rng.random_range(0..n)]).sum();
        boot.push((s / n as f64).sqrt());
    }
    let mean = boot.iter().sum::<f64>() / boot.len().max(1) as f64;
    let var = boot.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boot.len().max(2) - 1) as f64;
    Ok(DeviationReport {
        epsilon: bump.gradient_bound(),
        epsilon_prime,
        alpha,
        measured_w2_deviation: measured,
        bound: (alpha * bump.gradient_bound() + epsilon_prime) / SQRT_2,
        sampling_sigma: var.sqrt(),
    })
}

#[cfg(test)]
mod tests;
