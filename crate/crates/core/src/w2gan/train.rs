use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::losses::{
    disc_objective, gen_objective, interpolate, interpolate_pairs, wgan_objective, LossBreakdown, Pairing,
    PenaltyWeights, WganVariant,
};
use super::nets::{GeneratorNet, Parameterization, PotentialPair};
use crate::autodiff::{Direction, Graph, Mlp, MlpSpec, Mode, OptimizerKind, OptimizerState, Tensor};
use crate::datasets::{derive_seed, sample, EmpiricalMeasure, MeasureSpec};
use crate::discrete_ot::{w2_estimate, CostSpec};
use crate::error::{Error, Result};

/// Hyperparameters of one adversarial training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda_ineq: f64,
    pub lambda_eq: f64,
    pub lambda_eps: f64,
    pub lambda_gp: f64,
    pub alpha_gen: f64,
    pub alpha_disc: f64,
    pub n_critic: usize,
    /// Decay both learning rates linearly to zero over the run.
    pub lr_decay: bool,
    pub batch: usize,
    pub iterations: usize,
    pub interpolated_sampling: bool,
    pub pairing: Pairing,
    pub parameterization: Parameterization,
    pub gen_optimizer: OptimizerKind,
    pub disc_optimizer: OptimizerKind,
    /// Size of the fixed training pools drawn from each measure.
    pub n_train: usize,
    /// Iterations between W2 estimates (0 disables intermediate ones).
    pub eval_every: usize,
    /// Iterations between generator checkpoints (0 disables them).
    pub checkpoint_every: usize,
    /// Scale of the generator's final-layer weights at initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_ineq: 200.0,
            lambda_eq: 0.0,
            lambda_eps: 0.0,
            lambda_gp: 10.0,
            alpha_gen: 5e-5,
            alpha_disc: 5e-5,
            n_critic: 10,
            lr_decay: false,
            batch: 256,
            iterations: 1000,
            interpolated_sampling: false,
            pairing: Pairing::AllPairs,
            parameterization: Parameterization::Direct,
            gen_optimizer: OptimizerKind::adam(0.5, 0.999),
            disc_optimizer: OptimizerKind::adam(0.5, 0.999),
            n_train: 1024,
            eval_every: 100,
            checkpoint_every: 100,
            init_scale: 1e-3,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_ineq, self.lambda_eq, self.lambda_eps, self.lambda_gp];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Validation("penalty weights must be finite and nonnegative".into()));
        }
        if self.n_critic == 0 {
            return Err(Error::Validation("n_critic must be at least 1".into()));
        }
        if self.batch == 0 || self.n_train == 0 {
            return Err(Error::Validation("batch and n_train must be positive".into()));
        }
        for (name, lr) in [("alpha_gen", self.alpha_gen), ("alpha_disc", self.alpha_disc)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn penalty_weights(&self) -> PenaltyWeights {
        PenaltyWeights {
            lambda_ineq: self.lambda_ineq,
            lambda_eq: self.lambda_eq,
            lambda_eps: self.lambda_eps,
            pairing: self.pairing,
        }
    }
}

/// Discriminator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    W2gan,
    WganGp,
    WganLp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::W2gan => "w2gan",
            Method::WganGp => "wgan-gp",
            Method::WganLp => "wgan-lp",
        }
    }
}

/// One logged training iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub l_ot: f64,
    pub l_ineq: f64,
    pub l_eq: f64,
    pub l_eps: f64,
    /// W2 between the first 1024 generated and target pool points, when evaluated.
    pub w2_estimate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn w2_series(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.w2_estimate.map(|w| (r.iteration, w))).collect()
    }

    /// Last W2 estimate divided by the first.
    pub fn w2_ratio(&self) -> Option<f64> {
        let s = self.w2_series();
        match (s.first(), s.last()) {
            (Some(a), Some(b)) if a.1 > 0.0 => Some(b.1 / a.1),
            _ => None,
        }
    }

    /// CSV with header `iteration,l_ot,l_ineq,l_eq,l_eps,w2_estimate`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "l_ot", "l_ineq", "l_eq", "l_eps", "w2_estimate"])
            .map_err(crate::datasets::csv_err)?;
        for r in &self.rows {
            wr.write_record([
                r.iteration.to_string(),
                format!("{:e}", r.l_ot),
                format!("{:e}", r.l_ineq),
                format!("{:e}", r.l_eq),
                format!("{:e}", r.l_eps),
                r.w2_estimate.map_or(String::new(), |w| format!("{w:e}")),
            ])
            .map_err(crate::datasets::csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// Training stopped; the generator was restored from the last checkpoint.
    Diverged { iteration: usize, reason: String },
}

#[derive(Clone, Debug)]
pub enum Critic {
    Pair(PotentialPair),
    Single(Mlp),
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub generator: GeneratorNet,
    pub critic: Critic,
    pub trace: TrainingTrace,
    pub checkpoints: Vec<Checkpoint>,
    pub status: TrainStatus,
    pub src_pool: EmpiricalMeasure,
    pub tgt_pool: EmpiricalMeasure,
}

impl TrainOutput {
    pub fn potentials(&self) -> Option<&PotentialPair> {
        match &self.critic {
            Critic::Pair(p) => Some(p),
            Critic::Single(_) => None,
        }
    }
}

const DIVERGENCE_LIMIT: f64 = 1e6;
/// Pool points used for the W2 estimates in the trace.
const TRACE_POINTS: usize = 1024;

/// Fixed training pools for a source/target pair.
pub fn training_pools(cfg: &TrainingConfig, src: &MeasureSpec, tgt: &MeasureSpec) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    Ok((sample(src, cfg.n_train)?, sample(tgt, cfg.n_train)?))
}

/// Trains a W2GAN generator from `src` toward `tgt`.
pub fn train(cfg: &TrainingConfig, src: &MeasureSpec, tgt: &MeasureSpec) -> Result<TrainOutput> {
    train_method(cfg, Method::W2gan, src, tgt)
}

/// Adversarial training with the chosen discriminator family. The
/// discriminator ascends its objective and the generator descends its own.
pub fn train_method(cfg: &TrainingConfig, method: Method, src: &MeasureSpec, tgt: &MeasureSpec) -> Result<TrainOutput> {
    cfg.validate()?;
    if src.dim() != tgt.dim() {
        return Err(Error::Contract(format!("source dimension {} differs from target {}", src.dim(), tgt.dim())));
    }
    let (src_pool, tgt_pool) = training_pools(cfg, src, tgt)?;
    train_on_pools(cfg, method, src_pool, tgt_pool)
}

/// Training loop on explicit pools.
pub fn train_on_pools(
    cfg: &TrainingConfig,
    method: Method,
    src_pool: EmpiricalMeasure,
    tgt_pool: EmpiricalMeasure,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let d = src_pool.dim();
    if tgt_pool.dim() != d {
        return Err(Error::Contract("pools have different dimensions".into()));
    }
    let mut gen = GeneratorNet::identity_init(MlpSpec::generator(d, derive_seed(cfg.seed, 10)), cfg.init_scale)?;
    let pot_spec = MlpSpec::potential(d, 0);
    let mut critic = match method {
        Method::W2gan => Critic::Pair(PotentialPair::new(pot_spec, cfg.parameterization, derive_seed(cfg.seed, 11))?),
        Method::WganGp | Method::WganLp => Critic::Single(Mlp::new(MlpSpec {
            seed: derive_seed(cfg.seed, 12),
            ..pot_spec
        })?),
    };
    let mut gen_opt = OptimizerState::new(cfg.gen_optimizer, cfg.alpha_gen, Direction::Descent)?;
    let mut disc_opt = OptimizerState::new(cfg.disc_optimizer, cfg.alpha_disc, Direction::Ascent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 13));
    let weights = cfg.penalty_weights();
    let (n_src, n_tgt) = (src_pool.len(), tgt_pool.len());
    let bsz = cfg.batch;

    let (src_probe, tgt_probe) = (head(&src_pool, TRACE_POINTS)?, head(&tgt_pool, TRACE_POINTS)?);
    let w2_now = |gen: &GeneratorNet| -> Result<f64> {
        let moved = src_probe.with_points(gen.eval(src_probe.points())?)?;
        w2_estimate(&moved, &tgt_probe, CostSpec::default())
    };

    let mut trace = TrainingTrace::default();
    let mut checkpoints = vec![Checkpoint::from_generator(&gen, 0)];
    trace.rows.push(TraceRow {
        iteration: 0,
        l_ot: 0.0,
        l_ineq: 0.0,
        l_eq: 0.0,
        l_eps: 0.0,
        w2_estimate: Some(w2_now(&gen)?),
    });
    let mut status = TrainStatus::Completed;

    'outer: for it in 1..=cfg.iterations {
        if cfg.lr_decay {
            let f = 1.0 - (it - 1) as f64 / cfg.iterations as f64;
            gen_opt.learning_rate = cfg.alpha_gen * f;
            disc_opt.learning_rate = cfg.alpha_disc * f;
        }
        let mut last = LossBreakdown::default();
        for _ in 0..cfg.n_critic {
            let z = batch_from(&src_pool, n_src, bsz, &mut rng)?;
            let x = batch_from(&tgt_pool, n_tgt, bsz, &mut rng)?;
            let gz = generate_train_mode(&gen, &z)?;
            let mut g = Graph::new();
            let step = match &mut critic {
                Critic::Pair(pp) => {
                    let interp = if cfg.interpolated_sampling {
                        Some(interpolate_pairs(&gz, &x, &mut rng)?)
                    } else {
                        None
                    };
                    let gzi = g.input(gz)?;
                    let xi = g.input(x)?;
                    let it_nodes = match interp {
                        Some((a, c)) => Some((g.constant(a)?, g.constant(c)?)),
                        None => None,
                    };
                    let mut b = pp.bind(&mut g)?;
                    let nodes = disc_objective(&mut g, pp, &mut b, gzi, xi, it_nodes, &weights)?;
                    last = nodes.breakdown(&g);
                    check_loss(&last, it).map(|_| {
                        let grads = g.backward_scalar(nodes.total)?;
                        let gr = pp.gradients(&grads, &b);
                        disc_opt.apply(pp.params_mut(), &gr)
                    })
                }
                Critic::Single(f) => {
                    let eps: Vec<f64> = (0..bsz).map(|_| rng.random::<f64>()).collect();
                    let xhat = interpolate(&gz, &x, &eps)?;
                    let gzi = g.constant(gz)?;
                    let xi = g.constant(x)?;
                    let hi = g.input(xhat)?;
                    let mut b = f.bind(&mut g)?;
                    let variant = if method == Method::WganGp { WganVariant::Gp } else { WganVariant::Lp };
                    let (total, l_w, pen) = wgan_objective(&mut g, f, &mut b, gzi, xi, hi, variant, cfg.lambda_gp)?;
                    last = LossBreakdown {
                        l_ot: g.value(l_w).data()[0],
                        l_ineq: g.value(pen).data()[0],
                        l_eq: 0.0,
                        l_eps: 0.0,
                        total: g.value(total).data()[0],
                    };
                    check_loss(&last, it).map(|_| {
                        let grads = g.backward_scalar(total)?;
                        let gr = f.gradients(&grads, &b);
                        disc_opt.apply(f.params_mut(), &gr)
                    })
                }
            };
            match step {
                Ok(Ok(())) => {}
                Ok(Err(e)) | Err(e) if e.is_numerical() => {
                    status = diverged(it, e);
                    break 'outer;
                }
                Ok(Err(e)) | Err(e) => return Err(e),
            }
        }

        let z = batch_from(&src_pool, n_src, bsz, &mut rng)?;
        let mut g = Graph::new();
        let zi = g.constant(z)?;
        let gen_step = (|| -> Result<()> {
            let (loss, gb) = match &critic {
                Critic::Pair(pp) => gen_objective(&mut g, pp, &gen, zi, Mode::Train)?,
                Critic::Single(f) => {
                    let mut gb = gen.bind(&mut g)?;
                    let gz = gen.forward(&mut g, &mut gb, zi, Mode::Train)?;
                    let mut fb = f.bind_frozen(&mut g)?;
                    let fz = f.forward(&mut g, &mut fb, gz, Mode::Eval)?;
                    let m = g.mean(fz)?;
                    (g.neg(m)?, gb)
                }
            };
            let v = g.value(loss).data()[0];
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence(format!("generator loss {v:e}")));
            }
            let grads = g.backward_scalar(loss)?;
            let gr = gen.gradients(&grads, &gb);
            gen.commit_batch_stats(&gb, bsz);
            gen_opt.apply(gen.params_mut(), &gr)
        })();
        if let Err(e) = gen_step {
            if e.is_numerical() {
                status = diverged(it, e);
                break;
            }
            return Err(e);
        }

        let evaluate = it == cfg.iterations || (cfg.eval_every > 0 && it % cfg.eval_every == 0);
        let w2 = if evaluate { Some(w2_now(&gen)?) } else { None };
        trace.rows.push(TraceRow {
            iteration: it,
            l_ot: last.l_ot,
            l_ineq: last.l_ineq,
            l_eq: last.l_eq,
            l_eps: last.l_eps,
            w2_estimate: w2,
        });
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            checkpoints.push(Checkpoint::from_generator(&gen, it));
        }
    }
    if let TrainStatus::Diverged { .. } = status {
        let ck = checkpoints.last().expect("initial checkpoint exists");
        ck.restore_generator(&mut gen)?;
    }
    Ok(TrainOutput {
        generator: gen,
        critic,
        trace,
        checkpoints,
        status,
        src_pool,
        tgt_pool,
    })
}

/// Fits (φ, ψ) between two fixed pools with `steps` ascent steps and no
/// generator. Then `x − ∇φ(x)` estimates the map from `src_pool`.
pub fn fit_potentials(
    cfg: &TrainingConfig,
    src_pool: &EmpiricalMeasure,
    tgt_pool: &EmpiricalMeasure,
    steps: usize,
) -> Result<PotentialPair> {
    cfg.validate()?;
    let d = src_pool.dim();
    if tgt_pool.dim() != d {
        return Err(Error::Contract("pools have different dimensions".into()));
    }
    let mut pp = PotentialPair::new(MlpSpec::potential(d, 0), cfg.parameterization, derive_seed(cfg.seed, 11))?;
    let mut opt = OptimizerState::new(cfg.disc_optimizer, cfg.alpha_disc, Direction::Ascent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 14));
    let weights = cfg.penalty_weights();
    for it in 1..=steps {
        let z = batch_from(src_pool, src_pool.len(), cfg.batch, &mut rng)?;
        let x = batch_from(tgt_pool, tgt_pool.len(), cfg.batch, &mut rng)?;
        let mut g = Graph::new();
        let zi = g.input(z)?;
        let xi = g.input(x)?;
        let mut b = pp.bind(&mut g)?;
        let nodes = disc_objective(&mut g, &pp, &mut b, zi, xi, None, &weights)?;
        check_loss(&nodes.breakdown(&g), it)?;
        let grads = g.backward_scalar(nodes.total)?;
        let gr = pp.gradients(&grads, &b);
        opt.apply(pp.params_mut(), &gr)?;
    }
    Ok(pp)
}

fn diverged(it: usize, e: Error) -> TrainStatus {
    TrainStatus::Diverged {
        iteration: it,
        reason: e.to_string(),
    }
}

fn check_loss(l: &LossBreakdown, it: usize) -> Result<()> {
    if !l.is_finite() || l.total.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Divergence(format!("discriminator loss {l:?} at iteration {it}")));
    }
    Ok(())
}

/// First `k` points of a pool, reweighted uniformly.
fn head(pool: &EmpiricalMeasure, k: usize) -> Result<EmpiricalMeasure> {
    let k = k.min(pool.len());
    let d = pool.dim();
    EmpiricalMeasure::uniform(Tensor::matrix(k, d, pool.points().data()[..k * d].to_vec())?)
}

/// Rows drawn with replacement from a pool.
fn batch_from(pool: &EmpiricalMeasure, n: usize, b: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let d = pool.dim();
    let mut data = Vec::with_capacity(b * d);
    for _ in 0..b {
        data.extend_from_slice(pool.point(rng.random_range(0..n)));
    }
    Tensor::matrix(b, d, data)
}

/// `G(z)` with batch statistics, without touching the running averages.
fn generate_train_mode(gen: &GeneratorNet, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let zi = g.constant(z.clone())?;
    let mut b = gen.bind_frozen(&mut g)?;
    let out = gen.forward(&mut g, &mut b, zi, Mode::Train)?;
    Ok(g.value(out).clone())
}
