use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use monge_core::datasets::{derive_seed, gaussian_w2_closed, sample, EmpiricalMeasure, Gaussian, MeasureSpec};
use monge_core::discrete_ot::{
    brute_force_assignment, hungarian, sinkhorn, CostMatrix, CostSpec, DiscretePotentials, SinkhornOptions,
};
use monge_core::eval::{cell_dir, run_experiment, try_run_cell, CellReport, MethodKind, Problem};
use monge_core::geodesic::{
    deviation_experiment, gaussian_geodesic_point, gradient_flow_point, simulate_ideal_descent, DeviationOptions,
};
use monge_core::w2gan::{train_method, Method, Parameterization, Pairing};
use monge_core::{Error, Result};
use serde::Serialize;

use crate::args::{AnalyzeArgs, Analysis, BaselineArgs, BaselineMethod, CommonArgs, ExperimentArgs, PairingArg, TrainArgs};
use crate::config::CliConfig;

/// Config file merged with the flags, flags winning.
pub fn resolve(common: &CommonArgs) -> Result<CliConfig> {
    let mut cfg = CliConfig::load(common.config.as_deref())?;
    let t = &mut cfg.training;
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut t.iterations, common.iterations);
    set(&mut t.n_critic, common.n_critic);
    set(&mut t.batch, common.batch);
    set(&mut t.n_train, common.n_train);
    set(&mut t.eval_every, common.eval_every);
    set(&mut t.checkpoint_every, common.checkpoint_every);
    set(&mut cfg.experiment.n_eval, common.n_eval);
    let setf = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    setf(&mut t.alpha_gen, common.lr);
    setf(&mut t.alpha_disc, common.lr);
    setf(&mut t.alpha_gen, common.alpha_gen);
    setf(&mut t.alpha_disc, common.alpha_disc);
    setf(&mut t.lambda_ineq, common.lambda_ineq);
    setf(&mut t.lambda_eq, common.lambda_eq);
    setf(&mut t.lambda_eps, common.lambda_eps);
    setf(&mut t.lambda_gp, common.lambda_gp);
    if let Some(s) = common.seed {
        t.seed = s;
    }
    if let Some(p) = common.pairing {
        t.pairing = match p {
            PairingArg::AllPairs => Pairing::AllPairs,
            PairingArg::Diagonal => Pairing::Diagonal,
        };
    }
    if common.epsilon_reparam {
        t.parameterization = Parameterization::EpsilonReparam;
    }
    t.interpolated_sampling |= common.interpolated;
    t.lr_decay |= common.lr_decay;
    if let Some(d) = &common.dataset {
        if d != "all" {
            cfg.dataset = Some(Problem::parse(d)?);
        }
    }
    cfg.training.validate()?;
    Ok(cfg)
}

fn require_dataset(cfg: &CliConfig) -> Result<Problem> {
    cfg.dataset
        .ok_or_else(|| Error::Validation("missing --dataset (or \"dataset\" in the config)".into()))
}

fn print_cell(cell: &CellReport) {
    let r = cell.report.as_ref();
    println!(
        "{} {} seed {}: {} cost_ratio={} marginal_w2={} initial_w2={}",
        cell.method,
        cell.dataset,
        cell.seed,
        cell.status,
        r.map_or("-".into(), |r| format!("{:.4}", r.cost_ratio_vs_hungarian)),
        r.map_or("-".into(), |r| format!("{:.4}", r.marginal_w2)),
        r.map_or("-".into(), |r| format!("{:.4}", r.initial_w2)),
    );
    if let Some(e) = &cell.error {
        eprintln!("{e}");
    }
}

/// Exit status of a cell: diverged training is a numerical failure.
fn cell_status(cell: &CellReport) -> i32 {
    if cell.status == "diverged" {
        3
    } else {
        0
    }
}

fn run_adversarial(common: &CommonArgs, method: MethodKind) -> Result<i32> {
    let cfg = resolve(common)?;
    let dataset = require_dataset(&cfg)?;
    let seed = cfg.training.seed;
    let root = cfg.out_root(common.out.as_deref());
    let mut ecfg = cfg.experiment(dataset, root.clone());
    ecfg.write_checkpoints = true;
    let dir = cell_dir(&root, dataset, method, seed);
    if cfg.training.iterations == 0 {
        let m = match method {
            MethodKind::WganGp => Method::WganGp,
            MethodKind::WganLp => Method::WganLp,
            _ => Method::W2gan,
        };
        let [s, t, _, _] = ecfg.specs(seed);
        let out = train_method(&ecfg.training, m, &s, &t)?;
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck)?;
        fs::write(ck.join("iter000000.json"), out.checkpoints[0].to_json()?)?;
        println!("wrote {}", ck.join("iter000000.json").display());
        return Ok(0);
    }
    let cell = try_run_cell(&ecfg, method, seed)?;
    print_cell(&cell);
    println!("wrote {}", dir.display());
    Ok(cell_status(&cell))
}

pub fn train(args: &TrainArgs) -> Result<i32> {
    run_adversarial(&args.common, MethodKind::W2gan)
}

#[derive(Serialize)]
struct SolverSummary {
    method: &'static str,
    dataset: &'static str,
    n: usize,
    seed: u64,
    /// Mean cost per source point.
    cost: f64,
    w2: f64,
    epsilon: Option<f64>,
    iterations: Option<usize>,
    marginal_violation: Option<f64>,
}

fn write_assignment(path: &Path, sigma: &[usize], cost: &CostMatrix) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "i,j,cost")?;
    for (i, &j) in sigma.iter().enumerate() {
        writeln!(w, "{i},{j},{:e}", cost.at(i, j))?;
    }
    w.flush()?;
    Ok(())
}

fn samples(cfg: &CliConfig, dataset: Problem, n: usize, seed: u64) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
    let (s, t) = dataset.kinds();
    let spec = |kind, tag| MeasureSpec {
        kind,
        seed: derive_seed(seed, tag),
        geometry: cfg.geometry.clone(),
    };
    Ok((sample(&spec(s, 1), n)?, sample(&spec(t, 2), n)?))
}

pub fn baseline(args: &BaselineArgs) -> Result<i32> {
    let method = match args.method {
        BaselineMethod::Barycentric => Some(MethodKind::Barycentric),
        BaselineMethod::WganGp => Some(MethodKind::WganGp),
        BaselineMethod::WganLp => Some(MethodKind::WganLp),
        _ => None,
    };
    if let Some(m) = method {
        if args.brute_force || args.epsilon.is_some() || args.n.is_some() {
            return Err(Error::Validation(
                "--n, --epsilon and --brute-force apply to hungarian and sinkhorn only".into(),
            ));
        }
        if m == MethodKind::Barycentric {
            let cfg = resolve(&args.common)?;
            let dataset = require_dataset(&cfg)?;
            let root = cfg.out_root(args.common.out.as_deref());
            let cell = try_run_cell(&cfg.experiment(dataset, root.clone()), m, cfg.training.seed)?;
            print_cell(&cell);
            if let Some(e) = cell.report.as_ref().and_then(|r| r.closed_form_error) {
                println!("closed_form_error={e:.4}");
            }
            return Ok(0);
        }
        return run_adversarial(&args.common, m);
    }

    let cfg = resolve(&args.common)?;
    let dataset = require_dataset(&cfg)?;
    let seed = cfg.training.seed;
    let n = args.n.unwrap_or(200);
    let (a, b) = samples(&cfg, dataset, n, seed)?;
    let spec = CostSpec::default();
    let c = spec.matrix(&a, &b)?;
    let name = match args.method {
        BaselineMethod::Hungarian => "hungarian",
        _ => "sinkhorn",
    };
    let dir = cfg
        .out_root(args.common.out.as_deref())
        .join(dataset.name())
        .join(name)
        .join(format!("seed{seed}"));
    fs::create_dir_all(&dir)?;
    a.save_csv(&dir.join("src.csv"))?;
    b.save_csv(&dir.join("tgt.csv"))?;
    let summary = match args.method {
        BaselineMethod::Hungarian => {
            if args.epsilon.is_some() {
                return Err(Error::Validation("--epsilon applies to sinkhorn only".into()));
            }
            let asg = hungarian(&c)?;
            write_assignment(&dir.join("assignment.csv"), &asg.sigma, &c)?;
            DiscretePotentials { phi: asg.u, psi: asg.v }.write_csv(fs::File::create(dir.join("potentials.csv"))?)?;
            if args.brute_force {
                let (sigma, _) = brute_force_assignment(&c)?;
                write_assignment(&dir.join("brute_force.csv"), &sigma, &c)?;
            }
            let cost = asg.total / n as f64;
            SolverSummary {
                method: name,
                dataset: dataset.name(),
                n,
                seed,
                cost,
                w2: spec.distance_from_cost(cost),
                epsilon: None,
                iterations: None,
                marginal_violation: None,
            }
        }
        _ => {
            if args.brute_force {
                return Err(Error::Validation("--brute-force applies to hungarian only".into()));
            }
            let epsilon = args.epsilon.unwrap_or(0.01 * c.median());
            let sol = sinkhorn(
                &a,
                &b,
                &c,
                &SinkhornOptions {
                    epsilon,
                    ..Default::default()
                },
            )?;
            sol.plan.write_csv(fs::File::create(dir.join("plan.csv"))?)?;
            sol.potentials.write_csv(fs::File::create(dir.join("potentials.csv"))?)?;
            SolverSummary {
                method: name,
                dataset: dataset.name(),
                n,
                seed,
                cost: sol.plan.cost_value,
                w2: spec.distance_from_cost(sol.plan.cost_value),
                epsilon: Some(epsilon),
                iterations: Some(sol.iterations),
                marginal_violation: Some(sol.marginal_violation),
            }
        }
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{name} {} n={n}: cost={:.6} w2={:.6}", dataset.name(), summary.cost, summary.w2);
    println!("wrote {}", dir.display());
    Ok(0)
}

/// The Gaussian pair the analyses run on.
pub fn analysis_pair() -> (Gaussian, Gaussian) {
    let src = Gaussian::new(vec![0.0, 0.0], vec![vec![1.0, 0.3], vec![0.3, 0.6]]).expect("valid covariance");
    let tgt = Gaussian::new(vec![2.0, -1.0], vec![vec![0.5, -0.2], vec![-0.2, 1.4]]).expect("valid covariance");
    (src, tgt)
}

/// Rounded to 9 decimals, printed in shortest form.
fn num(x: f64) -> String {
    // adding 0.0 turns -0 into 0
    format!("{}", (x * 1e9).round() / 1e9 + 0.0)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<i32> {
    let (src, tgt) = analysis_pair();
    let seed = args.seed.unwrap_or(0);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let (name, header): (&str, &[&str]) = match &args.which {
        Analysis::Decay { alpha, steps } => {
            let d = simulate_ideal_descent(&src, &tgt, *alpha, *steps)?;
            let ratios = d.trace.decay_ratios();
            for (k, r) in d.trace.rows.iter().enumerate() {
                rows.push(vec![
                    r.t.to_string(),
                    num(r.w2),
                    r.f_t.map_or(String::new(), num),
                    if k == 0 { String::new() } else { num(ratios[k - 1]) },
                ]);
            }
            ("decay", &["t", "w2", "f_t", "ratio"])
        }
        Analysis::Geodesic { steps } => {
            let total = gaussian_w2_closed(&src, &tgt)?;
            for k in 0..=steps + 1 {
                let t = k as f64 / (steps + 1) as f64;
                let mid = gaussian_geodesic_point(&src, &tgt, t)?;
                let from = gaussian_w2_closed(&src, &mid)?;
                let to = gaussian_w2_closed(&mid, &tgt)?;
                rows.push(vec![num(t), num(from), num(to), num(from - t * total), num(to - (1.0 - t) * total)]);
            }
            ("geodesic", &["t", "w2_from_src", "w2_to_tgt", "speed_error_src", "speed_error_tgt"])
        }
        Analysis::Flow { t } => {
            let (_, w0) = gradient_flow_point(&src, &tgt, 0.0)?;
            for &ti in t {
                let (_, w) = gradient_flow_point(&src, &tgt, ti)?;
                rows.push(vec![num(ti), num(w), num(if w0 > 0.0 { w / w0 } else { 1.0 }), num((-ti).exp())]);
            }
            ("flow", &["t", "w2", "ratio", "predicted_ratio"])
        }
        Analysis::Deviation {
            eps,
            eps_prime,
            alpha,
            n,
            trials,
        } => {
            for k in 0..*trials {
                let opts = DeviationOptions {
                    n: *n,
                    seed: derive_seed(seed, k as u64),
                    ..Default::default()
                };
                let r = deviation_experiment(&src, &tgt, *eps, *eps_prime, *alpha, &opts)?;
                rows.push(vec![
                    k.to_string(),
                    num(r.epsilon),
                    num(r.epsilon_prime),
                    num(r.alpha),
                    num(r.measured_w2_deviation),
                    num(r.bound),
                    num(r.sampling_sigma),
                    r.within(3.0).to_string(),
                ]);
            }
            (
                "deviation",
                &["trial", "epsilon", "epsilon_prime", "alpha", "measured", "bound", "sigma", "within_3_sigma"],
            )
        }
    };
    let mut text = header.join(",");
    text.push('\n');
    for r in &rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    let root = CliConfig::default().out_root(args.out.as_deref()).join("analyze");
    fs::create_dir_all(&root)?;
    fs::write(root.join(format!("{name}.csv")), &text)?;
    print!("{text}");
    Ok(0)
}

pub fn experiment(args: &ExperimentArgs) -> Result<i32> {
    let mut cfg = resolve(&args.common)?;
    if let Some(ms) = &args.methods {
        cfg.experiment.methods = ms.iter().map(|m| MethodKind::parse(m)).collect::<Result<_>>()?;
    }
    match (&args.seeds, args.common.seed) {
        (Some(s), _) => cfg.experiment.seeds = s.clone(),
        (None, Some(s)) => cfg.experiment.seeds = vec![s],
        _ => {}
    }
    let datasets: Vec<Problem> = match (args.common.dataset.as_deref(), cfg.dataset) {
        (Some("all"), _) | (None, None) => Problem::BENCHMARKS.to_vec(),
        (_, Some(d)) => vec![d],
        (Some(_), None) => unreachable!("resolve parses the dataset"),
    };
    let root: PathBuf = cfg.out_root(args.common.out.as_deref());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Validation(format!("--jobs: {e}")))?;
    for d in datasets {
        let ecfg = cfg.experiment(d, root.clone());
        let summary = pool.install(|| run_experiment(&ecfg))?;
        for c in &summary.cells {
            print_cell(c);
        }
        for a in &summary.aggregate {
            println!(
                "{} {}: cost_ratio {:.4} ± {:.4}, marginal_w2 {:.4} ± {:.4} ({} ok)",
                a.dataset, a.method, a.cost_ratio_mean, a.cost_ratio_std, a.marginal_w2_mean, a.marginal_w2_std, a.n_ok
            );
        }
    }
    println!("wrote {}", root.join("summary.csv").display());
    Ok(0)
}
