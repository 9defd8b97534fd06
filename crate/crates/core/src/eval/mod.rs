//! Map quality metrics and the experiment runner behind the report tree.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::{derive_seed, monge_map, sample, AffineMap, Dataset, EmpiricalMeasure, Gaussian, Geometry, MeasureKind, MeasureSpec};
use crate::discrete_ot::{
    barycentric_map, fit_barycentric_net, hungarian, sinkhorn, BarycentricFit, CostMatrix, CostSpec, SinkhornOptions,
};
use crate::error::{Error, Result};
use crate::w2gan::{train_method, Checkpoint, GeneratorNet, Method, TrainStatus, TrainingConfig, TrainingTrace};

pub use svg::{quiver_svg, trace_svg};

/// Share of mapped points sent to one target cluster above which the map is
/// flagged as collapsed.
pub const MODE_COLLAPSE_SHARE: f64 = 0.3;

/// A source/target pair to learn a map for: one of the 2D benchmarks, or
/// `N(0, I) → N((2, 0), I)` whose Monge map is the translation by `(2, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    FourGaussians,
    Checkerboard,
    TwoSpirals,
    GaussianShift,
}

impl Problem {
    pub const BENCHMARKS: [Problem; 3] = [Problem::FourGaussians, Problem::Checkerboard, Problem::TwoSpirals];

    pub fn name(self) -> &'static str {
        match self.dataset() {
            Some(d) => d.name(),
            None => "gaussian_shift",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "gaussian_shift" | "gaussian" => Ok(Problem::GaussianShift),
            other => Dataset::parse(other).map(Problem::from).map_err(|_| {
                Error::Validation(format!(
                    "unknown dataset {s:?} (expected four_gaussians, checkerboard, two_spirals or gaussian_shift)"
                ))
            }),
        }
    }

    pub fn dataset(self) -> Option<Dataset> {
        match self {
            Problem::FourGaussians => Some(Dataset::FourGaussians),
            Problem::Checkerboard => Some(Dataset::Checkerboard),
            Problem::TwoSpirals => Some(Dataset::TwoSpirals),
            Problem::GaussianShift => None,
        }
    }

    pub fn gaussians() -> (Gaussian, Gaussian) {
        (Gaussian::isotropic(&[0.0, 0.0], 1.0), Gaussian::isotropic(&[2.0, 0.0], 1.0))
    }

    pub fn kinds(self) -> (MeasureKind, MeasureKind) {
        match self.dataset() {
            Some(d) => d.kinds(),
            None => {
                let (a, b) = Self::gaussians();
                (MeasureKind::Gaussian(a), MeasureKind::Gaussian(b))
            }
        }
    }

    pub fn target_centers(self, geo: &Geometry) -> Option<Vec<[f64; 2]>> {
        self.dataset().and_then(|d| d.target_centers(geo))
    }

    /// The exact Monge map, when known.
    pub fn closed_form(self) -> Option<AffineMap> {
        match self {
            Problem::GaussianShift => {
                let (a, b) = Self::gaussians();
                monge_map(&a, &b).ok()
            }
            _ => None,
        }
    }
}

impl From<Dataset> for Problem {
    fn from(d: Dataset) -> Self {
        match d {
            Dataset::FourGaussians => Problem::FourGaussians,
            Dataset::Checkerboard => Problem::Checkerboard,
            Dataset::TwoSpirals => Problem::TwoSpirals,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCollapse {
    /// Fraction of mapped points whose nearest target cluster is the most
    /// popular one.
    pub max_cluster_share: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEvalReport {
    pub method: String,
    /// `E ‖x − G(x)‖²/2` over the held-out source points.
    pub transport_cost: f64,
    /// Optimal assignment cost between the held-out sources and their images.
    pub hungarian_cost: f64,
    /// `transport_cost / hungarian_cost`; 1 when both vanish.
    pub cost_ratio_vs_hungarian: f64,
    /// Mean `‖G(x_i) − y_σ(i)‖` for the optimal source-to-target match σ.
    pub displacement_error: f64,
    /// W2 between the pushed-forward sources and the held-out targets.
    pub marginal_w2: f64,
    /// W2 between the held-out sources and targets.
    pub initial_w2: f64,
    pub mode_collapse: Option<ModeCollapse>,
    /// Mean `‖G(x) − T(x)‖` against the exact Monge map `T`, when known.
    pub closed_form_error: Option<f64>,
}

/// Held-out sources and targets with their optimal match, computed once.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub src: EmpiricalMeasure,
    pub tgt: EmpiricalMeasure,
    /// Source `i` is matched to target `sigma[i]`.
    pub sigma: Vec<usize>,
    pub initial_w2: f64,
    /// Target cluster centers used for the collapse diagnostic.
    pub clusters: Option<Vec<[f64; 2]>>,
    pub closed_form: Option<AffineMap>,
}

impl EvalSet {
    pub fn new(src: EmpiricalMeasure, tgt: EmpiricalMeasure, clusters: Option<Vec<[f64; 2]>>) -> Result<Self> {
        if src.len() != tgt.len() || !src.is_uniform() || !tgt.is_uniform() {
            return Err(Error::Contract("evaluation needs equal-count uniform measures".into()));
        }
        let cost = CostSpec::default();
        let a = hungarian(&cost.matrix(&src, &tgt)?)?;
        let initial_w2 = cost.distance_from_cost(a.total / src.len() as f64);
        Ok(Self {
            src,
            tgt,
            sigma: a.sigma,
            initial_w2,
            clusters,
            closed_form: None,
        })
    }

    /// The optimal match used as a map on the held-out sources.
    pub fn matched_targets(&self) -> Result<Tensor> {
        let data = self.sigma.iter().flat_map(|&j| self.tgt.point(j).to_vec()).collect();
        Tensor::matrix(self.src.len(), self.src.dim(), data)
    }
}

/// Scores the images `mapped = G(src)` of the held-out sources.
pub fn evaluate_map(method: &str, mapped: &Tensor, set: &EvalSet) -> Result<MapEvalReport> {
    let (n, d) = (set.src.len(), set.src.dim());
    if mapped.shape() != [n, d] {
        return Err(Error::Shape(format!("mapped points {:?}, expected [{n}, {d}]", mapped.shape())));
    }
    if !mapped.is_finite() {
        return Err(Error::NonFinite(format!("{method} produced non-finite points")));
    }
    let cost = CostSpec::default();
    let transport_cost = (0..n).map(|i| cost.eval(set.src.point(i), mapped.row(i))).sum::<f64>() / n as f64;
    let images = set.src.with_points(mapped.clone())?;
    let own = CostMatrix::from_fn(n, n, |i, j| cost.eval(set.src.point(i), images.point(j)));
    let hungarian_cost = hungarian(&own)?.total / n as f64;
    let cost_ratio_vs_hungarian = if hungarian_cost > 0.0 {
        transport_cost / hungarian_cost
    } else if transport_cost == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let displacement_error = set
        .sigma
        .iter()
        .enumerate()
        .map(|(i, &j)| dist(mapped.row(i), set.tgt.point(j)))
        .sum::<f64>()
        / n as f64;
    let tc = CostMatrix::from_fn(n, n, |i, j| cost.eval(images.point(i), set.tgt.point(j)));
    let marginal_w2 = cost.distance_from_cost(hungarian(&tc)?.total / n as f64);
    let mode_collapse = set.clusters.as_ref().map(|c| mode_collapse(mapped, c));
    let closed_form_error = set
        .closed_form
        .as_ref()
        .map(|t| (0..n).map(|i| dist(mapped.row(i), &t.apply(set.src.point(i)))).sum::<f64>() / n as f64);
    Ok(MapEvalReport {
        method: method.to_string(),
        transport_cost,
        hungarian_cost,
        cost_ratio_vs_hungarian,
        displacement_error,
        marginal_w2,
        initial_w2: set.initial_w2,
        mode_collapse,
        closed_form_error,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn mode_collapse(mapped: &Tensor, centers: &[[f64; 2]]) -> ModeCollapse {
    let mut counts = vec![0usize; centers.len()];
    for i in 0..mapped.rows() {
        let p = mapped.row(i);
        let k = (0..centers.len())
            .min_by(|&a, &b| dist(p, &centers[a]).total_cmp(&dist(p, &centers[b])))
            .unwrap_or(0);
        counts[k] += 1;
    }
    let share = counts.iter().copied().max().unwrap_or(0) as f64 / mapped.rows().max(1) as f64;
    ModeCollapse {
        max_cluster_share: share,
        flagged: share > MODE_COLLAPSE_SHARE,
    }
}

/// Map estimators compared in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    W2gan,
    DiscreteOt,
    Barycentric,
    WganGp,
    WganLp,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::W2gan,
        MethodKind::DiscreteOt,
        MethodKind::Barycentric,
        MethodKind::WganGp,
        MethodKind::WganLp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::W2gan => "w2gan",
            MethodKind::DiscreteOt => "discrete-ot",
            MethodKind::Barycentric => "barycentric",
            MethodKind::WganGp => "wgan-gp",
            MethodKind::WganLp => "wgan-lp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('-', "_") == s)
            .ok_or_else(|| Error::Validation(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarycentricConfig {
    /// Entropic regularization of the Sinkhorn plan, relative to the median cost.
    pub relative_epsilon: f64,
    pub fit: BarycentricFit,
}

impl Default for BarycentricConfig {
    fn default() -> Self {
        Self {
            relative_epsilon: 0.01,
            fit: BarycentricFit::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Problem,
    pub methods: Vec<MethodKind>,
    pub n_train: usize,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub training: TrainingConfig,
    pub barycentric: BarycentricConfig,
    pub geometry: Geometry,
    /// Write generator checkpoints of adversarial methods into each cell.
    pub write_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: Problem::FourGaussians,
            methods: vec![MethodKind::W2gan],
            n_train: 1024,
            n_eval: 200,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("out"),
            training: TrainingConfig::default(),
            barycentric: BarycentricConfig::default(),
            geometry: Geometry::default(),
            write_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::Validation("n_train and n_eval must be positive".into()));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Validation("at least one method and one seed are required".into()));
        }
        self.training.validate()
    }

    fn spec(&self, kind: MeasureKind, seed: u64) -> MeasureSpec {
        MeasureSpec {
            kind,
            seed,
            geometry: self.geometry.clone(),
        }
    }

    /// Training and evaluation measures for one seed; the four streams are
    /// independent.
    pub fn specs(&self, seed: u64) -> [MeasureSpec; 4] {
        let (s, t) = self.dataset.kinds();
        [
            self.spec(s.clone(), derive_seed(seed, 1)),
            self.spec(t.clone(), derive_seed(seed, 2)),
            self.spec(s, derive_seed(seed, 3)),
            self.spec(t, derive_seed(seed, 4)),
        ]
    }

    pub fn eval_set(&self, seed: u64) -> Result<EvalSet> {
        let [_, _, se, te] = self.specs(seed);
        let mut set = EvalSet::new(
            sample(&se, self.n_eval)?,
            sample(&te, self.n_eval)?,
            self.dataset.target_centers(&self.geometry),
        )?;
        set.closed_form = self.dataset.closed_form();
        Ok(set)
    }
}

/// Result of one (method, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    /// `ok`, `diverged` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub report: Option<MapEvalReport>,
    /// Last W2 estimate of the training trace over the first one.
    pub train_w2_ratio: Option<f64>,
}

struct CellOutput {
    mapped: Tensor,
    trace: Option<TrainingTrace>,
    checkpoints: Vec<Checkpoint>,
    status: TrainStatus,
}

impl CellOutput {
    fn direct(mapped: Tensor) -> Self {
        Self {
            mapped,
            trace: None,
            checkpoints: Vec::new(),
            status: TrainStatus::Completed,
        }
    }
}

fn run_method(cfg: &ExperimentConfig, method: MethodKind, seed: u64, set: &EvalSet) -> Result<CellOutput> {
    let [st, tt, _, _] = cfg.specs(seed);
    let training = TrainingConfig {
        n_train: cfg.n_train,
        seed,
        ..cfg.training.clone()
    };
    let trained = |m: Method| -> Result<CellOutput> {
        let out = train_method(&training, m, &st, &tt)?;
        Ok(CellOutput {
            mapped: out.generator.eval(set.src.points())?,
            trace: Some(out.trace),
            checkpoints: out.checkpoints,
            status: out.status,
        })
    };
    match method {
        MethodKind::W2gan => trained(Method::W2gan),
        MethodKind::WganGp => trained(Method::WganGp),
        MethodKind::WganLp => trained(Method::WganLp),
        MethodKind::DiscreteOt => Ok(CellOutput::direct(set.matched_targets()?)),
        MethodKind::Barycentric => {
            let (a, b) = (sample(&st, cfg.n_train)?, sample(&tt, cfg.n_train)?);
            let c = CostSpec::default().matrix(&a, &b)?;
            let opts = SinkhornOptions {
                epsilon: cfg.barycentric.relative_epsilon * c.median(),
                tol: 1e-6,
                ..Default::default()
            };
            let plan = sinkhorn(&a, &b, &c, &opts)?.plan;
            let targets = barycentric_map(&plan, &b)?;
            let spec = crate::autodiff::MlpSpec::generator(a.dim(), derive_seed(seed, 20));
            let mut net = GeneratorNet::identity_init(spec, training.init_scale)?;
            let fit = BarycentricFit {
                seed: derive_seed(seed, 21),
                ..cfg.barycentric.fit.clone()
            };
            fit_barycentric_net(&mut net, &a, &targets, &fit)?;
            Ok(CellOutput::direct(net.eval(set.src.points())?))
        }
    }
}

/// Directory of one (method, seed) cell under the output root.
pub fn cell_dir(root: &Path, dataset: Problem, method: MethodKind, seed: u64) -> PathBuf {
    root.join(dataset.name()).join(method.name()).join(format!("seed{seed}"))
}

/// Runs one cell and writes its directory. A diverged run still yields a
/// report, for the generator restored from its last checkpoint.
pub fn try_run_cell(cfg: &ExperimentConfig, method: MethodKind, seed: u64) -> Result<CellReport> {
    let set = cfg.eval_set(seed)?;
    let out = run_method(cfg, method, seed, &set)?;
    let report = evaluate_map(method.name(), &out.mapped, &set)?;
    let dir = cell_dir(&cfg.out_dir, cfg.dataset, method, seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(dir.join("quiver.svg"), quiver_svg(&set.src, &out.mapped, &set.tgt))?;
    let mut q = csv::Writer::from_path(dir.join("quiver.csv")).map_err(crate::datasets::csv_err)?;
    q.write_record(["x0", "x1", "g0", "g1"]).map_err(crate::datasets::csv_err)?;
    for i in 0..set.src.len() {
        let (x, g) = (set.src.point(i), out.mapped.row(i));
        q.write_record([x[0], x[1], g[0], g[1]].map(|v| format!("{v:e}")))
            .map_err(crate::datasets::csv_err)?;
    }
    q.flush()?;
    let mut train_w2_ratio = None;
    if let Some(trace) = &out.trace {
        trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
        fs::write(dir.join("trace.svg"), trace_svg(trace))?;
        train_w2_ratio = trace.w2_ratio();
    }
    if cfg.write_checkpoints && !out.checkpoints.is_empty() {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck)?;
        for c in &out.checkpoints {
            fs::write(ck.join(format!("iter{:06}.json", c.iteration)), c.to_json()?)?;
        }
    }
    let (status, error) = match &out.status {
        TrainStatus::Completed => ("ok", None),
        TrainStatus::Diverged { iteration, reason } => {
            ("diverged", Some(format!("diverged at iteration {iteration}: {reason}")))
        }
    };
    Ok(CellReport {
        dataset: cfg.dataset.name().to_string(),
        method: method.name().to_string(),
        seed,
        status: status.into(),
        error,
        report: Some(report),
        train_w2_ratio,
    })
}

/// [`try_run_cell`] with failures recorded in the report.
pub fn run_cell(cfg: &ExperimentConfig, method: MethodKind, seed: u64) -> CellReport {
    try_run_cell(cfg, method, seed).unwrap_or_else(|e| CellReport {
        dataset: cfg.dataset.name().to_string(),
        method: method.name().to_string(),
        seed,
        status: "failed".into(),
        error: Some(e.to_string()),
        report: None,
        train_w2_ratio: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub n_ok: usize,
    pub cost_ratio_mean: f64,
    pub cost_ratio_std: f64,
    pub marginal_w2_mean: f64,
    pub marginal_w2_std: f64,
    pub displacement_error_mean: f64,
    pub displacement_error_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub cells: Vec<CellReport>,
    pub aggregate: Vec<AggregateRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn aggregate(cells: &[CellReport], dataset: &str, methods: &[MethodKind]) -> Vec<AggregateRow> {
    methods
        .iter()
        .map(|m| {
            let reps: Vec<&MapEvalReport> = cells
                .iter()
                .filter(|c| c.method == m.name() && c.status == "ok")
                .filter_map(|c| c.report.as_ref())
                .collect();
            let col = |f: fn(&MapEvalReport) -> f64| mean_std(&reps.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (cr, crs) = col(|r| r.cost_ratio_vs_hungarian);
            let (mw, mws) = col(|r| r.marginal_w2);
            let (de, des) = col(|r| r.displacement_error);
            AggregateRow {
                dataset: dataset.to_string(),
                method: m.name().to_string(),
                n_ok: reps.len(),
                cost_ratio_mean: cr,
                cost_ratio_std: crs,
                marginal_w2_mean: mw,
                marginal_w2_std: mws,
                displacement_error_mean: de,
                displacement_error_std: des,
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 13] = [
    "dataset",
    "method",
    "seed",
    "status",
    "transport_cost",
    "hungarian_cost",
    "cost_ratio_vs_hungarian",
    "displacement_error",
    "marginal_w2",
    "initial_w2",
    "train_w2_ratio",
    "mode_collapse",
    "error",
];

fn summary_record(c: &CellReport) -> Vec<String> {
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    let r = c.report.as_ref();
    vec![
        c.dataset.clone(),
        c.method.clone(),
        c.seed.to_string(),
        c.status.clone(),
        f(r.map(|r| r.transport_cost)),
        f(r.map(|r| r.hungarian_cost)),
        f(r.map(|r| r.cost_ratio_vs_hungarian)),
        f(r.map(|r| r.displacement_error)),
        f(r.map(|r| r.marginal_w2)),
        f(r.map(|r| r.initial_w2)),
        f(c.train_w2_ratio),
        r.and_then(|r| r.mode_collapse.as_ref())
            .map_or(String::new(), |m| m.flagged.to_string()),
        c.error.clone().unwrap_or_default(),
    ]
}

/// Writes `out/summary.csv`, keeping rows of other datasets already there.
fn write_summary(root: &Path, dataset: &str, cells: &[CellReport]) -> Result<()> {
    let path = root.join("summary.csv");
    let mut kept: Vec<csv::StringRecord> = Vec::new();
    if path.exists() {
        let mut rd = csv::Reader::from_path(&path).map_err(crate::datasets::csv_err)?;
        for rec in rd.records() {
            let rec = rec.map_err(crate::datasets::csv_err)?;
            if rec.get(0) != Some(dataset) {
                kept.push(rec);
            }
        }
    }
    let mut wr = csv::Writer::from_path(&path).map_err(crate::datasets::csv_err)?;
    wr.write_record(SUMMARY_HEADER).map_err(crate::datasets::csv_err)?;
    for rec in &kept {
        wr.write_record(rec).map_err(crate::datasets::csv_err)?;
    }
    for c in cells {
        wr.write_record(summary_record(c)).map_err(crate::datasets::csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_aggregate(root: &Path, rows: &[AggregateRow]) -> Result<()> {
    let Some(first) = rows.first() else { return Ok(()) };
    let dir = root.join(&first.dataset);
    fs::create_dir_all(&dir)?;
    let mut wr = csv::Writer::from_path(dir.join("aggregate.csv")).map_err(crate::datasets::csv_err)?;
    for r in rows {
        wr.serialize(r).map_err(crate::datasets::csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Runs every (method, seed) cell, in parallel, and writes the report tree
/// `out/<dataset>/<method>/seed<k>/` plus `out/summary.csv` and
/// `out/<dataset>/aggregate.csv`. A failing cell is recorded and the run
/// continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let jobs: Vec<(MethodKind, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let cells: Vec<CellReport> = jobs.par_iter().map(|&(m, s)| run_cell(cfg, m, s)).collect();
    let aggregate = aggregate(&cells, cfg.dataset.name(), &cfg.methods);
    write_summary(&cfg.out_dir, cfg.dataset.name(), &cells)?;
    write_aggregate(&cfg.out_dir, &aggregate)?;
    Ok(ExperimentSummary { cells, aggregate })
}
