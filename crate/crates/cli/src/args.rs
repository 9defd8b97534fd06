use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "monge-lab", version, about = "Learn optimal transport maps with a W2GAN and check them against exact oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a W2GAN map and write its trace, checkpoints and report.
    Train(TrainArgs),
    /// Run a reference solver or a baseline map estimator.
    Baseline(BaselineArgs),
    /// Closed-form and sampled checks of the ideal generator dynamics.
    Analyze(AnalyzeArgs),
    /// Compare methods over seeds and write the report tree.
    Experiment(ExperimentArgs),
}

/// Flags shared by every command that trains or samples. Each overrides the
/// matching config-file field.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; flags win over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// four_gaussians, checkerboard, two_spirals or gaussian_shift.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Output root [default: $MONGE_LAB_OUT, else out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed of every random stream [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generator iterations [default: 1000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Discriminator steps per generator step [default: 10].
    #[arg(long)]
    pub n_critic: Option<usize>,
    /// Minibatch size [default: 256].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Points in each training pool [default: 1024].
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Held-out points per side for evaluation [default: 200].
    #[arg(long)]
    pub n_eval: Option<usize>,
    /// Sets both learning rates.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Generator learning rate [default: 5e-5].
    #[arg(long)]
    pub alpha_gen: Option<f64>,
    /// Discriminator learning rate [default: 5e-5].
    #[arg(long)]
    pub alpha_disc: Option<f64>,
    /// Weight of the c-inequality penalty [default: 200].
    #[arg(long)]
    pub lambda_ineq: Option<f64>,
    /// Weight of the c-equality penalty [default: 0].
    #[arg(long)]
    pub lambda_eq: Option<f64>,
    /// Weight of the ε penalty under --epsilon-reparam [default: 0].
    #[arg(long)]
    pub lambda_eps: Option<f64>,
    /// Gradient penalty weight of the WGAN baselines [default: 10].
    #[arg(long)]
    pub lambda_gp: Option<f64>,
    /// Pairs entering the inequality penalty [default: all-pairs].
    #[arg(long, value_enum)]
    pub pairing: Option<PairingArg>,
    /// Parameterize ψ as ε − φ.
    #[arg(long)]
    pub epsilon_reparam: bool,
    /// Draw penalty points on segments between real and generated samples.
    #[arg(long)]
    pub interpolated: bool,
    /// Decay both learning rates linearly to zero.
    #[arg(long)]
    pub lr_decay: bool,
    /// Iterations between W2 estimates in the trace [default: 100].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Iterations between generator checkpoints [default: 100].
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairingArg {
    AllPairs,
    Diagonal,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Hungarian,
    Sinkhorn,
    Barycentric,
    WganGp,
    WganLp,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// Points per side for hungarian and sinkhorn [default: 200].
    #[arg(long)]
    pub n: Option<usize>,
    /// Absolute entropic regularization for sinkhorn [default: 0.01 × median cost].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Also solve the assignment by exhaustive search (n ≤ 10) and write it
    /// alongside in the same format.
    #[arg(long)]
    pub brute_force: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub which: Analysis,
    /// Output root [default: $MONGE_LAB_OUT, else out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed of the sampled analyses [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Analysis {
    /// W2 to the target along the ideal update `G ← G − α∇φ∘G`.
    Decay {
        /// Step size.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Number of updates.
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Distances along the displacement interpolation.
    Geodesic {
        /// Interior points between the endpoints.
        #[arg(long, default_value_t = 4)]
        steps: usize,
    },
    /// Deviation of a perturbed update from the ideal one against its bound.
    Deviation {
        /// Bound on the gradient error of the potential.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        /// Bound on the update error.
        #[arg(long, default_value_t = 0.0)]
        eps_prime: f64,
        /// Step size.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Sample size.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Independent trials.
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// W2 along the continuous-time flow.
    Flow {
        /// Comma-separated times.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0, 2.0])]
        t: Vec<f64>,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Comma-separated methods: w2gan, discrete-ot, barycentric, wgan-gp, wgan-lp [default: w2gan].
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated seeds [default: 0,1,2].
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Worker threads for the cells [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}
