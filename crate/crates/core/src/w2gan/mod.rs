//! Adversarial estimation of a transport map with a pair of dual potentials.
//!
//! The discriminator `(φ, ψ)` maximizes
//! `E φ(G(z)) + E ψ(x) − λ_ineq L_ineq − λ_eq L_eq − λ_ε L_ε`
//! and the generator minimizes `E φ(G(z))`.

mod checkpoint;
mod losses;
mod nets;
mod train;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use losses::{
    disc_loss, disc_objective, eq_penalty, eq_penalty_nodes, gen_loss, gen_objective, inequality_penalty, interpolate,
    interpolate_pairs, wgan_baseline_disc_loss, wgan_objective, DiscNodes, LossBreakdown, Pairing, PenaltyWeights,
    WganBreakdown, WganVariant,
};
pub use nets::{BoundPair, GeneratorNet, OutputTransform, Parameterization, PotentialPair};
pub use train::{
    fit_potentials,
    train, train_method, train_on_pools, training_pools, Critic, Method, TraceRow, TrainOutput, TrainStatus,
    TrainingConfig, TrainingTrace,
};

#[cfg(test)]
mod tests;
