//! Discriminator and generator objectives.
//!
//! Orientation: the discriminator maximizes
//! `total = l_ot − λ_ineq·l_ineq − λ_eq·l_eq − λ_eps·l_eps`
//! and the generator minimizes `E φ(G(z))`. Every penalty is logged as a
//! nonnegative magnitude.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nets::{BoundPair, GeneratorNet, Parameterization, PotentialPair};
use crate::autodiff::{Bound, Graph, Mlp, Mode, NodeId, Tensor};
use crate::error::{Error, Result};

/// Which `(u, v)` pairs of a batch enter the inequality penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `(u_i, v_i)` only.
    Diagonal,
    /// Every `(u_i, v_j)`.
    AllPairs,
}

/// Penalty weights read by the discriminator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyWeights {
    pub lambda_ineq: f64,
    pub lambda_eq: f64,
    pub lambda_eps: f64,
    pub pairing: Pairing,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ot: f64,
    pub l_ineq: f64,
    pub l_eq: f64,
    pub l_eps: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_ot, self.l_ineq, self.l_eq, self.l_eps, self.total].iter().all(|v| v.is_finite())
    }
}

/// Graph nodes of a discriminator objective.
#[derive(Clone, Copy, Debug)]
pub struct DiscNodes {
    pub total: NodeId,
    pub l_ot: NodeId,
    pub l_ineq: NodeId,
    pub l_eq: Option<NodeId>,
    pub l_eps: Option<NodeId>,
}

impl DiscNodes {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let v = |id: NodeId| g.value(id).data()[0];
        LossBreakdown {
            l_ot: v(self.l_ot),
            l_ineq: v(self.l_ineq),
            l_eq: self.l_eq.map_or(0.0, v),
            l_eps: self.l_eps.map_or(0.0, v),
            total: v(self.total),
        }
    }
}

/// `[n, 1]` column of `‖u_i − v_i‖²/2`.
fn half_sq_dist_rows(g: &mut Graph, u: NodeId, v: NodeId) -> Result<NodeId> {
    let d = g.sub(u, v)?;
    let sq = g.square(d)?;
    let s = g.sum_cols(sq)?;
    g.scale(s, 0.5)
}

/// `[n, 1]` column of `‖w_i‖²/2`.
fn half_sq_norm_rows(g: &mut Graph, w: NodeId) -> Result<NodeId> {
    let sq = g.square(w)?;
    let s = g.sum_cols(sq)?;
    g.scale(s, 0.5)
}

/// `E (φ(u) + ψ(v) − ‖u − v‖²/2)_+²` over the chosen pairs.
pub fn inequality_penalty(
    g: &mut Graph,
    phi_u: NodeId,
    psi_v: NodeId,
    u: NodeId,
    v: NodeId,
    pairing: Pairing,
) -> Result<NodeId> {
    let slack = match pairing {
        Pairing::Diagonal => {
            let c = half_sq_dist_rows(g, u, v)?;
            let s = g.add(phi_u, psi_v)?;
            g.sub(s, c)?
        }
        Pairing::AllPairs => {
            let (nu, nv) = (g.value(u).rows(), g.value(v).rows());
            // ‖u_i − v_j‖²/2 = ‖u_i‖²/2 + ‖v_j‖²/2 − u_i·v_j
            let one = g.constant(Tensor::scalar(1.0))?;
            let uu = half_sq_norm_rows(g, u)?;
            let vv = half_sq_norm_rows(g, v)?;
            let vv_row = g.matmul_t(one, vv, false, true)?;
            let psi_row = g.matmul_t(one, psi_v, false, true)?;
            let uu_b = g.broadcast_to_cols(uu, nv)?;
            let vv_b = g.broadcast_to_rows(vv_row, nu)?;
            let cross = g.matmul_t(u, v, false, true)?;
            let phi_b = g.broadcast_to_cols(phi_u, nv)?;
            let psi_b = g.broadcast_to_rows(psi_row, nu)?;
            let pot = g.add(phi_b, psi_b)?;
            let norms = g.add(uu_b, vv_b)?;
            let s = g.sub(pot, norms)?;
            g.add(s, cross)?
        }
    };
    let pos = g.relu(slack)?;
    let sq = g.square(pos)?;
    g.mean(sq)
}

/// c-equality penalty
/// `E(φ(u) + ψ(u − ∇φ(u)) − ‖∇φ(u)‖²/2)² + E(ψ(v) + φ(v − ∇ψ(v)) − ‖∇ψ(v)‖²/2)²`.
///
/// `u` and `v` must be differentiable input nodes.
pub fn eq_penalty_nodes(
    g: &mut Graph,
    pp: &PotentialPair,
    b: &mut BoundPair,
    u: NodeId,
    v: NodeId,
    phi_u: NodeId,
    psi_v: NodeId,
) -> Result<NodeId> {
    let s_phi = g.sum(phi_u)?;
    let grad_phi = g.gradient_nodes(s_phi, &[u])?[0];
    let u_moved = g.sub(u, grad_phi)?;
    let psi_moved = pp.psi_node(g, b, u_moved)?;
    let half_phi = half_sq_norm_rows(g, grad_phi)?;
    let a = g.add(phi_u, psi_moved)?;
    let t1 = g.sub(a, half_phi)?;
    let t1 = g.square(t1)?;
    let m1 = g.mean(t1)?;

    let s_psi = g.sum(psi_v)?;
    let grad_psi = g.gradient_nodes(s_psi, &[v])?[0];
    let v_moved = g.sub(v, grad_psi)?;
    let phi_moved = pp.phi_node(g, b, v_moved)?;
    let half_psi = half_sq_norm_rows(g, grad_psi)?;
    let c = g.add(psi_v, phi_moved)?;
    let t2 = g.sub(c, half_psi)?;
    let t2 = g.square(t2)?;
    let m2 = g.mean(t2)?;
    g.add(m1, m2)
}

/// Builds the discriminator objective on `gz` (φ side) and `x` (ψ side).
///
/// `interp` replaces the pairs of the inequality penalty by interpolated
/// points `(x̃, ỹ)`. When the c-equality term is active, `gz` and `x` must
/// be input nodes.
pub fn disc_objective(
    g: &mut Graph,
    pp: &PotentialPair,
    b: &mut BoundPair,
    gz: NodeId,
    x: NodeId,
    interp: Option<(NodeId, NodeId)>,
    w: &PenaltyWeights,
) -> Result<DiscNodes> {
    if g.value(gz).shape() != g.value(x).shape() {
        return Err(Error::Shape(format!(
            "generated batch {:?} and target batch {:?} differ",
            g.value(gz).shape(),
            g.value(x).shape()
        )));
    }
    let phi_gz = pp.phi_node(g, b, gz)?;
    let psi_x = pp.psi_node(g, b, x)?;
    let m_phi = g.mean(phi_gz)?;
    let m_psi = g.mean(psi_x)?;
    let l_ot = g.add(m_phi, m_psi)?;

    let l_ineq = match interp {
        None => inequality_penalty(g, phi_gz, psi_x, gz, x, w.pairing)?,
        Some((xt, yt)) => {
            let p = pp.phi_node(g, b, xt)?;
            let q = pp.psi_node(g, b, yt)?;
            inequality_penalty(g, p, q, xt, yt, w.pairing)?
        }
    };
    let mut total = {
        let s = g.scale(l_ineq, w.lambda_ineq)?;
        g.sub(l_ot, s)?
    };
    let l_eq = if w.lambda_eq > 0.0 {
        let e = eq_penalty_nodes(g, pp, b, gz, x, phi_gz, psi_x)?;
        let s = g.scale(e, w.lambda_eq)?;
        total = g.sub(total, s)?;
        Some(e)
    } else {
        None
    };
    let l_eps = if pp.parameterization == Parameterization::EpsilonReparam {
        let e = pp.eps_node(g, b, x)?;
        let r = g.relu(e)?;
        let sq = g.square(r)?;
        let m = g.mean(sq)?;
        if w.lambda_eps > 0.0 {
            let s = g.scale(m, w.lambda_eps)?;
            total = g.sub(total, s)?;
        }
        Some(m)
    } else {
        None
    };
    Ok(DiscNodes {
        total,
        l_ot,
        l_ineq,
        l_eq,
        l_eps,
    })
}

/// Value of the discriminator objective on fixed batches.
pub fn disc_loss(
    pp: &PotentialPair,
    gz: &Tensor,
    x: &Tensor,
    interp: Option<(&Tensor, &Tensor)>,
    w: &PenaltyWeights,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let gzi = g.input(gz.clone())?;
    let xi = g.input(x.clone())?;
    let it = match interp {
        Some((a, c)) => Some((g.constant(a.clone())?, g.constant(c.clone())?)),
        None => None,
    };
    let mut b = pp.bind_frozen(&mut g)?;
    let nodes = disc_objective(&mut g, pp, &mut b, gzi, xi, it, w)?;
    let out = nodes.breakdown(&g);
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss {out:?}")));
    }
    Ok(out)
}

/// `c-equality` penalty value on fixed batches.
pub fn eq_penalty(pp: &PotentialPair, x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let u = g.input(x.clone())?;
    let v = g.input(y.clone())?;
    let mut b = pp.bind_frozen(&mut g)?;
    let pu = pp.phi_node(&mut g, &mut b, u)?;
    let qv = pp.psi_node(&mut g, &mut b, v)?;
    let e = eq_penalty_nodes(&mut g, pp, &mut b, u, v, pu, qv)?;
    Ok(g.value(e).data()[0])
}

/// `E φ(G(z))` with φ frozen; returns the loss node and the generator
/// binding.
pub fn gen_objective(
    g: &mut Graph,
    pp: &PotentialPair,
    gen: &GeneratorNet,
    z: NodeId,
    mode: Mode,
) -> Result<(NodeId, Bound)> {
    let mut gb = gen.bind(g)?;
    let gz = gen.forward(g, &mut gb, z, mode)?;
    let mut pb = pp.bind_frozen(g)?;
    let phi = pp.phi_node(g, &mut pb, gz)?;
    Ok((g.mean(phi)?, gb))
}

/// Value of `E φ(G(z))` (generator in evaluation mode).
pub fn gen_loss(pp: &PotentialPair, gen: &GeneratorNet, z: &Tensor) -> Result<f64> {
    let gz = gen.eval(z)?;
    let v = pp.phi(&gz)?;
    let out = v.sum() / v.len() as f64;
    if !out.is_finite() {
        return Err(Error::NonFinite("generator loss".into()));
    }
    Ok(out)
}

/// `e_i x_i + (1 − e_i) gz_i` row by row.
pub fn interpolate(gz: &Tensor, x: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if gz.shape() != x.shape() || eps.len() != x.rows() {
        return Err(Error::Shape("interpolation needs equal batches and one weight per row".into()));
    }
    let d = x.cols();
    let data = (0..x.rows())
        .flat_map(|i| {
            let e = eps[i];
            (0..d).map(move |k| e * x.row(i)[k] + (1.0 - e) * gz.row(i)[k])
        })
        .collect();
    Tensor::matrix(x.rows(), d, data)
}

/// Two independent interpolated batches `(x̃, ỹ)` with `ε ~ U[0, 1]`; the
/// second uses a shuffled pairing of the rows.
pub fn interpolate_pairs<R: Rng>(gz: &Tensor, x: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let n = x.rows();
    let e1: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let e2: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let xt = interpolate(gz, x, &e1)?;
    let pick = |t: &Tensor| -> Result<Tensor> {
        let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
        Tensor::matrix(n, t.cols(), data)
    };
    let yt = interpolate(&pick(gz)?, &pick(x)?, &e2)?;
    Ok((xt, yt))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WganVariant {
    /// `(‖∇f‖ − 1)²`
    Gp,
    /// `max(0, ‖∇f‖ − 1)²`
    Lp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WganBreakdown {
    pub l_w: f64,
    pub penalty: f64,
    pub total: f64,
}

/// `E f(x) − E f(gz) − λ_gp · E pen(‖∇f(x̂)‖)`; returns (total, l_w,
/// penalty) nodes. `xhat` must be an input node.
pub fn wgan_objective(
    g: &mut Graph,
    critic: &Mlp,
    b: &mut Bound,
    gz: NodeId,
    x: NodeId,
    xhat: NodeId,
    variant: WganVariant,
    lambda_gp: f64,
) -> Result<(NodeId, NodeId, NodeId)> {
    let fx = critic.forward(g, b, x, Mode::Eval)?;
    let fg = critic.forward(g, b, gz, Mode::Eval)?;
    let mx = g.mean(fx)?;
    let mg = g.mean(fg)?;
    let l_w = g.sub(mx, mg)?;
    let fh = critic.forward(g, b, xhat, Mode::Eval)?;
    let s = g.sum(fh)?;
    let grad = g.gradient_nodes(s, &[xhat])?[0];
    let sq = g.square(grad)?;
    let ss = g.sum_cols(sq)?;
    let norm = g.sqrt(ss)?;
    let dev = g.add_scalar(norm, -1.0)?;
    let dev = match variant {
        WganVariant::Gp => dev,
        WganVariant::Lp => g.relu(dev)?,
    };
    let p = g.square(dev)?;
    let penalty = g.mean(p)?;
    let sp = g.scale(penalty, lambda_gp)?;
    let total = g.sub(l_w, sp)?;
    Ok((total, l_w, penalty))
}

/// Value of the WGAN critic objective on fixed batches.
pub fn wgan_baseline_disc_loss(
    critic: &Mlp,
    gz: &Tensor,
    x: &Tensor,
    xhat: &Tensor,
    variant: WganVariant,
    lambda_gp: f64,
) -> Result<WganBreakdown> {
    let mut g = Graph::new();
    let gzi = g.constant(gz.clone())?;
    let xi = g.constant(x.clone())?;
    let hi = g.input(xhat.clone())?;
    let mut b = critic.bind_frozen(&mut g)?;
    let (t, l, p) = wgan_objective(&mut g, critic, &mut b, gzi, xi, hi, variant, lambda_gp)?;
    let v = |id: NodeId| g.value(id).data()[0];
    let out = WganBreakdown {
        l_w: v(l),
        penalty: v(p),
        total: v(t),
    };
    if !out.total.is_finite() {
        return Err(Error::NonFinite(format!("critic loss {out:?}")));
    }
    Ok(out)
}
