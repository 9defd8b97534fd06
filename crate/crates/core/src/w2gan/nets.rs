use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Gradients, Graph, Mlp, MlpSpec, Mode, NodeId, Tensor};
use crate::error::{Error, Result};

/// Post-processing applied to the generator output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputTransform {
    None,
    /// `s · tanh(v / s)`: identity near the origin, saturating at `±s`.
    ClippedAffineTanh { scale: f64 },
}

/// `G(z) = H(z) + z` (with `skip`) or `G(z) = H(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    pub h: Mlp,
    pub skip: bool,
    pub output: OutputTransform,
}

impl GeneratorNet {
    /// Identity-skip generator whose body starts close to zero.
    pub fn identity_init(spec: MlpSpec, init_scale: f64) -> Result<Self> {
        if spec.input_dim() != spec.output_dim() {
            return Err(Error::Validation("a skip connection needs equal input and output widths".into()));
        }
        let mut h = Mlp::new(spec)?;
        h.scale_output_layer(init_scale);
        Ok(Self {
            h,
            skip: true,
            output: OutputTransform::None,
        })
    }

    pub fn plain(spec: MlpSpec) -> Result<Self> {
        Ok(Self {
            h: Mlp::new(spec)?,
            skip: false,
            output: OutputTransform::None,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        self.h.bind(g)
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Bound> {
        self.h.bind_frozen(g)
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, z: NodeId, mode: Mode) -> Result<NodeId> {
        let mut out = self.h.forward(g, bound, z, mode)?;
        if self.skip {
            out = g.add(out, z)?;
        }
        if let OutputTransform::ClippedAffineTanh { scale } = self.output {
            let s = g.scale(out, 1.0 / scale)?;
            let t = g.tanh(s)?;
            out = g.scale(t, scale)?;
        }
        Ok(out)
    }

    /// Evaluation-mode map of a batch `[n, d]`.
    pub fn eval(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zi = g.constant(z.clone())?;
        let mut b = self.bind_frozen(&mut g)?;
        let out = self.forward(&mut g, &mut b, zi, Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.h.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.h.params_mut()
    }

    pub fn gradients(&self, grads: &Gradients, bound: &Bound) -> Vec<Tensor> {
        self.h.gradients(grads, bound)
    }

    pub fn commit_batch_stats(&mut self, bound: &Bound, batch: usize) {
        self.h.commit_batch_stats(bound, batch)
    }
}

/// How ψ is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Direct,
    /// `ψ(y) = −φ(y) + ε(y)`.
    EpsilonReparam,
}

/// The discriminator `(φ, ψ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialPair {
    pub phi: Mlp,
    /// ψ itself in direct mode, ε in reparameterized mode.
    pub second: Mlp,
    pub parameterization: Parameterization,
}

#[derive(Debug)]
pub struct BoundPair {
    pub phi: Bound,
    pub second: Bound,
}

impl PotentialPair {
    pub fn new(spec: MlpSpec, parameterization: Parameterization, seed: u64) -> Result<Self> {
        if spec.output_dim() != 1 {
            return Err(Error::Validation("potentials must have scalar output".into()));
        }
        let phi = Mlp::new(MlpSpec { seed, ..spec.clone() })?;
        let second = Mlp::new(MlpSpec {
            seed: crate::datasets::derive_seed(seed, 1),
            ..spec
        })?;
        Ok(Self {
            phi,
            second,
            parameterization,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundPair> {
        Ok(BoundPair {
            phi: self.phi.bind(g)?,
            second: self.second.bind(g)?,
        })
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Result<BoundPair> {
        Ok(BoundPair {
            phi: self.phi.bind_frozen(g)?,
            second: self.second.bind_frozen(g)?,
        })
    }

    /// `φ(x)` as `[n, 1]`.
    pub fn phi_node(&self, g: &mut Graph, b: &mut BoundPair, x: NodeId) -> Result<NodeId> {
        self.phi.forward(g, &mut b.phi, x, Mode::Eval)
    }

    /// `ε(y)`; only meaningful in reparameterized mode.
    pub fn eps_node(&self, g: &mut Graph, b: &mut BoundPair, y: NodeId) -> Result<NodeId> {
        self.second.forward(g, &mut b.second, y, Mode::Eval)
    }

    /// `ψ(y)` as `[n, 1]`.
    pub fn psi_node(&self, g: &mut Graph, b: &mut BoundPair, y: NodeId) -> Result<NodeId> {
        match self.parameterization {
            Parameterization::Direct => self.second.forward(g, &mut b.second, y, Mode::Eval),
            Parameterization::EpsilonReparam => {
                let p = self.phi.forward(g, &mut b.phi, y, Mode::Eval)?;
                let e = self.second.forward(g, &mut b.second, y, Mode::Eval)?;
                g.sub(e, p)
            }
        }
    }

    pub fn phi(&self, x: &Tensor) -> Result<Tensor> {
        self.phi.eval(x)
    }

    pub fn psi(&self, y: &Tensor) -> Result<Tensor> {
        match self.parameterization {
            Parameterization::Direct => self.second.eval(y),
            Parameterization::EpsilonReparam => {
                let p = self.phi.eval(y)?;
                Ok(self.second.eval(y)?.zip_map(&p, |e, p| e - p))
            }
        }
    }

    /// `∇φ(x)` row by row.
    pub fn phi_gradient(&self, x: &Tensor) -> Result<Tensor> {
        self.phi.input_gradient(x)
    }

    /// `x − ∇φ(x)`, the transport map encoded by φ.
    pub fn map_from_phi(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.zip_map(&self.phi_gradient(x)?, |a, b| a - b))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.phi.params();
        p.extend(self.second.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.phi.params_mut();
        p.extend(self.second.params_mut());
        p
    }

    pub fn gradients(&self, grads: &Gradients, b: &BoundPair) -> Vec<Tensor> {
        let mut out = self.phi.gradients(grads, &b.phi);
        out.extend(self.second.gradients(grads, &b.second));
        out
    }
}
