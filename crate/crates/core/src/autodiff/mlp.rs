use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, NodeId, NormStats};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

/// Architecture of a fully connected network.
///
/// `layer_widths` lists input width, hidden widths and output width, so a
/// network with `k` affine layers has `k + 1` widths and `k` activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub batch_norm: Vec<bool>,
    pub seed: u64,
}

impl MlpSpec {
    /// Hidden layers share one activation and the output layer is linear.
    pub fn uniform(input: usize, hidden: &[usize], output: usize, act: Activation, bn: bool, seed: u64) -> Self {
        let mut layer_widths = vec![input];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(output);
        let k = hidden.len() + 1;
        let mut activations = vec![act; k];
        activations[k - 1] = Activation::None;
        let mut batch_norm = vec![bn; k];
        batch_norm[k - 1] = false;
        Self {
            layer_widths,
            activations,
            batch_norm,
            seed,
        }
    }

    /// Scalar potential `R^d -> R` with two hidden ReLU layers of width 128.
    pub fn potential(dim: usize, seed: u64) -> Self {
        Self::uniform(dim, &[128, 128], 1, Activation::Relu, false, seed)
    }

    /// Generator body: four hidden layers of width 128 with batch norm.
    pub fn generator(dim: usize, seed: u64) -> Self {
        Self::uniform(dim, &[128; 4], dim, Activation::Relu, true, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.layer_widths.len().saturating_sub(1);
        if k == 0 {
            return Err(Error::Validation("an MLP needs at least one layer".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        if self.activations.len() != k || self.batch_norm.len() != k {
            return Err(Error::Validation(format!(
                "{k} layers but {} activations and {} batch-norm flags",
                self.activations.len(),
                self.batch_norm.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BatchNormParams {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    weight: Tensor,
    bias: Tensor,
    bn: Option<BatchNormParams>,
    activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm layers.
    Train,
    /// Running statistics in batch-norm layers.
    Eval,
}

/// Parameters of an [`Mlp`] recorded on a graph.
#[derive(Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
    batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Bound {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Multilayer perceptron with Xavier-uniform initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                let bn = spec.batch_norm[l].then(|| BatchNormParams {
                    gamma: Tensor::full(&[1, fan_out], 1.0),
                    beta: Tensor::zeros(&[1, fan_out]),
                    running_mean: vec![0.0; fan_out],
                    running_var: vec![1.0; fan_out],
                });
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("sized by construction"),
                    bias: Tensor::zeros(&[1, fan_out]),
                    bn,
                    activation: spec.activations[l],
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Multiplies the final layer's weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("validated non-empty");
        last.weight.data_mut().iter_mut().for_each(|w| *w *= factor);
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(bn) = &l.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Names matching [`params`](Self::params), e.g. `layer0.weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("layer{i}.weight"));
            out.push(format!("layer{i}.bias"));
            if l.bn.is_some() {
                out.push(format!("layer{i}.bn.gamma"));
                out.push(format!("layer{i}.bn.beta"));
            }
        }
        out
    }

    /// Running batch-norm statistics as named vectors.
    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(bn) = &l.bn {
                out.push((format!("layer{i}.bn.running_mean"), Tensor::vector(&bn.running_mean)));
                out.push((format!("layer{i}.bn.running_var"), Tensor::vector(&bn.running_var)));
            }
        }
        out
    }

    pub fn set_buffer(&mut self, name: &str, value: &Tensor) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Some(bn) = &mut l.bn {
                let target = if name == format!("layer{i}.bn.running_mean") {
                    &mut bn.running_mean
                } else if name == format!("layer{i}.bn.running_var") {
                    &mut bn.running_var
                } else {
                    continue;
                };
                if target.len() != value.len() {
                    return Err(Error::Shape(format!("buffer {name} has {} entries, got {}", target.len(), value.len())));
                }
                target.copy_from_slice(value.data());
                return Ok(());
            }
        }
        Err(Error::Validation(format!("unknown buffer {name}")))
    }

    fn bind_as(&self, g: &mut Graph, trainable: bool) -> Result<Bound> {
        let ids = self
            .params()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect::<Result<_>>()?;
        Ok(Bound {
            ids,
            batch_stats: vec![None; self.layers.len()],
        })
    }

    /// Records the parameters as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        self.bind_as(g, true)
    }

    /// Records the parameters as constants (no parameter gradients).
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Bound> {
        self.bind_as(g, false)
    }

    /// Applies the network to `x` (`[n, input_dim]`).
    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId, mode: Mode) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.spec.input_dim() {
            return Err(Error::NodeShape {
                node: x.index(),
                op: "mlp_input",
                detail: format!("expected [n, {}], got {shape:?}", self.spec.input_dim()),
            });
        }
        let mut h = x;
        let mut k = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (w, b) = (bound.ids[k], bound.ids[k + 1]);
            k += 2;
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            if let Some(bn) = &layer.bn {
                let (gamma, beta) = (bound.ids[k], bound.ids[k + 1]);
                k += 2;
                let stats = match mode {
                    Mode::Train => NormStats::Batch,
                    Mode::Eval => NormStats::Fixed {
                        mean: bn.running_mean.clone(),
                        var: bn.running_var.clone(),
                    },
                };
                let (out, mean, var) = g.batch_norm(h, gamma, beta, &stats, BN_EPS)?;
                if mode == Mode::Train {
                    bound.batch_stats[l] = Some((mean, var));
                }
                h = out;
            }
            h = match layer.activation {
                Activation::Relu => g.relu(h)?,
                Activation::Tanh => g.tanh(h)?,
                Activation::None => h,
            };
        }
        Ok(h)
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running averages. The running variance uses the unbiased estimate.
    pub fn commit_batch_stats(&mut self, bound: &Bound, batch: usize) {
        let unbias = if batch > 1 { batch as f64 / (batch - 1) as f64 } else { 1.0 };
        for (layer, stats) in self.layers.iter_mut().zip(&bound.batch_stats) {
            if let (Some(bn), Some((mean, var))) = (&mut layer.bn, stats) {
                for j in 0..mean.len() {
                    bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
                    bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * var[j] * unbias;
                }
            }
        }
    }

    /// Parameter gradients in [`params`](Self::params) order; missing
    /// entries are zero.
    pub fn gradients(&self, grads: &Gradients, bound: &Bound) -> Vec<Tensor> {
        self.params()
            .iter()
            .zip(&bound.ids)
            .map(|(p, &id)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }

    /// Evaluation-mode forward pass on a batch.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone())?;
        let mut b = self.bind_frozen(&mut g)?;
        let out = self.forward(&mut g, &mut b, xi, Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    /// `∇ₓ f(x)` row by row for a scalar-output network.
    pub fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        if self.spec.output_dim() != 1 {
            return Err(Error::Contract(format!(
                "input gradient needs a scalar network, output width is {}",
                self.spec.output_dim()
            )));
        }
        let mut g = Graph::new();
        let xi = g.input(x.clone())?;
        let mut b = self.bind_frozen(&mut g)?;
        let out = self.forward(&mut g, &mut b, xi, Mode::Eval)?;
        // rows are independent in eval mode, so the gradient of the sum
        // holds every per-row gradient
        let total = g.sum(out)?;
        let grads = g.backward_scalar(total)?;
        Ok(grads.get(xi).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_input_gradient(net: &Mlp, x: &Tensor, h: f64) -> Tensor {
        let mut out = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let (fp, fm) = (net.eval(&xp).unwrap().sum(), net.eval(&xm).unwrap().sum());
            out.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        out
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let spec = MlpSpec::uniform(2, &[], 2, Activation::None, false, 0);
        let mut net = Mlp::new(spec).unwrap();
        let w = net.params_mut();
        w.into_iter().next().unwrap().data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::matrix(1, 2, vec![3.0, -1.0]).unwrap();
        assert_eq!(net.eval(&x).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = Mlp::new(MlpSpec::uniform(2, &[16, 16], 1, Activation::Tanh, false, 3)).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.3, -0.2, 1.1, 0.4, -0.7, 0.9]).unwrap();
        let g = net.input_gradient(&x).unwrap();
        let fd = fd_input_gradient(&net, &x, 1e-5);
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn input_gradient_rejects_vector_output() {
        let net = Mlp::new(MlpSpec::generator(2, 0)).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(net.input_gradient(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_network_has_zero_gradient() {
        let mut net = Mlp::new(MlpSpec::potential(2, 1)).unwrap();
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let bias = net.params_mut().pop().unwrap();
        bias.data_mut()[0] = 4.0;
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        assert_eq!(net.eval(&x).unwrap().data(), &[4.0, 4.0]);
        assert!(net.input_gradient(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let a = Mlp::new(MlpSpec::potential(2, 9)).unwrap();
        let b = Mlp::new(MlpSpec::potential(2, 9)).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 130.0).sqrt();
        assert!(a.params()[0].data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn running_stats_track_batches() {
        let mut net = Mlp::new(MlpSpec::uniform(1, &[1], 1, Activation::None, true, 2)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let mut b = net.bind(&mut g).unwrap();
        net.forward(&mut g, &mut b, x, Mode::Train).unwrap();
        let w = net.params()[0].data()[0];
        net.commit_batch_stats(&b, 4);
        let buf = net.buffers();
        // batch mean of w*x is 2.5w, unbiased variance 5/3 w^2
        assert!((buf[0].1.data()[0] - 0.1 * 2.5 * w).abs() < 1e-12);
        assert!((buf[1].1.data()[0] - (0.9 + 0.1 * 5.0 / 3.0 * w * w)).abs() < 1e-12);
    }
}
