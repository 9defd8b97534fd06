use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(beta1: f64, beta2: f64) -> Self {
        Self::Adam {
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// Whether the step follows or opposes the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Descent,
    Ascent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub direction: Direction,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, direction: Direction) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {learning_rate}")));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            let ok = |b: f64| b > 0.0 && b < 1.0;
            if !ok(beta1) || !ok(beta2) || eps <= 0.0 {
                return Err(Error::Validation(format!("Adam betas must lie in (0,1), got ({beta1}, {beta2})")));
            }
        }
        Ok(Self {
            kind,
            learning_rate,
            direction,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// One update of `params` from `grads` (same order and shapes).
    pub fn apply(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {i} at entry {k}")));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::Shape("gradients do not match the moment buffers".into()));
        }
        self.step_count += 1;
        let sign = match self.direction {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        };
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w += sign * lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    for (((w, &d), mk), vk) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mk = beta1 * *mk + (1.0 - beta1) * d;
                        *vk = beta2 * *vk + (1.0 - beta2) * d * d;
                        let mhat = *mk / c1;
                        let vhat = *vk / c2;
                        *w += sign * lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = Tensor::vector(&[1.0]);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, Direction::Descent).unwrap();
        opt.apply(vec![&mut p], &[Tensor::vector(&[2.0])]).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn adam_first_step_is_lr_over_one_plus_eps() {
        let mut p = Tensor::vector(&[0.0]);
        let kind = OptimizerKind::adam(0.5, 0.999);
        let mut opt = OptimizerState::new(kind, 1.0, Direction::Descent).unwrap();
        opt.apply(vec![&mut p], &[Tensor::vector(&[1.0])]).unwrap();
        // bias-corrected moments are exactly g and g^2 after one step
        assert!((p.data()[0] + 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam(0.5, 0.999)] {
            let mut p = Tensor::vector(&[0.25, -3.0]);
            let mut opt = OptimizerState::new(kind, 0.01, Direction::Ascent).unwrap();
            for _ in 0..10 {
                opt.apply(vec![&mut p], &[Tensor::zeros(&[2])]).unwrap();
            }
            assert!((p.data()[0] - 0.25).abs() < 1e-12 && (p.data()[1] + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Tensor::vector(&[1.0]);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, Direction::Descent).unwrap();
        let err = opt.apply(vec![&mut p], &[Tensor::vector(&[f64::NAN])]).unwrap_err();
        assert!(err.is_numerical());
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn ascent_flips_sign() {
        let mut p = Tensor::vector(&[1.0]);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, Direction::Ascent).unwrap();
        opt.apply(vec![&mut p], &[Tensor::vector(&[2.0])]).unwrap();
        assert!((p.data()[0] - 1.2).abs() < 1e-15);
    }
}
