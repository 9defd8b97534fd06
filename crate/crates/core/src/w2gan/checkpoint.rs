use serde::{Deserialize, Serialize};

use super::nets::GeneratorNet;
use crate::autodiff::{Mlp, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: String, t: &Tensor) -> Self {
        Self {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

/// Named parameter and buffer tensors of one network at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: usize,
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_mlp(net: &Mlp, iteration: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            iteration,
            params: net
                .param_names()
                .into_iter()
                .zip(net.params())
                .map(|(n, t)| NamedTensor::new(n, t))
                .collect(),
            buffers: net.buffers().into_iter().map(|(n, t)| NamedTensor::new(n, &t)).collect(),
        }
    }

    pub fn from_generator(gen: &GeneratorNet, iteration: usize) -> Self {
        Self::from_mlp(&gen.h, iteration)
    }

    /// Copies the stored tensors into `net`, checking names and shapes.
    pub fn restore_mlp(&self, net: &mut Mlp) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!("unsupported checkpoint version {}", self.version)));
        }
        let names = net.param_names();
        if names.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, network has {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((name, slot), saved) in names.iter().zip(net.params_mut()).zip(&self.params) {
            if *name != saved.name || slot.shape() != saved.shape.as_slice() {
                return Err(Error::Validation(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    saved.name,
                    saved.shape,
                    name,
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(&saved.data);
        }
        for b in &self.buffers {
            net.set_buffer(&b.name, &Tensor::vector(&b.data))?;
        }
        Ok(())
    }

    pub fn restore_generator(&self, gen: &mut GeneratorNet) -> Result<()> {
        self.restore_mlp(&mut gen.h)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
