use std::collections::BTreeMap;

use crate::exec::{ExecError, ParamId};
use crate::grounding::ConceptRegistry;
use crate::tensor::{Tensor, TensorError};

use super::TrainError;

/// Adam with the usual moment defaults. Parameters without a gradient in a
/// step are left untouched, moments included.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(
        &mut self,
        reg: &mut ConceptRegistry,
        grads: &BTreeMap<ParamId, Tensor>,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            let Some(param) = reg.param_mut(id) else {
                continue;
            };
            let n = param.numel();
            let (m, v) = self
                .moments
                .entry(id.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (i, p) in param.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *p -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            if param.data().iter().any(|x| !x.is_finite()) {
                return Err(ExecError::from(TensorError::NonFinite("adam update")).into());
            }
        }
        Ok(())
    }
}
