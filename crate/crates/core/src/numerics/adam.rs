use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    ///
    /// Fails without touching any state if a gradient entry is non-finite or
    /// the gradient layout does not mirror the parameters.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let named = grads.named_tensors();
        if named.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, gradient has {}",
                self.m.len(),
                named.len()
            )));
        }
        for ((name, g), m) in named.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "gradient {name} has shape {:?}, expected {:?}",
                    g.shape(),
                    m.shape()
                )));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient entry {} in {name} at index {i}",
                    g.data()[i]
                )));
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let targets = params.tensors_mut();
        for (((p, (_, g)), m), v) in targets
            .into_iter()
            .zip(&named)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}
