//! Dense tensors, a fixed-topology tanh MLP with hand-written backward pass,
//! Adam, and the parameter checkpoint format.

mod adam;
mod checkpoint;
mod mlp;
mod moments;
mod tensor;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use mlp::{ForwardCache, Layer, MlpParams, DEFAULT_HIDDEN};
pub use moments::RunningMoments;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// A named collection of parameter tensors. Gradients of a parameter set are
/// represented with the same type, so optimizers can zip the two.
pub trait ParamSet {
    /// Tensors in a fixed order, each paired with a stable name.
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;

    /// Mutable tensors in the same order as [`ParamSet::named_tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// A structurally identical set with every entry zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Concatenated entries in tensor order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.named_tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrite entries from a flat vector produced by [`ParamSet::flatten`].
    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors_mut().iter().map(|t| t.len()).sum();
        if total != flat.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, parameter set has {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += scale * other`, entrywise.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src: Vec<Vec<f64>> = other
            .named_tensors()
            .into_iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.data_mut().iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    fn sq_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|v| v * v)
            .sum()
    }
}
