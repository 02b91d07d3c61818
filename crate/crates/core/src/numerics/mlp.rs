use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Hidden layer widths used for both actor and critic networks.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// One affine layer: `weight` is `out x in`, `bias` has length `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Multilayer perceptron with tanh hidden activations and identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Activations recorded by [`MlpParams::forward`]: the input to every layer
/// plus the final output. An empty (default) cache means no forward pass has
/// been recorded.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
}

impl ForwardCache {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl MlpParams {
    /// Build a network with the given layer sizes `[in, h1, ..., out]`,
    /// weights and biases drawn from `U(-sqrt(1/fan_in), +sqrt(1/fan_in))`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                };
                let weight = draw(fan_out * fan_in);
                let bias = draw(fan_out);
                Layer {
                    weight: Tensor::new(vec![fan_out, fan_in], weight).expect("sized"),
                    bias: Tensor::vector(bias),
                }
            })
            .collect();
        Self { layers }
    }

    /// Network with every weight and bias zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[1], w[0]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Self { layers }
    }

    /// `[in, h1, ..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(self.layers.iter().map(Layer::out_dim));
        s
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Check that adjacent layer dimensions chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("MLP has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.out_dim()] {
                return Err(Error::Shape(format!("layer {i} has inconsistent weight/bias shapes")));
            }
            if i > 0 && self.layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.in_dim(),
                    i - 1,
                    self.layers[i - 1].out_dim()
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != 2 || input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "MLP expects [batch x {}] input, got {:?}",
                self.in_dim(),
                input.shape()
            )));
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &Tensor, hidden: bool) -> Tensor {
        let batch = x.rows();
        let out_dim = layer.out_dim();
        let mut out = Vec::with_capacity(batch * out_dim);
        let bias = layer.bias.data();
        for b in 0..batch {
            let xr = x.row(b);
            for o in 0..out_dim {
                let z = bias[o] + dot(layer.weight.row(o), xr);
                out.push(if hidden { z.tanh() } else { z });
            }
        }
        Tensor::new(vec![batch, out_dim], out).expect("sized")
    }

    /// Evaluate the network on a `batch x in` matrix without recording
    /// activations.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut x = Self::affine(&self.layers[0], input, last != 0);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            x = Self::affine(layer, &x, i != last);
        }
        Ok(x)
    }

    /// Evaluate the network and record the activations needed by
    /// [`MlpParams::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = Self::affine(layer, &x, i != last);
            inputs.push(x);
            x = y;
        }
        Ok((x, ForwardCache { inputs }))
    }

    /// Reverse-mode gradients of `sum(grad_output * output)` with respect to
    /// every parameter and to the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<(MlpParams, Tensor)> {
        if cache.is_empty() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "forward cache has {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        let batch = cache.inputs[0].rows();
        if grad_output.shape() != [batch, self.out_dim()] {
            return Err(Error::Shape(format!(
                "grad_output must be [{batch} x {}], got {:?}",
                self.out_dim(),
                grad_output.shape()
            )));
        }

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        // Gradient w.r.t. the pre-activation of the current layer.
        let mut delta = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
            let mut dw = vec![0.0; out_dim * in_dim];
            let mut db = vec![0.0; out_dim];
            let mut dx = vec![0.0; batch * in_dim];
            for b in 0..batch {
                let xr = x.row(b);
                let dr = delta.row(b);
                let dxr = &mut dx[b * in_dim..(b + 1) * in_dim];
                for o in 0..out_dim {
                    let g = dr[o];
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g, xr);
                    axpy(dxr, g, layer.weight.row(o));
                }
            }
            grads.push(Layer {
                weight: Tensor::new(vec![out_dim, in_dim], dw)?,
                bias: Tensor::vector(db),
            });
            if i > 0 {
                // x is tanh of the previous pre-activation.
                for (d, a) in dx.iter_mut().zip(x.data()) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = Tensor::new(vec![batch, in_dim], dx)?;
        }
        grads.reverse();
        Ok((MlpParams { layers: grads }, delta))
    }
}

impl ParamSet for MlpParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layer{i}.weight"), &l.weight),
                    (format!("layer{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn zeros_like(&self) -> Self {
        MlpParams::zeros(&self.sizes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Triple-loop forward pass written independently of the implementation.
    fn naive_forward(net: &MlpParams, input: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = net.layers.len();
        input
            .iter()
            .map(|row| {
                let mut x = row.clone();
                for (li, l) in net.layers.iter().enumerate() {
                    let (o_dim, i_dim) = (l.weight.shape()[0], l.weight.shape()[1]);
                    let mut y = vec![0.0; o_dim];
                    for o in 0..o_dim {
                        let mut s = l.bias.data()[o];
                        for i in 0..i_dim {
                            s += l.weight.data()[o * i_dim + i] * x[i];
                        }
                        y[o] = if li + 1 < n { s.tanh() } else { s };
                    }
                    x = y;
                }
                x
            })
            .collect()
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = stream(seed, &[99]);
        let data = (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpParams::zeros(&[3, 64, 64, 2]);
        let out = net.predict(&random_input(5, 3, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_net_is_tanh() {
        let mut net = MlpParams::zeros(&[1, 1, 1]);
        net.layers[0].weight.data_mut()[0] = 1.0;
        net.layers[1].weight.data_mut()[0] = 1.0;
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let out = net.predict(&Tensor::new(vec![1, 1], vec![x]).unwrap()).unwrap();
            assert_eq!(out.data()[0], f64::tanh(x));
        }
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut r = stream(11, &[1]);
        let net = MlpParams::init(&[5, 7, 6, 3], &mut r);
        let x = random_input(4, 5, 2);
        let rows: Vec<Vec<f64>> = (0..4).map(|b| x.row(b).to_vec()).collect();
        let oracle = naive_forward(&net, &rows);
        let (out, _) = net.forward(&x).unwrap();
        for b in 0..4 {
            for o in 0..3 {
                assert!((out.row(b)[o] - oracle[b][o]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = MlpParams::zeros(&[3, 4, 1]);
        assert!(matches!(net.predict(&Tensor::zeros(&[2, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_without_cache_is_state_error() {
        let net = MlpParams::zeros(&[2, 3, 1]);
        let err = net.backward(&ForwardCache::default(), &Tensor::zeros(&[1, 1]));
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut r = stream(5, &[1]);
        let net = MlpParams::init(&[3, 8, 8, 2], &mut r);
        let (_, cache) = net.forward(&random_input(4, 3, 3)).unwrap();
        let (g, dx) = net.backward(&cache, &Tensor::zeros(&[4, 2])).unwrap();
        assert_eq!(g.sq_norm(), 0.0);
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_derivative() {
        let mut net = MlpParams::zeros(&[1, 1]);
        let (w, x) = (1.7, -0.4);
        net.layers[0].weight.data_mut()[0] = w;
        let (_, cache) = net.forward(&Tensor::new(vec![1, 1], vec![x]).unwrap()).unwrap();
        let (g, dx) = net.backward(&cache, &Tensor::filled(&[1, 1], 1.0)).unwrap();
        assert_eq!(g.layers[0].weight.data()[0], x);
        assert_eq!(g.layers[0].bias.data()[0], 1.0);
        assert_eq!(dx.data()[0], w);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut r = stream(8, &[1]);
        let net = MlpParams::init(&[4, 64, 64, 2], &mut r);
        let x = random_input(8, 4, 4);
        let a = net.predict(&x).unwrap();
        let b = net.forward(&x).unwrap().0;
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut r = stream(2, &[1]);
        let net = MlpParams::init(&[4, 64, 64, 1], &mut r);
        for l in &net.layers {
            let bound = (1.0 / l.in_dim() as f64).sqrt();
            assert!(l.weight.data().iter().chain(l.bias.data()).all(|v| v.abs() <= bound));
        }
        assert_eq!(net.sizes(), vec![4, 64, 64, 1]);
        net.validate().unwrap();
    }
}
