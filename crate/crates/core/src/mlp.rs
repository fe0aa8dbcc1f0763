//! Feedforward network with hand-written backward pass.
//!
//! The activation is applied between layers; the last layer is linear.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{add_outer, uniform_matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`.
    #[serde(with = "crate::tensor::matrix")]
    pub weight: Array2<f64>,
    #[serde(with = "crate::tensor::vector")]
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Intermediate values of a forward pass needed by [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Array1<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array1<f64>>,
}

impl MlpParams {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("MLP needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::Argument(format!("MLP layer {k}: bias length mismatch")));
            }
            if k > 0 && l.weight.ncols() != layers[k - 1].weight.nrows() {
                return Err(Error::Argument(format!(
                    "MLP layer {k} expects {} inputs but the previous layer has {} outputs",
                    l.weight.ncols(),
                    layers[k - 1].weight.nrows()
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Seeded uniform initialization for layer sizes `sizes[0] -> .. -> sizes[k]`;
    /// biases start at zero.
    pub fn random<R: Rng>(rng: &mut R, sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weight: uniform_matrix(rng, w[1], w[0], w[0]),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers, activation }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers, activation }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, MlpCache)> {
        if x.len() != self.input_size() {
            return Err(Error::Argument(format!(
                "MLP input has length {}, expected {}",
                x.len(),
                self.input_size()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.weight.dot(&a) + &layer.bias;
            inputs.push(a);
            if k < last {
                a = z.mapv(|v| self.activation.apply(v));
                pre.push(z);
            } else {
                a = z;
            }
        }
        Ok((a, MlpCache { inputs, pre }))
    }

    /// Adds parameter gradients for `upstream = dL/dy` into `grads` and
    /// returns `dL/dx`.
    pub fn backward_into(&self, cache: &MlpCache, upstream: ArrayView1<f64>, grads: &mut MlpParams) -> Array1<f64> {
        let mut delta = upstream.to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            add_outer(&mut grads.layers[k].weight, delta.view(), cache.inputs[k].view());
            grads.layers[k].bias += &delta;
            let mut back = layer.weight.t().dot(&delta);
            if k > 0 {
                let z = &cache.pre[k - 1];
                let a = &cache.inputs[k];
                for ((b, &zv), &av) in back.iter_mut().zip(z.iter()).zip(a.iter()) {
                    *b *= self.activation.derivative(zv, av);
                }
            }
            delta = back;
        }
        delta
    }

    /// Parameter gradients and input gradient for `upstream = dL/dy`.
    pub fn backward(&self, cache: &MlpCache, upstream: ArrayView1<f64>) -> (MlpParams, Array1<f64>) {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, upstream, &mut grads);
        (grads, dx)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Free-function form of [`MlpParams::forward`].
pub fn mlp_forward(mlp: &MlpParams, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    mlp.forward(x)
}

/// Forward then backward in one call: returns the output, the parameter
/// gradients, and the input gradient for `upstream = dL/dy`.
pub fn mlp_backward(
    mlp: &MlpParams,
    x: ArrayView1<f64>,
    upstream: ArrayView1<f64>,
) -> Result<(Array1<f64>, MlpParams, Array1<f64>)> {
    let (y, cache) = mlp.forward_cached(x)?;
    if upstream.len() != y.len() {
        return Err(Error::Argument("upstream gradient length mismatch".into()));
    }
    let (grads, dx) = mlp.backward(&cache, upstream);
    Ok((y, grads, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = MlpParams::zeros(&[3, 5, 2], Activation::Tanh);
        let y = mlp.forward(array![1.0, -2.0, 3.0].view()).unwrap();
        assert_eq!(y, Array1::<f64>::zeros(2));
    }

    #[test]
    fn single_linear_layer() {
        let layer = DenseLayer {
            weight: array![[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]],
            bias: Array1::zeros(3),
        };
        let mlp = MlpParams::new(vec![layer], Activation::Relu).unwrap();
        let y = mlp.forward(array![2.0, -1.0].view()).unwrap();
        assert_eq!(y, array![0.0, 2.0, -3.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mlp = MlpParams::zeros(&[3, 2], Activation::Tanh);
        assert!(mlp.forward(array![1.0].view()).is_err());
        let bad = vec![
            DenseLayer {
                weight: Array2::zeros((4, 3)),
                bias: Array1::zeros(4),
            },
            DenseLayer {
                weight: Array2::zeros((2, 5)),
                bias: Array1::zeros(2),
            },
        ];
        assert!(MlpParams::new(bad, Activation::Tanh).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for activation in [Activation::Tanh, Activation::Relu] {
            for _ in 0..5 {
                let mlp = MlpParams::random(&mut rng, &[4, 6, 3], activation);
                let x: Array1<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c: Array1<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let loss = |m: &MlpParams, x: &Array1<f64>| m.forward(x.view()).unwrap().dot(&c);
                let (_, grads, dx) = mlp_backward(&mlp, x.view(), c.view()).unwrap();
                let h = 1e-5;
                let check = |analytic: f64, fd: f64| {
                    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                    assert!(rel <= 1e-4 || (analytic - fd).abs() < 1e-8, "{analytic} vs {fd}");
                };
                for k in 0..x.len() {
                    let mut xp = x.clone();
                    xp[k] += h;
                    let mut xm = x.clone();
                    xm[k] -= h;
                    check(dx[k], (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h));
                }
                let n_tensors = mlp.tensors().len();
                for t in 0..n_tensors {
                    let len = mlp.tensors()[t].len();
                    for e in 0..len {
                        let mut plus = mlp.clone();
                        plus.tensors_mut()[t][e] += h;
                        let mut minus = mlp.clone();
                        minus.tensors_mut()[t][e] -= h;
                        let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                        check(grads.tensors()[t][e], fd);
                    }
                }
            }
        }
    }
}
