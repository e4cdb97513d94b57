use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Identity => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Affine map `y = act(x·W + b)` with `W` stored inputs×outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::shape("DenseLayer bias", weights.cols(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    version: u64,
}

/// Activations recorded by [`DenseNet::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Gradient buffers in the same order as [`DenseNet::params_mut`].
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "DenseNet layer chain",
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// He-normal weights (unit gain for identity layers), zero biases.
    /// `dims` lists every width from input to output; all hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(
                "network dims need at least two positive entries",
            ));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                let gain = if act == Activation::Relu { 2.0 } else { 1.0 };
                let std = (gain / w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                DenseLayer::new(Matrix::new(w[0], w[1], data)?, vec![0.0; w[1]], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameter version; bumped whenever parameters may have changed.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable parameter buffers: weights then bias of each layer in order.
    /// Borrowing them invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(
                "DenseNet::forward input",
                self.input_dim(),
                input.cols(),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let mut y = z.clone();
            for v in y.as_mut_slice() {
                *v = layer.activation.apply(*v);
            }
            inputs.push(x);
            pre_activations.push(z);
            x = y;
        }
        let cache = ForwardCache {
            version: self.version,
            inputs,
            pre_activations,
        };
        Ok((x, cache))
    }

    /// Output only, no cache.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward(input)?.0)
    }

    /// Reverse-mode pass for `upstream = ∂L/∂output`; returns parameter
    /// gradients and `∂L/∂input`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache {
                cache: cache.version,
                network: self.version,
            });
        }
        let out_rows = cache.pre_activations.last().unwrap().rows();
        if upstream.rows() != out_rows || upstream.cols() != self.output_dim() {
            return Err(Error::shape(
                "DenseNet::backward upstream",
                out_rows * self.output_dim(),
                upstream.as_slice().len(),
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[i];
            for (gv, &z) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                *gv *= layer.activation.derivative(z);
            }
            let x = &cache.inputs[i];
            let dw = x.transpose().matmul(&g)?;
            let mut db = vec![0.0; layer.output_dim()];
            for row in g.row_iter() {
                for (b, v) in db.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let dx = g.matmul(&layer.weights.transpose())?;
            grads.push(LayerGrad {
                weights: dw,
                bias: db,
            });
            g = dx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }
}
