use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Silu,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Silu => "silu",
            Activation::Identity => "none",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "none" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation tag '{other}'"))),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Elementwise `x * sigmoid(x)`.
pub fn silu(x: &Tensor) -> Result<Tensor> {
    x.ensure_finite("silu input")?;
    Ok(x.map(silu_scalar))
}

impl Activation {
    fn apply(self, pre: &Tensor) -> Tensor {
        match self {
            Activation::Silu => pre.map(silu_scalar),
            Activation::Identity => pre.clone(),
        }
    }

    fn chain(self, pre: &Tensor, grad_out: &Tensor) -> Tensor {
        match self {
            Activation::Silu => {
                let data = pre
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&p, &g)| g * silu_derivative(p))
                    .collect();
                Tensor::new(pre.shape().to_vec(), data).expect("same shape")
            }
            Activation::Identity => grad_out.clone(),
        }
    }
}

/// Gradients laid out in the same order as [`Parameterized::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn zeros_like(sizes: impl IntoIterator<Item = usize>) -> Self {
        ParamGrads(sizes.into_iter().map(|n| vec![0.0; n]).collect())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Shape(format!(
                "gradient groups differ: {} vs {}",
                self.0.len(),
                other.0.len()
            )));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            if a.len() != b.len() {
                return Err(Error::Shape("gradient group sizes differ".into()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradients of {context}")));
        }
        Ok(())
    }
}

/// Anything that owns trainable `f64` parameters in a fixed order.
pub trait Parameterized {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_sizes(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    fn num_params(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    fn zero_grads(&self) -> ParamGrads {
        ParamGrads::zeros_like(self.param_sizes())
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().into_iter().flatten().copied().collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(Error::Shape(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Hash of the exact bit patterns of all parameters.
    fn param_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for s in self.param_slices() {
            h.write_usize(s.len());
            for v in s {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl Dense {
    /// Uniform init in `±1/sqrt(in_dim)` for both weights and bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            weight: Tensor::matrix(out_dim, in_dim, weight).expect("sized"),
            bias: Tensor::vector(bias),
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(vec![out_dim, in_dim]),
            bias: Tensor::zeros(vec![out_dim]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Shape(format!(
                "weight {:?} incompatible with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let rows = x.rows();
        let mut pre = vec![0.0; rows * self.out_dim()];
        parallel::linear_forward(x.data(), self.in_dim(), self.weight.data(), self.bias.data(), &mut pre);
        let pre = Tensor::matrix(rows, self.out_dim(), pre)?;
        let out = self.activation.apply(&pre);
        Ok((pre, out))
    }

    /// Accumulates weight/bias gradients into `dw`/`db` and optionally
    /// returns the gradient with respect to the layer input.
    pub fn backward_into(
        &self,
        x: &Tensor,
        pre: &Tensor,
        grad_out: &Tensor,
        dw: &mut [f64],
        db: &mut [f64],
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        if pre.shape() != grad_out.shape() || x.rows() != pre.rows() || x.cols() != self.in_dim() {
            return Err(Error::Consistency(format!(
                "backward: input {:?}, pre-activation {:?}, gradient {:?}",
                x.shape(),
                pre.shape(),
                grad_out.shape()
            )));
        }
        let g = self.activation.chain(pre, grad_out);
        parallel::linear_weight_grad(g.data(), x.data(), self.in_dim(), dw, db);
        if !want_input_grad {
            return Ok(None);
        }
        let mut dx = vec![0.0; x.rows() * self.in_dim()];
        parallel::linear_input_grad(g.data(), self.weight.data(), self.in_dim(), self.out_dim(), &mut dx);
        Ok(Some(Tensor::matrix(x.rows(), self.in_dim(), dx)?))
    }
}

impl Parameterized for Dense {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), self.bias.data()]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), self.bias.data_mut()]
    }
}

/// Inputs and pre-activations of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ActivationRecord {
    pub inputs: Vec<Tensor>,
    pub pre: Vec<Tensor>,
}

/// Result of a backward pass through a network.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: ParamGrads,
    pub input: Tensor,
}

/// A plain chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    /// `dims = [input, hidden..., output]`; hidden layers use `hidden`, the
    /// last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("a network needs at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::new(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ActivationRecord)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (p, out) = layer.forward(&x)?;
            inputs.push(x);
            pre.push(p);
            x = out;
        }
        Ok((x, ActivationRecord { inputs, pre }))
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.layers[0].forward(input)?.1;
        for layer in &self.layers[1..] {
            x = layer.forward(&x)?.1;
        }
        Ok(x)
    }

    pub fn backward(&self, tape: &ActivationRecord, output_grad: &Tensor) -> Result<Backward> {
        let mut grads = self.zero_grads();
        let input = self.backward_into(tape, output_grad, &mut grads.0)?;
        Ok(Backward { params: grads, input })
    }

    /// Accumulates parameter gradients into `groups` (two per layer).
    pub(crate) fn backward_into(
        &self,
        tape: &ActivationRecord,
        output_grad: &Tensor,
        groups: &mut [Vec<f64>],
    ) -> Result<Tensor> {
        if tape.inputs.len() != self.layers.len() || tape.pre.len() != self.layers.len() {
            return Err(Error::Consistency(format!(
                "tape has {} layers, network has {}",
                tape.inputs.len(),
                self.layers.len()
            )));
        }
        if groups.len() != 2 * self.layers.len() {
            return Err(Error::Consistency("gradient buffer does not match network".into()));
        }
        let mut g = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dw, db) = groups[2 * i..2 * i + 2].split_at_mut(1);
            g = layer
                .backward_into(&tape.inputs[i], &tape.pre[i], &g, &mut dw[0], &mut db[0], true)?
                .expect("input grad requested");
        }
        Ok(g)
    }
}

impl Parameterized for DenseNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.param_slices_mut()).collect()
    }
}
