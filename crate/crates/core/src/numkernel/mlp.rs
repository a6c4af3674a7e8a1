//! Fixed-architecture MLP with a hand-derived backward pass.

use crate::error::{RaddError, Result};
use crate::numkernel::tensor::{GradBuf, Tensor};

/// Hidden-layer nonlinearity. The final layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Smooth gated unit: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    GeluTanh,
    /// No nonlinearity (useful in tests).
    Identity,
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::GeluTanh => gelu(x),
            Activation::Identity => x,
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::GeluTanh => gelu_deriv(x),
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: `y = W·x + b` with `W` of shape out×in.
#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub weight: Tensor,
    pub bias: Tensor, // 1 x out
}

impl MlpLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// MLP parameters. The hidden activation applies to every layer but the last.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<MlpLayer>,
    pub activation: Activation,
}

impl MlpParams {
    /// Validates that consecutive layer dimensions chain.
    pub fn new(layers: Vec<MlpLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(RaddError::InvalidArg("MLP needs at least one layer".into()));
        }
        for w in windows(&layers) {
            let (a, b) = w;
            if a.out_dim() != b.in_dim() {
                return Err(RaddError::DimMismatch(format!(
                    "MLP layer output {} does not chain into input {}",
                    a.out_dim(),
                    b.in_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.rows() != 1 || l.bias.cols() != l.out_dim() {
                return Err(RaddError::DimMismatch(format!(
                    "MLP bias shape {:?} does not match output dim {}",
                    l.bias.shape(),
                    l.out_dim()
                )));
            }
        }
        Ok(MlpParams { layers, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }
}

fn windows(layers: &[MlpLayer]) -> impl Iterator<Item = (&MlpLayer, &MlpLayer)> {
    layers.iter().zip(layers.iter().skip(1))
}

/// Activation record from a forward pass, sufficient for `mlp_backward`.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    preacts: Vec<Vec<f64>>,
}

/// Forward pass; returns the output vector and the tape for the backward pass.
pub fn mlp_apply(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
    if input.len() != params.in_dim() {
        return Err(RaddError::DimMismatch(format!(
            "MLP input length {} expected {}",
            input.len(),
            params.in_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut preacts = Vec::with_capacity(n_layers);
    let mut x = input.to_vec();
    for (li, layer) in params.layers.iter().enumerate() {
        let out_dim = layer.out_dim();
        let mut z = vec![0.0f64; out_dim];
        for (o, zo) in z.iter_mut().enumerate() {
            let wrow = layer.weight.row(o);
            let mut acc = layer.bias.get(0, o);
            for (wi, xi) in wrow.iter().zip(&x) {
                acc += wi * xi;
            }
            *zo = acc;
        }
        inputs.push(std::mem::take(&mut x));
        if li + 1 < n_layers {
            x = z.iter().map(|&v| params.activation.apply(v)).collect();
        } else {
            x = z.clone();
        }
        preacts.push(z);
    }
    Ok((x, MlpTape { inputs, preacts }))
}

/// Gradient buffers for one MLP, shaped like its layers.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(GradBuf, GradBuf)>, // (d_weight, d_bias)
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| (GradBuf::zeros_like(&l.weight), GradBuf::zeros_like(&l.bias)))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: &MlpGrads) -> Result<()> {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.merge(ow)?;
            b.merge(ob)?;
        }
        Ok(())
    }
}

/// Backward pass for the scalar whose output-gradient is `output_grad`.
///
/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the input vector.
pub fn mlp_backward(
    params: &MlpParams,
    tape: &MlpTape,
    output_grad: &[f64],
    grads: &mut MlpGrads,
) -> Result<Vec<f64>> {
    let n_layers = params.layers.len();
    if tape.inputs.len() != n_layers || output_grad.len() != params.out_dim() {
        return Err(RaddError::DimMismatch(
            "stale tape or wrong output gradient length".into(),
        ));
    }
    let mut dz = output_grad.to_vec();
    for li in (0..n_layers).rev() {
        let layer = &params.layers[li];
        let input = &tape.inputs[li];
        if input.len() != layer.in_dim() {
            return Err(RaddError::DimMismatch("stale tape".into()));
        }
        // dz currently holds dL/d(post-activation of layer li); fold the
        // activation derivative in for hidden layers.
        if li + 1 < n_layers {
            for (d, z) in dz.iter_mut().zip(&tape.preacts[li]) {
                *d *= params.activation.deriv(*z);
            }
        }
        let (gw, gb) = &mut grads.layers[li];
        let mut dx = vec![0.0f64; layer.in_dim()];
        for (o, d) in dz.iter().enumerate() {
            gb.add(0, o, *d);
            let wrow = layer.weight.row(o);
            for (i, xi) in input.iter().enumerate() {
                gw.add(o, i, d * xi);
                dx[i] += *d * wrow[i];
            }
        }
        dz = dx;
    }
    Ok(dz)
}
