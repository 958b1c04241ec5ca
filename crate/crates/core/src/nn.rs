//! Dense networks split into base encoder, projection head and output layer.
//!
//! All weights of a [`Network`] live in one flat [`ParamVector`] in a
//! canonical order: for each layer (encoder layers first, then the two
//! projection layers, then the output layer) the row-major `out x in`
//! weight matrix followed by the length-`out` bias.
//!
//! `forward_repr` returns the projection-head output (the representation
//! used by the contrastive term); `forward_full` applies the output layer
//! to that representation and returns class logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Offset of the weight block in the flat parameter vector.
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.in_dim * self.out_dim
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn end(&self) -> usize {
        self.bias_offset() + self.out_dim
    }
}

impl Architecture {
    /// Encoder of `encoder_widths`, projection head whose hidden width equals
    /// `projection_dim`.
    pub fn new(input_dim: usize, encoder_widths: Vec<usize>, projection_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            encoder_widths,
            projection_hidden: projection_dim,
            projection_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.projection_hidden,
            self.projection_dim,
            self.num_classes,
        ];
        if dims.contains(&0) || self.encoder_widths.contains(&0) {
            return Err(Error::Config(format!("architecture has a zero-width layer: {self:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut specs: Vec<(usize, Activation)> = self.encoder_widths.iter().map(|&w| (w, Activation::Relu)).collect();
        specs.push((self.projection_hidden, Activation::Relu));
        specs.push((self.projection_dim, Activation::None));
        specs.push((self.num_classes, Activation::None));

        let mut in_dim = self.input_dim;
        let mut offset = 0;
        specs
            .into_iter()
            .map(|(out_dim, activation)| {
                let layer = LayerShape {
                    in_dim,
                    out_dim,
                    activation,
                    offset,
                };
                in_dim = out_dim;
                offset = layer.end();
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, LayerShape::end)
    }
}

/// Flattened model weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    fn check_len(&self, other: &ParamVector, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::dim(op, &[self.len()], &[other.len()]));
        }
        Ok(())
    }

    /// `alpha * x + y`.
    pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
        x.check_len(y, "axpy")?;
        Ok(ParamVector(x.0.iter().zip(&y.0).map(|(a, b)| alpha * a + b).collect()))
    }

    /// `self += alpha * x`.
    pub fn add_scaled(&mut self, alpha: f64, x: &ParamVector) -> Result<()> {
        self.check_len(x, "add_scaled")?;
        self.0.iter_mut().zip(&x.0).for_each(|(a, b)| *a += alpha * b);
        Ok(())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other, "sub")?;
        Ok(ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| alpha * a).collect())
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn l2_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other, "l2_distance")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other, "max_abs_diff")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Borrowed view of one layer's weights.
#[derive(Clone, Copy, Debug)]
pub struct DenseLayer<'a> {
    pub shape: LayerShape,
    /// Row-major `out x in`.
    pub weight: &'a [f64],
    pub bias: &'a [f64],
}

impl DenseLayer<'_> {
    fn weight_tensor(&self) -> Tensor {
        Tensor::new(vec![self.shape.out_dim, self.shape.in_dim], self.weight.to_vec()).expect("layer shape")
    }

    fn bias_tensor(&self) -> Tensor {
        Tensor::vector(self.bias.to_vec())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.shape.in_dim {
            return Err(Error::dim("dense", x.shape(), &[self.shape.out_dim, self.shape.in_dim]));
        }
        let y = x
            .matmul(&self.weight_tensor().transpose()?)?
            .add_bias(&self.bias_tensor())?;
        Ok(match self.shape.activation {
            Activation::Relu => y.relu(),
            Activation::None => y,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: ParamVector,
}

impl Network {
    /// He initialization: weights drawn from `N(0, 2 / fan_in)`, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut params = vec![0.0; arch.param_count()];
        for layer in arch.layers() {
            let std = (2.0 / layer.in_dim as f64).sqrt();
            for w in &mut params[layer.offset..layer.bias_offset()] {
                *w = rng.normal() * std;
            }
        }
        Self {
            arch: arch.clone(),
            params: ParamVector(params),
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            arch: arch.clone(),
            params: ParamVector::zeros(arch.param_count()),
        }
    }

    pub fn from_vector(arch: &Architecture, params: ParamVector) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::dim("from_vector", &[arch.param_count()], &[params.len()]));
        }
        Ok(Self {
            arch: arch.clone(),
            params,
        })
    }

    pub fn to_vector(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn layers(&self) -> Vec<DenseLayer<'_>> {
        self.arch
            .layers()
            .into_iter()
            .map(|shape| DenseLayer {
                shape,
                weight: &self.params.0[shape.offset..shape.bias_offset()],
                bias: &self.params.0[shape.bias_offset()..shape.end()],
            })
            .collect()
    }

    /// `R_w(x)`: encoder followed by projection head.
    pub fn forward_repr(&self, x: &Tensor) -> Result<Tensor> {
        let layers = self.layers();
        let (_, head) = layers.split_last().expect("network has an output layer");
        let mut h = x.clone();
        for layer in head {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Output layer applied to a representation.
    pub fn output_layer(&self, z: &Tensor) -> Result<Tensor> {
        self.layers().last().expect("network has an output layer").forward(z)
    }

    /// `F_w(x)`: class logits.
    pub fn forward_full(&self, x: &Tensor) -> Result<Tensor> {
        self.output_layer(&self.forward_repr(x)?)
    }

    /// Register every weight and bias as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundNetwork {
        self.bind_with(tape, true)
    }

    /// Register the weights as constants (a frozen model).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundNetwork {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        let layers = self
            .layers()
            .into_iter()
            .map(|layer| {
                let w = tape.leaf(layer.weight_tensor(), trainable);
                let b = tape.leaf(layer.bias_tensor(), trainable);
                (layer.shape, w, b)
            })
            .collect();
        BoundNetwork {
            layers,
            param_count: self.arch.param_count(),
        }
    }
}

/// A network whose parameters are leaves on a [`Tape`].
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    layers: Vec<(LayerShape, Var, Var)>,
    param_count: usize,
}

impl BoundNetwork {
    fn dense(tape: &mut Tape, (shape, w, b): &(LayerShape, Var, Var), x: Var) -> Result<Var> {
        let x_shape = tape.value(x).shape();
        if x_shape.len() != 2 || x_shape[1] != shape.in_dim {
            return Err(Error::dim("dense", x_shape, &[shape.out_dim, shape.in_dim]));
        }
        let wt = tape.transpose(*w)?;
        let xw = tape.matmul(x, wt)?;
        let y = tape.add_bias(xw, *b)?;
        Ok(match shape.activation {
            Activation::Relu => tape.relu(y),
            Activation::None => y,
        })
    }

    pub fn forward_repr(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (_, head) = self.layers.split_last().expect("network has an output layer");
        head.iter().try_fold(x, |h, layer| Self::dense(tape, layer, h))
    }

    pub fn output_layer(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        Self::dense(tape, self.layers.last().expect("network has an output layer"), z)
    }

    pub fn forward_full(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = self.forward_repr(tape, x)?;
        self.output_layer(tape, z)
    }

    /// Parameter leaves in canonical order (weight, bias per layer).
    pub fn leaves(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(_, w, b)| [w, b]).collect()
    }

    /// Collect leaf gradients into canonical order. Leaves the backward pass
    /// did not reach contribute zeros; a tape with no gradients at all is a
    /// contract error.
    pub fn gradient(&self, tape: &Tape) -> Result<ParamVector> {
        let mut out = vec![0.0; self.param_count];
        let mut any = false;
        for &(shape, w, b) in &self.layers {
            if let Some(g) = tape.grad(w) {
                out[shape.offset..shape.bias_offset()].copy_from_slice(g.data());
                any = true;
            }
            if let Some(g) = tape.grad(b) {
                out[shape.bias_offset()..shape.end()].copy_from_slice(g.data());
                any = true;
            }
        }
        if !any {
            return Err(Error::Contract("no parameter gradients; run backward first".into()));
        }
        Ok(ParamVector(out))
    }
}

/// SGD with momentum and coupled weight decay.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: ParamVector,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64, param_count: usize) -> Result<Self> {
        let coeffs = [learning_rate, momentum, weight_decay];
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config(format!(
                "SGD coefficients must be finite and non-negative: lr={learning_rate} momentum={momentum} wd={weight_decay}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: ParamVector::zeros(param_count),
        })
    }

    pub fn velocity(&self) -> &ParamVector {
        &self.velocity
    }

    /// `g' = g + wd * p; v = momentum * v + g'; p -= lr * v`.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        params.check_len(grad, "sgd_step")?;
        params.check_len(&self.velocity, "sgd_step")?;
        for ((p, &g), v) in params.0.iter_mut().zip(&grad.0).zip(&mut self.velocity.0) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
        Ok(())
    }
}
