use rand::Rng;

use super::layer::{Activation, LayerSpec};
use super::ops::{
    activate, activation_backward, conv2d, conv2d_backward, dense, dense_backward, maxpool2d,
    maxpool2d_backward, upsample_nearest, upsample_nearest_backward,
};
use super::{Shape, Tensor};
use crate::error::{contract_err, shape_err, Result};
use crate::scalar::Scalar;

/// Weights and biases of one layer; both empty for parameterless layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(weights: usize, bias: usize) -> Self {
        Self {
            weights: vec![T::zero(); weights],
            bias: vec![T::zero(); bias],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Ordered layers plus their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams<T>>,
    generation: u64,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-uniform weights for relu layers,
    /// Glorot-uniform for sigmoid/linear ones and zero biases.
    pub fn new<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        check_chain(&layers)?;
        let params = layers
            .iter()
            .map(|layer| {
                let (nw, nb) = layer.param_sizes();
                let (fan_in, fan_out) = layer.fans();
                let limit = match layer.activation() {
                    Some(Activation::Relu) => (6.0 / fan_in.max(1) as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out).max(1) as f64).sqrt(),
                };
                LayerParams {
                    weights: (0..nw)
                        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..=limit)))
                        .collect(),
                    bias: vec![T::zero(); nb],
                }
            })
            .collect();
        Ok(Self {
            layers,
            params,
            generation: 0,
        })
    }

    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<LayerParams<T>>) -> Result<Self> {
        check_chain(&layers)?;
        if layers.len() != params.len() {
            return shape_err(format!(
                "{} layers but {} parameter blocks",
                layers.len(),
                params.len()
            ));
        }
        for (i, (layer, p)) in layers.iter().zip(&params).enumerate() {
            let (nw, nb) = layer.param_sizes();
            if p.weights.len() != nw || p.bias.len() != nb {
                return shape_err(format!(
                    "layer {i} expects {nw} weights and {nb} biases, got {} and {}",
                    p.weights.len(),
                    p.bias.len()
                ));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return contract_err(format!("layer {i} has non-finite parameters"));
            }
        }
        Ok(Self {
            layers,
            params,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    /// Mutable parameter access. Activation records taken before this call
    /// are rejected by [`Network::backward`].
    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        self.generation += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }

    /// Shape after every layer for the given input, or the first mismatch.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.layers
            .iter()
            .try_fold(input, |shape, layer| layer.output_shape(shape))
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| LayerParams {
                    weights: p
                        .weights
                        .iter()
                        .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                        .collect(),
                    bias: p
                        .bias
                        .iter()
                        .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                        .collect(),
                })
                .collect(),
            generation: 0,
        }
    }

    fn run_layer<R: Rng + ?Sized>(
        &self,
        index: usize,
        input: &Tensor<T>,
        dropout: Option<&mut R>,
    ) -> Result<(Tensor<T>, Aux<T>)> {
        let p = &self.params[index];
        Ok(match self.layers[index] {
            layer @ LayerSpec::Conv { activation, .. } => {
                let z = conv2d(
                    input,
                    &p.weights,
                    &p.bias,
                    layer.conv_geometry().expect("conv"),
                )?;
                (activate(activation, &z), Aux::None)
            }
            LayerSpec::MaxPool { pool_h, pool_w } => {
                let (out, argmax) = maxpool2d(input, pool_h, pool_w)?;
                (out, Aux::Argmax(argmax))
            }
            LayerSpec::UpsampleNearest { factor } => (upsample_nearest(input, factor)?, Aux::None),
            LayerSpec::Flatten => (
                input.clone().reshape(Shape::vector(input.shape().len()))?,
                Aux::None,
            ),
            layer @ LayerSpec::Dense { activation, .. } => {
                layer.output_shape(input.shape())?;
                let z = Tensor::vector(dense(input.as_slice(), &p.weights, &p.bias)?);
                (activate(activation, &z), Aux::None)
            }
            LayerSpec::Dropout { rate } => match dropout {
                Some(rng) if rate > 0.0 => {
                    let keep = T::from_f64_lossy(1.0 / (1.0 - rate as f64));
                    let mask: Vec<T> = (0..input.shape().len())
                        .map(|_| {
                            if rng.gen::<f32>() >= rate {
                                keep
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let data = input
                        .as_slice()
                        .iter()
                        .zip(&mask)
                        .map(|(&x, &m)| x * m)
                        .collect();
                    (Tensor::from_vec(input.shape(), data)?, Aux::Mask(mask))
                }
                _ => (input.clone(), Aux::None),
            },
        })
    }

    /// Full forward pass keeping every intermediate activation for
    /// [`Network::backward`]. Dropout is only active when `training` is set
    /// and uses inverted scaling, so inference never rescales.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Activations<T>> {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        outputs.push(input.clone());
        for i in 0..self.layers.len() {
            let (out, a) = self.run_layer(
                i,
                outputs.last().expect("input pushed"),
                training.then_some(&mut *rng),
            )?;
            outputs.push(out);
            aux.push(a);
        }
        Ok(Activations {
            layers: self.layers.clone(),
            generation: self.generation,
            outputs,
            aux,
        })
    }

    /// Inference through the first `n_layers` layers without keeping
    /// intermediates.
    pub fn infer_prefix(&self, input: &Tensor<T>, n_layers: usize) -> Result<Tensor<T>> {
        if n_layers > self.layers.len() {
            return contract_err(format!(
                "network has {} layers, asked for {n_layers}",
                self.layers.len()
            ));
        }
        let mut x = input.clone();
        for i in 0..n_layers {
            x = self.run_layer::<rand::rngs::ThreadRng>(i, &x, None)?.0;
        }
        Ok(x)
    }

    /// Inference through the whole network.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_prefix(input, self.layers.len())
    }

    /// Backpropagates `loss_gradient` (d loss / d final output) through the
    /// record of a matching forward call.
    pub fn backward(
        &self,
        acts: &Activations<T>,
        loss_gradient: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        if acts.layers != self.layers || acts.generation != self.generation {
            return contract_err("activation record does not belong to this network state");
        }
        let last = acts.output();
        if loss_gradient.shape() != last.shape() {
            return shape_err(format!(
                "loss gradient is {}, network output is {}",
                loss_gradient.shape(),
                last.shape()
            ));
        }
        let mut grads: Vec<LayerParams<T>> = self
            .layers
            .iter()
            .map(|l| {
                let (nw, nb) = l.param_sizes();
                LayerParams::zeros(nw, nb)
            })
            .collect();
        let mut g = loss_gradient.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &acts.outputs[i];
            let output = &acts.outputs[i + 1];
            g = match self.layers[i] {
                layer @ LayerSpec::Conv { activation, .. } => {
                    let gz = activation_backward(activation, output, &g)?;
                    let cg = conv2d_backward(
                        input,
                        &self.params[i].weights,
                        layer.conv_geometry().expect("conv"),
                        &gz,
                    )?;
                    grads[i] = LayerParams {
                        weights: cg.weights,
                        bias: cg.bias,
                    };
                    cg.input
                }
                LayerSpec::MaxPool { .. } => match &acts.aux[i] {
                    Aux::Argmax(argmax) => maxpool2d_backward(input.shape(), argmax, &g)?,
                    _ => return contract_err("pool layer record lacks argmax indices"),
                },
                LayerSpec::UpsampleNearest { factor } => upsample_nearest_backward(&g, factor)?,
                LayerSpec::Flatten => g.reshape(input.shape())?,
                LayerSpec::Dense { activation, .. } => {
                    let gz = activation_backward(activation, output, &g)?;
                    let (gi, gw, gb) =
                        dense_backward(input.as_slice(), &self.params[i].weights, gz.as_slice())?;
                    grads[i] = LayerParams {
                        weights: gw,
                        bias: gb,
                    };
                    Tensor::from_vec(input.shape(), gi)?
                }
                LayerSpec::Dropout { .. } => match &acts.aux[i] {
                    Aux::Mask(mask) => {
                        let data = g
                            .as_slice()
                            .iter()
                            .zip(mask)
                            .map(|(&x, &m)| x * m)
                            .collect();
                        Tensor::from_vec(g.shape(), data)?
                    }
                    _ => g,
                },
            };
        }
        Ok(Gradients(grads))
    }
}

fn check_chain(layers: &[LayerSpec]) -> Result<()> {
    // channel counts must agree wherever both sides are known
    let mut channels: Option<usize> = None;
    for (i, layer) in layers.iter().enumerate() {
        layer.validate()?;
        match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                ..
            } => {
                if channels.is_some_and(|c| c != in_channels) {
                    return shape_err(format!(
                        "layer {i} expects {in_channels} channels, previous layer yields {}",
                        channels.unwrap()
                    ));
                }
                channels = Some(out_channels);
            }
            LayerSpec::Dense {
                in_size, out_size, ..
            } => {
                if channels.is_some_and(|c| c != in_size) {
                    return shape_err(format!(
                        "layer {i} expects {in_size} inputs, previous layer yields {}",
                        channels.unwrap()
                    ));
                }
                channels = Some(out_size);
            }
            LayerSpec::Flatten => channels = None,
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Aux<T> {
    None,
    Argmax(Vec<usize>),
    Mask(Vec<T>),
}

/// Every intermediate activation of one forward pass; `outputs()[0]` is the
/// input and `outputs()[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    layers: Vec<LayerSpec>,
    generation: u64,
    outputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

impl<T: Scalar> Activations<T> {
    pub fn outputs(&self) -> &[Tensor<T>] {
        &self.outputs
    }

    /// Final network output.
    pub fn output(&self) -> &Tensor<T> {
        self.outputs
            .last()
            .expect("record holds at least the input")
    }
}

/// Parameter gradients, one block per layer mirroring [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<LayerParams<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients(
            net.params()
                .iter()
                .map(|p| LayerParams::zeros(p.weights.len(), p.bias.len()))
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, &y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for p in &mut self.0 {
            for x in p.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.0.iter().flat_map(LayerParams::iter)
    }
}
