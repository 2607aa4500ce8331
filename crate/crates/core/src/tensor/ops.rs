//! Layer kernels. Activations are never fused into `conv2d` or `dense`;
//! networks apply them as a separate step.

use serde::{Deserialize, Serialize};

use super::layer::{Activation, Padding};
use super::{Shape, Tensor};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Convolution hyper-parameters. Kernels are stored `[kh][kw][in][out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return shape_err(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels, input.channels
            ));
        }
        if self.stride == 0 {
            return shape_err("convolution stride must be at least 1");
        }
        let (h, w) = match self.padding {
            Padding::Same => (
                input.height.div_ceil(self.stride),
                input.width.div_ceil(self.stride),
            ),
            Padding::Valid => {
                if self.kernel_h > input.height || self.kernel_w > input.width {
                    return shape_err(format!(
                        "{}x{} kernel exceeds {} input",
                        self.kernel_h, self.kernel_w, input
                    ));
                }
                (
                    (input.height - self.kernel_h) / self.stride + 1,
                    (input.width - self.kernel_w) / self.stride + 1,
                )
            }
        };
        Ok(Shape::new(h, w, self.out_channels))
    }

    /// Top and left zero padding.
    fn leading_pad(&self, input: Shape, output: Shape) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total_h = ((output.height - 1) * self.stride + self.kernel_h)
                    .saturating_sub(input.height);
                let total_w =
                    ((output.width - 1) * self.stride + self.kernel_w).saturating_sub(input.width);
                (total_h / 2, total_w / 2)
            }
        }
    }

    fn weight_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels * self.out_channels
    }

    fn check_params<T>(&self, weights: &[T], bias: Option<&[T]>) -> Result<()> {
        if weights.len() != self.weight_len() {
            return shape_err(format!(
                "kernel has {} weights, geometry needs {}",
                weights.len(),
                self.weight_len()
            ));
        }
        if let Some(bias) = bias {
            if bias.len() != self.out_channels {
                return shape_err(format!(
                    "bias has {} entries for {} output channels",
                    bias.len(),
                    self.out_channels
                ));
            }
        }
        Ok(())
    }
}

/// Iterates the in-bounds kernel taps for one output pixel, yielding
/// `(input pixel offset, kernel tap index)`.
#[inline]
fn for_each_tap(
    geom: &ConvGeometry,
    input: Shape,
    pad: (usize, usize),
    oy: usize,
    ox: usize,
    mut f: impl FnMut(usize, usize),
) {
    for ky in 0..geom.kernel_h {
        let iy = (oy * geom.stride + ky) as isize - pad.0 as isize;
        if iy < 0 || iy as usize >= input.height {
            continue;
        }
        for kx in 0..geom.kernel_w {
            let ix = (ox * geom.stride + kx) as isize - pad.1 as isize;
            if ix < 0 || ix as usize >= input.width {
                continue;
            }
            f(
                iy as usize * input.width + ix as usize,
                ky * geom.kernel_w + kx,
            );
        }
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    bias: &[T],
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let in_shape = input.shape();
    let out_shape = geom.output_shape(in_shape)?;
    geom.check_params(weights, Some(bias))?;
    let pad = geom.leading_pad(in_shape, out_shape);
    let (ic, oc) = (geom.in_channels, geom.out_channels);
    let x = input.as_slice();
    let mut out = Tensor::zeros(out_shape);
    let o = out.as_mut_slice();
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            let out_off = (oy * out_shape.width + ox) * oc;
            let acc = &mut o[out_off..out_off + oc];
            acc.copy_from_slice(bias);
            for_each_tap(&geom, in_shape, pad, oy, ox, |pixel, tap| {
                let xs = &x[pixel * ic..pixel * ic + ic];
                let wtap = &weights[tap * ic * oc..(tap + 1) * ic * oc];
                for (ci, &xv) in xs.iter().enumerate() {
                    let wrow = &wtap[ci * oc..ci * oc + oc];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGradients<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of a (pre-activation) convolution given the gradient w.r.t.
/// its output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGradients<T>> {
    let in_shape = input.shape();
    let out_shape = geom.output_shape(in_shape)?;
    geom.check_params(weights, None)?;
    if grad_out.shape() != out_shape {
        return shape_err(format!(
            "output gradient is {}, convolution produced {}",
            grad_out.shape(),
            out_shape
        ));
    }
    let pad = geom.leading_pad(in_shape, out_shape);
    let (ic, oc) = (geom.in_channels, geom.out_channels);
    let x = input.as_slice();
    let g = grad_out.as_slice();
    let mut grad_in = Tensor::zeros(in_shape);
    let gi = grad_in.as_mut_slice();
    let mut gw = vec![T::zero(); weights.len()];
    let mut gb = vec![T::zero(); oc];
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            let out_off = (oy * out_shape.width + ox) * oc;
            let gpix = &g[out_off..out_off + oc];
            for (b, &gv) in gb.iter_mut().zip(gpix) {
                *b += gv;
            }
            for_each_tap(&geom, in_shape, pad, oy, ox, |pixel, tap| {
                let base = tap * ic * oc;
                for ci in 0..ic {
                    let xv = x[pixel * ic + ci];
                    let row = base + ci * oc..base + ci * oc + oc;
                    let mut acc = T::zero();
                    for ((gwv, &wv), &gv) in gw[row.clone()].iter_mut().zip(&weights[row]).zip(gpix)
                    {
                        *gwv += xv * gv;
                        acc += wv * gv;
                    }
                    gi[pixel * ic + ci] += acc;
                }
            });
        }
    }
    Ok(ConvGradients {
        input: grad_in,
        weights: gw,
        bias: gb,
    })
}

/// Window maximum per channel. Returns the pooled tensor and, for every
/// output element, the flat input index that won (first maximum in
/// row-major window order).
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    pool_h: usize,
    pool_w: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if pool_h == 0 || pool_w == 0 {
        return shape_err("pool size must be at least 1");
    }
    if !s.height.is_multiple_of(pool_h) || !s.width.is_multiple_of(pool_w) {
        return shape_err(format!(
            "{s} input is not divisible by a {pool_h}x{pool_w} pool"
        ));
    }
    let out_shape = Shape::new(s.height / pool_h, s.width / pool_w, s.channels);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; out_shape.len()];
    let x = input.as_slice();
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            for c in 0..s.channels {
                let mut best = input.index(oy * pool_h, ox * pool_w, c);
                for dy in 0..pool_h {
                    for dx in 0..pool_w {
                        let i = input.index(oy * pool_h + dy, ox * pool_w + dx, c);
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                let o = out.index(oy, ox, c);
                out.as_mut_slice()[o] = x[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(
    input_shape: Shape,
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.shape().len() {
        return shape_err("pool argmax does not match output gradient");
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.as_mut_slice();
    for (&i, &g) in argmax.iter().zip(grad_out.as_slice()) {
        if i >= gi.len() {
            return shape_err("pool argmax index out of range");
        }
        gi[i] += g;
    }
    Ok(grad_in)
}

pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return shape_err("upsample factor must be at least 1");
    }
    let s = input.shape();
    let out_shape = Shape::new(s.height * factor, s.width * factor, s.channels);
    let c = s.channels;
    let x = input.as_slice();
    let mut out = Vec::with_capacity(out_shape.len());
    for oy in 0..out_shape.height {
        let row = (oy / factor) * s.width;
        for ox in 0..out_shape.width {
            let p = (row + ox / factor) * c;
            out.extend_from_slice(&x[p..p + c]);
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn upsample_nearest_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    let g = grad_out.shape();
    if factor == 0 || !g.height.is_multiple_of(factor) || !g.width.is_multiple_of(factor) {
        return shape_err(format!(
            "{g} gradient does not match upsample factor {factor}"
        ));
    }
    let in_shape = Shape::new(g.height / factor, g.width / factor, g.channels);
    let mut grad_in = Tensor::zeros(in_shape);
    let c = g.channels;
    let src = grad_out.as_slice();
    let dst = grad_in.as_mut_slice();
    for oy in 0..g.height {
        for ox in 0..g.width {
            let p = ((oy / factor) * in_shape.width + ox / factor) * c;
            let q = (oy * g.width + ox) * c;
            for k in 0..c {
                dst[p + k] += src[q + k];
            }
        }
    }
    Ok(grad_in)
}

/// `out_j = Σ_i input_i · w_ij + bias_j` with `weights` stored row-major as
/// `[in][out]`.
pub fn dense<T: Scalar>(input: &[T], weights: &[T], bias: &[T]) -> Result<Vec<T>> {
    let n_out = bias.len();
    if n_out == 0 || weights.len() != input.len() * n_out {
        return shape_err(format!(
            "dense weights of length {} do not fit {} inputs and {} outputs",
            weights.len(),
            input.len(),
            n_out
        ));
    }
    let mut out = bias.to_vec();
    for (i, &xv) in input.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&weights[i * n_out..(i + 1) * n_out]) {
            *o += xv * wv;
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &[T],
    weights: &[T],
    grad_out: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n_out = grad_out.len();
    if weights.len() != input.len() * n_out {
        return shape_err("dense gradient does not match layer dimensions");
    }
    let mut gi = vec![T::zero(); input.len()];
    let mut gw = vec![T::zero(); weights.len()];
    for (i, &xv) in input.iter().enumerate() {
        let row = i * n_out..(i + 1) * n_out;
        let mut acc = T::zero();
        for ((gwv, &wv), &gv) in gw[row.clone()].iter_mut().zip(&weights[row]).zip(grad_out) {
            *gwv = xv * gv;
            acc += wv * gv;
        }
        gi[i] = acc;
    }
    Ok((gi, gw, grad_out.to_vec()))
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn activate<T: Scalar>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| v.max(T::zero())),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Linear => x.clone(),
    }
}

/// Gradient through an activation, expressed in terms of its output.
pub fn activation_backward<T: Scalar>(
    kind: Activation,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return shape_err("activation gradient shape mismatch");
    }
    let data = output
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&y, &g)| match kind {
            Activation::Relu => {
                if y > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => g * y * (T::one() - y),
            Activation::Linear => g,
        })
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Numerically stable softmax (max-shifted).
pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CategoricalCrossEntropy,
}

const CE_EPSILON: f64 = 1e-12;

pub fn loss<T: Scalar>(kind: LossKind, prediction: &[T], target: &[T]) -> Result<T> {
    if prediction.len() != target.len() || prediction.is_empty() {
        return shape_err(format!(
            "loss over {} predictions and {} targets",
            prediction.len(),
            target.len()
        ));
    }
    Ok(match kind {
        LossKind::Mse => {
            let sum: T = prediction
                .iter()
                .zip(target)
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum();
            sum / T::from_usize(prediction.len()).expect("length fits in a float")
        }
        LossKind::CategoricalCrossEntropy => {
            let eps = T::from_f64_lossy(CE_EPSILON);
            -prediction
                .iter()
                .zip(target)
                .map(|(&p, &t)| t * p.max(eps).ln())
                .sum::<T>()
        }
    })
}

/// Derivative of [`loss`] with respect to `prediction`.
pub fn loss_gradient<T: Scalar>(kind: LossKind, prediction: &[T], target: &[T]) -> Result<Vec<T>> {
    if prediction.len() != target.len() || prediction.is_empty() {
        return shape_err("loss gradient shape mismatch");
    }
    Ok(match kind {
        LossKind::Mse => {
            let scale = T::from_f64_lossy(2.0 / prediction.len() as f64);
            prediction
                .iter()
                .zip(target)
                .map(|(&p, &t)| scale * (p - t))
                .collect()
        }
        LossKind::CategoricalCrossEntropy => {
            let eps = T::from_f64_lossy(CE_EPSILON);
            prediction
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    if t == T::zero() {
                        T::zero()
                    } else {
                        -t / p.max(eps)
                    }
                })
                .collect()
        }
    })
}

/// Gradient of `cross_entropy(softmax(logits), target)` w.r.t. the logits.
pub fn softmax_cross_entropy_gradient<T: Scalar>(logits: &[T], target: &[T]) -> Result<Vec<T>> {
    if logits.len() != target.len() || logits.is_empty() {
        return shape_err("softmax cross-entropy shape mismatch");
    }
    Ok(softmax(logits)
        .into_iter()
        .zip(target)
        .map(|(p, &t)| p - t)
        .collect())
}
