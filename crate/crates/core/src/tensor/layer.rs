use serde::{Deserialize, Serialize};

use super::ops::ConvGeometry;
use super::Shape;
use crate::error::{contract_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding that keeps `ceil(in / stride)` outputs; the odd extra
    /// row/column goes to the bottom/right.
    Same,
    Valid,
}

impl Padding {
    pub(crate) fn code(self) -> u32 {
        match self {
            Padding::Same => 0,
            Padding::Valid => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Padding::Same),
            1 => Some(Padding::Valid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    MaxPool {
        pool_h: usize,
        pool_w: usize,
    },
    UpsampleNearest {
        factor: usize,
    },
    Flatten,
    Dense {
        in_size: usize,
        out_size: usize,
        activation: Activation,
    },
    Dropout {
        rate: f32,
    },
}

impl LayerSpec {
    /// 3×3 stride-1 same-padded convolution, the workhorse of both networks.
    pub const fn conv3x3(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: Padding::Same,
            activation,
        }
    }

    pub const fn pool2() -> Self {
        LayerSpec::MaxPool {
            pool_h: 2,
            pool_w: 2,
        }
    }

    pub const fn dense(in_size: usize, out_size: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            in_size,
            out_size,
            activation,
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            LayerSpec::Conv { .. } => 0,
            LayerSpec::MaxPool { .. } => 1,
            LayerSpec::UpsampleNearest { .. } => 2,
            LayerSpec::Flatten => 3,
            LayerSpec::Dense { .. } => 4,
            LayerSpec::Dropout { .. } => 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                in_channels >= 1
                    && out_channels >= 1
                    && kernel_h >= 1
                    && kernel_w >= 1
                    && stride >= 1
            }
            LayerSpec::MaxPool { pool_h, pool_w } => pool_h >= 1 && pool_w >= 1,
            LayerSpec::UpsampleNearest { factor } => factor >= 1,
            LayerSpec::Flatten => true,
            LayerSpec::Dense {
                in_size, out_size, ..
            } => in_size >= 1 && out_size >= 1,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
        };
        if ok {
            Ok(())
        } else {
            contract_err(format!("invalid layer {self:?}"))
        }
    }

    pub(crate) fn conv_geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                ..
            } => Some(ConvGeometry {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            }),
            _ => None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match *self {
            LayerSpec::Conv { activation, .. } | LayerSpec::Dense { activation, .. } => {
                Some(activation)
            }
            _ => None,
        }
    }

    /// `(weight count, bias count)`; zero for parameterless layers.
    pub fn param_sizes(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => (
                kernel_h * kernel_w * in_channels * out_channels,
                out_channels,
            ),
            LayerSpec::Dense {
                in_size, out_size, ..
            } => (in_size * out_size, out_size),
            _ => (0, 0),
        }
    }

    /// `(fan_in, fan_out)` used by weight initialization.
    pub(crate) fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => (
                kernel_h * kernel_w * in_channels,
                kernel_h * kernel_w * out_channels,
            ),
            LayerSpec::Dense {
                in_size, out_size, ..
            } => (in_size, out_size),
            _ => (0, 0),
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Conv { .. } => self
                .conv_geometry()
                .expect("conv layer")
                .output_shape(input),
            LayerSpec::MaxPool { pool_h, pool_w } => {
                if !input.height.is_multiple_of(pool_h) || !input.width.is_multiple_of(pool_w) {
                    return shape_err(format!(
                        "{input} input is not divisible by a {pool_h}x{pool_w} pool"
                    ));
                }
                Ok(Shape::new(
                    input.height / pool_h,
                    input.width / pool_w,
                    input.channels,
                ))
            }
            LayerSpec::UpsampleNearest { factor } => Ok(Shape::new(
                input.height * factor,
                input.width * factor,
                input.channels,
            )),
            LayerSpec::Flatten => Ok(Shape::vector(input.len())),
            LayerSpec::Dense {
                in_size, out_size, ..
            } => {
                if input.height != 1 || input.width != 1 || input.channels != in_size {
                    return shape_err(format!(
                        "dense layer expects a {in_size}-vector, got {input}"
                    ));
                }
                Ok(Shape::vector(out_size))
            }
            LayerSpec::Dropout { .. } => Ok(input),
        }
    }
}
