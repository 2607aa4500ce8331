//! FNNW network weights file.
//!
//! ```text
//! "FNNW" | u32 version=1 | u32 layer count
//! per layer: u8 tag | u32 dims... | u64 parameter count | f32 weights, then f32 biases
//! ```
//!
//! Tags and dims: 0 Conv (in, out, kh, kw, stride, padding, activation),
//! 1 MaxPool (pool_h, pool_w), 2 UpsampleNearest (factor), 3 Flatten (),
//! 4 Dense (in, out, activation), 5 Dropout (rate as f32 bits).
//! Padding codes: 0 same, 1 valid. Activation codes: 0 relu, 1 sigmoid,
//! 2 linear. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::{Activation, LayerSpec, Padding};
use super::network::{LayerParams, Network};
use crate::binio::{to_usize, OffsetReader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"FNNW";
const VERSION: u32 = 1;

fn dims(layer: &LayerSpec) -> Vec<u32> {
    let c = |v: usize| v as u32;
    match *layer {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            activation,
        } => vec![
            c(in_channels),
            c(out_channels),
            c(kernel_h),
            c(kernel_w),
            c(stride),
            padding.code(),
            activation.code(),
        ],
        LayerSpec::MaxPool { pool_h, pool_w } => vec![c(pool_h), c(pool_w)],
        LayerSpec::UpsampleNearest { factor } => vec![c(factor)],
        LayerSpec::Flatten => vec![],
        LayerSpec::Dense {
            in_size,
            out_size,
            activation,
        } => vec![c(in_size), c(out_size), activation.code()],
        LayerSpec::Dropout { rate } => vec![rate.to_bits()],
    }
}

pub fn write_weights<T: Scalar, W: Write>(net: &Network<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for (layer, params) in net.layers().iter().zip(net.params()) {
        out.write_all(&[layer.tag()])?;
        for d in dims(layer) {
            out.write_all(&d.to_le_bytes())?;
        }
        out.write_all(&(params.len() as u64).to_le_bytes())?;
        for v in params.iter() {
            out.write_all(&v.to_f32_lossy().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_layer<R: Read>(r: &mut OffsetReader<R>) -> Result<LayerSpec> {
    let tag_offset = r.offset();
    let tag = r.u8("layer tag")?;
    let mut dim = |what: &str| -> Result<usize> { Ok(r.u32(what)? as usize) };
    let layer = match tag {
        0 => {
            let in_channels = dim("conv in channels")?;
            let out_channels = dim("conv out channels")?;
            let kernel_h = dim("conv kernel height")?;
            let kernel_w = dim("conv kernel width")?;
            let stride = dim("conv stride")?;
            let padding = Padding::from_code(r.u32("conv padding")?);
            let activation = Activation::from_code(r.u32("conv activation")?);
            match (padding, activation) {
                (Some(padding), Some(activation)) => LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    activation,
                },
                _ => return r.fail("unknown padding or activation code"),
            }
        }
        1 => LayerSpec::MaxPool {
            pool_h: dim("pool height")?,
            pool_w: dim("pool width")?,
        },
        2 => LayerSpec::UpsampleNearest {
            factor: dim("upsample factor")?,
        },
        3 => LayerSpec::Flatten,
        4 => {
            let in_size = dim("dense input size")?;
            let out_size = dim("dense output size")?;
            match Activation::from_code(r.u32("dense activation")?) {
                Some(activation) => LayerSpec::Dense {
                    in_size,
                    out_size,
                    activation,
                },
                None => return r.fail("unknown activation code"),
            }
        }
        5 => LayerSpec::Dropout {
            rate: f32::from_bits(r.u32("dropout rate")?),
        },
        other => {
            return Err(Error::Format {
                offset: tag_offset,
                message: format!("unknown layer tag {other}"),
            })
        }
    };
    if layer.validate().is_err() {
        return Err(Error::Format {
            offset: tag_offset,
            message: format!("invalid layer {layer:?}"),
        });
    }
    Ok(layer)
}

pub fn read_weights<T: Scalar, R: Read>(input: R) -> Result<Network<T>> {
    let mut r = OffsetReader::new(input);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n_layers = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    let mut params = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let layer = read_layer(&mut r)?;
        let count_offset = r.offset();
        let count = r.u64("parameter count")?;
        let (nw, nb) = layer.param_sizes();
        if to_usize(&r, count, "parameter count")? != nw + nb {
            return Err(Error::Format {
                offset: count_offset,
                message: format!("{count} parameters stored, layer needs {}", nw + nb),
            });
        }
        let mut p = LayerParams::zeros(nw, nb);
        for v in p.iter_mut() {
            let x = r.f32("parameter")?;
            if !x.is_finite() {
                return r.fail("non-finite parameter");
            }
            *v = T::from_f32_lossy(x);
        }
        layers.push(layer);
        params.push(p);
    }
    r.finish()?;
    Network::from_parts(layers, params).map_err(|e| Error::Format {
        offset: 0,
        message: e.to_string(),
    })
}

pub fn save_weights<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    write_weights(net, BufWriter::new(File::create(path)?))
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    read_weights(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn every_variant() -> Network<f32> {
        let layers = vec![
            LayerSpec::Conv {
                in_channels: 2,
                out_channels: 3,
                kernel_h: 3,
                kernel_w: 2,
                stride: 2,
                padding: Padding::Valid,
                activation: Activation::Sigmoid,
            },
            LayerSpec::pool2(),
            LayerSpec::UpsampleNearest { factor: 3 },
            LayerSpec::Flatten,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::dense(12, 5, Activation::Relu),
        ];
        Network::new(layers, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = every_variant();
        let mut buf = Vec::new();
        write_weights(&net, &mut buf).unwrap();
        let back: Network<f32> = read_weights(buf.as_slice()).unwrap();
        assert_eq!(back.layers(), net.layers());
        let bits = |n: &Network<f32>| {
            n.params()
                .iter()
                .flat_map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&net));
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_weights(&every_variant(), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"FNNW");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 6);
        assert_eq!(buf[12], 0);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let mut buf = Vec::new();
        write_weights(&every_variant(), &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_weights::<f32, _>(bad.as_slice()),
            Err(Error::Format { offset: 0, .. })
        ));

        for cut in [0, 3, 7, 11, 13, 40, buf.len() - 1] {
            let r = read_weights::<f32, _>(&buf[..cut]);
            assert!(
                matches!(r, Err(Error::Format { .. })),
                "cut at {cut}: {r:?}"
            );
        }

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_weights::<f32, _>(trailing.as_slice()).is_err());

        let mut bad_tag = buf;
        bad_tag[12] = 9;
        assert!(matches!(
            read_weights::<f32, _>(bad_tag.as_slice()),
            Err(Error::Format { offset: 12, .. })
        ));
    }
}
