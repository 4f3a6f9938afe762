//! Shape propagation along the layer chain.
//!
//! Each layer's output size in bytes is what a transmit stage carries, and
//! the spatial resolution of one output feature map is the privacy proxy.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LayerKind, LayerOp, ModelError, NetworkProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl TensorShape {
    pub const fn new(height: u32, width: u32, channels: u32) -> Self {
        TensorShape {
            height,
            width,
            channels,
        }
    }

    pub fn elements(&self) -> u64 {
        self.height as u64 * self.width as u64 * self.channels as u64
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Height and width of a single feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: u32,
    pub width: u32,
}

impl Resolution {
    pub const fn new(height: u32, width: u32) -> Self {
        Resolution { height, width }
    }

    /// Scalar leakage proxy: the larger axis.
    pub fn similarity(&self) -> u32 {
        self.height.max(self.width)
    }

    /// True when both axes are strictly below `delta`.
    pub fn below(&self, delta: u32) -> bool {
        self.height < delta && self.width < delta
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSignature {
    pub layer_index: usize,
    pub kind: LayerKind,
    pub input_shape: TensorShape,
    pub output_shape: TensorShape,
    pub output_bytes: u64,
    pub resolution: Resolution,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("network consumes input below 1 pixel at layer {layer} ({input} with kernel {kernel}, stride {stride}, padding {padding})")]
    BelowOnePixel {
        layer: usize,
        input: TensorShape,
        kernel: u32,
        stride: u32,
        padding: u32,
    },
}

/// `floor((input + 2 * padding - kernel) / stride) + 1`, or `None` when the
/// window no longer fits.
pub fn window_output(input: u32, kernel: u32, stride: u32, padding: u32) -> Option<u32> {
    let padded = input as u64 + 2 * padding as u64;
    let kernel = kernel as u64;
    if padded < kernel || stride == 0 {
        return None;
    }
    u32::try_from((padded - kernel) / stride as u64 + 1).ok()
}

/// Output shape of one layer applied to `input`.
fn apply(layer: usize, op: &LayerOp, input: TensorShape) -> Result<TensorShape, ShapeError> {
    let windowed = |kernel, stride, padding| -> Result<(u32, u32), ShapeError> {
        let err = || ShapeError::BelowOnePixel {
            layer,
            input,
            kernel,
            stride,
            padding,
        };
        let h = window_output(input.height, kernel, stride, padding).ok_or_else(err)?;
        let w = window_output(input.width, kernel, stride, padding).ok_or_else(err)?;
        Ok((h, w))
    };
    Ok(match *op {
        LayerOp::Conv {
            kernel,
            stride,
            padding,
            out_channels,
        } => {
            let (h, w) = windowed(kernel, stride, padding)?;
            TensorShape::new(h, w, out_channels)
        }
        LayerOp::Pool {
            kernel,
            stride,
            padding,
        } => {
            let (h, w) = windowed(kernel, stride, padding)?;
            TensorShape::new(h, w, input.channels)
        }
        LayerOp::Relu | LayerOp::Softmax => input,
        LayerOp::Fc { out_len } => TensorShape::new(1, 1, out_len),
        LayerOp::Other { out_channels } => {
            TensorShape::new(input.height, input.width, out_channels.unwrap_or(input.channels))
        }
    })
}

/// Propagates the frame shape through every layer.
///
/// A resolution override replaces the spatial dimensions of that layer's
/// output, and downstream layers consume the overridden shape. An output
/// byte override changes only `output_bytes`.
pub fn propagate_shapes(net: &NetworkProfile) -> Result<Vec<LayerSignature>, ShapeError> {
    net.validate()?;
    let mut input = net.input;
    let mut out = Vec::with_capacity(net.len());
    for layer in &net.layers {
        let mut output = apply(layer.index, &layer.op, input)?;
        if let Some(r) = layer.explicit_resolution {
            output.height = r.height;
            output.width = r.width;
        }
        let output_bytes = layer
            .explicit_output_bytes
            .unwrap_or_else(|| output.elements() * net.bytes_per_element as u64);
        out.push(LayerSignature {
            layer_index: layer.index,
            kind: layer.kind(),
            input_shape: input,
            output_shape: output,
            output_bytes,
            resolution: output.resolution(),
        });
        input = output;
    }
    Ok(out)
}

pub fn resolution_profile(signatures: &[LayerSignature]) -> Vec<(usize, Resolution)> {
    signatures.iter().map(|s| (s.layer_index, s.resolution)).collect()
}

/// Resolution of the data entering layer `layer` (1-based): the raw frame
/// for layer 1, otherwise the previous layer's output.
pub fn input_resolution(signatures: &[LayerSignature], layer: usize) -> Option<Resolution> {
    signatures
        .get(layer.checked_sub(1)?)
        .map(|s| s.input_shape.resolution())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;
    use proptest::prelude::*;

    /// Counts window start offsets by walking them, independent of the
    /// closed-form output formula.
    fn enumerate_windows(input: u32, kernel: u32, stride: u32, padding: u32) -> u32 {
        let lo = -(padding as i64);
        let hi = input as i64 + padding as i64;
        let mut count = 0;
        let mut start = lo;
        while start + kernel as i64 <= hi {
            count += 1;
            start += stride as i64;
        }
        count
    }

    fn conv(kernel: u32, stride: u32, padding: u32, out_channels: u32) -> LayerOp {
        LayerOp::Conv {
            kernel,
            stride,
            padding,
            out_channels,
        }
    }

    fn pool(kernel: u32, stride: u32, padding: u32) -> LayerOp {
        LayerOp::Pool {
            kernel,
            stride,
            padding,
        }
    }

    fn net(input: TensorShape, ops: &[LayerOp]) -> NetworkProfile {
        NetworkProfile::new(
            input,
            ops.iter()
                .enumerate()
                .map(|(i, op)| LayerSpec::new(i + 1, *op))
                .collect(),
        )
    }

    #[test]
    fn conv7_stride2() {
        let sigs = propagate_shapes(&net(TensorShape::new(224, 224, 3), &[conv(7, 2, 3, 64)])).unwrap();
        assert_eq!(sigs[0].output_shape, TensorShape::new(112, 112, 64));
        assert_eq!(sigs[0].output_bytes, 112 * 112 * 64 * 4);
    }

    #[test]
    fn relu_preserves_shape() {
        let sigs = propagate_shapes(&net(TensorShape::new(56, 56, 64), &[LayerOp::Relu])).unwrap();
        assert_eq!(sigs[0].output_shape, TensorShape::new(56, 56, 64));
    }

    #[test]
    fn pool_on_13_gives_6() {
        assert_eq!(enumerate_windows(13, 3, 2, 0), 6);
        let sigs = propagate_shapes(&net(TensorShape::new(13, 13, 256), &[pool(3, 2, 0)])).unwrap();
        assert_eq!(sigs[0].output_shape, TensorShape::new(6, 6, 256));
    }

    #[test]
    fn resolution_chain() {
        let n = net(
            TensorShape::new(224, 224, 3),
            &[conv(3, 2, 1, 16), pool(2, 2, 0), LayerOp::Fc { out_len: 10 }],
        );
        let sigs = propagate_shapes(&n).unwrap();
        assert_eq!(input_resolution(&sigs, 1), Some(Resolution::new(224, 224)));
        assert_eq!(
            resolution_profile(&sigs),
            vec![
                (1, Resolution::new(112, 112)),
                (2, Resolution::new(56, 56)),
                (3, Resolution::new(1, 1)),
            ]
        );
    }

    #[test]
    fn shrinking_below_one_pixel_names_layer() {
        let n = net(
            TensorShape::new(8, 8, 3),
            &[pool(2, 2, 0), pool(2, 2, 0), pool(2, 2, 0), pool(3, 1, 0)],
        );
        let err = propagate_shapes(&n).unwrap_err();
        assert!(matches!(err, ShapeError::BelowOnePixel { layer: 4, .. }));
        assert!(err.to_string().contains("below 1 pixel at layer 4"));
    }

    #[test]
    fn overrides_apply() {
        let mut n = net(
            TensorShape::new(28, 28, 3),
            &[
                LayerOp::Other {
                    out_channels: Some(256),
                },
                LayerOp::Relu,
            ],
        );
        n.layers[0].explicit_resolution = Some(Resolution::new(14, 14));
        n.layers[1].explicit_output_bytes = Some(1000);
        let sigs = propagate_shapes(&n).unwrap();
        assert_eq!(sigs[0].output_shape, TensorShape::new(14, 14, 256));
        assert_eq!(sigs[1].input_shape, TensorShape::new(14, 14, 256));
        assert_eq!(sigs[1].output_bytes, 1000);
    }

    #[test]
    fn per_axis_threshold() {
        assert!(Resolution::new(14, 14).below(20));
        assert!(!Resolution::new(14, 30).below(20));
        assert!(!Resolution::new(20, 20).below(20));
        assert_eq!(Resolution::new(14, 30).similarity(), 30);
    }

    proptest! {
        #[test]
        fn closed_form_matches_window_walk(input in 1u32..300, kernel in 1u32..12, stride in 1u32..6, padding in 0u32..6) {
            let walked = enumerate_windows(input, kernel, stride, padding);
            let formula = window_output(input, kernel, stride, padding).unwrap_or(0);
            prop_assert_eq!(walked, formula);
        }

        #[test]
        fn windows_never_grow(input in 1u32..300, kernel in 1u32..12, stride in 1u32..6) {
            let padding = (kernel - 1) / 2;
            if let Some(out) = window_output(input, kernel, stride, padding) {
                prop_assert!(out <= input);
                prop_assert!(out >= 1);
            }
        }

        #[test]
        fn signatures_are_deterministic_and_positive(ops in proptest::collection::vec(0u8..5, 1..12)) {
            let ops: Vec<LayerOp> = ops.iter().map(|o| match o {
                0 => conv(3, 1, 1, 8),
                1 => pool(2, 2, 0),
                2 => LayerOp::Relu,
                3 => LayerOp::Other { out_channels: Some(4) },
                _ => LayerOp::Softmax,
            }).collect();
            let n = net(TensorShape::new(224, 224, 3), &ops);
            let a = propagate_shapes(&n).unwrap();
            prop_assert_eq!(&a, &propagate_shapes(&n).unwrap());
            for (i, s) in a.iter().enumerate() {
                prop_assert!(s.output_bytes > 0);
                if i > 0 {
                    prop_assert_eq!(s.input_shape, a[i - 1].output_shape);
                }
            }
        }
    }
}
