use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv1d,
    Deconv1d,
    BatchNorm,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Affine,
    Flatten,
    /// Mean over positions, `[B, C, L] -> [B, C]`.
    GlobalAvgPool,
}

impl LayerKind {
    pub const ALL: [LayerKind; 9] = [
        LayerKind::Conv1d,
        LayerKind::Deconv1d,
        LayerKind::BatchNorm,
        LayerKind::LeakyRelu,
        LayerKind::Tanh,
        LayerKind::Sigmoid,
        LayerKind::Affine,
        LayerKind::Flatten,
        LayerKind::GlobalAvgPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv1d => "conv1d",
            LayerKind::Deconv1d => "deconv1d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::LeakyRelu => "leaky_relu",
            LayerKind::Tanh => "tanh",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Affine => "affine",
            LayerKind::Flatten => "flatten",
            LayerKind::GlobalAvgPool => "global_avg_pool",
        }
    }

    pub fn has_params(self) -> bool {
        matches!(
            self,
            LayerKind::Conv1d | LayerKind::Deconv1d | LayerKind::BatchNorm | LayerKind::Affine
        )
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown layer kind {s:?}")))
    }
}

/// Per-sample activation shape (the batch dimension is implicit).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

impl Shape {
    pub fn seq(channels: usize, len: usize) -> Self {
        Shape::Seq { channels, len }
    }

    pub fn volume(self) -> usize {
        match self {
            Shape::Seq { channels, len } => channels * len,
            Shape::Flat(n) => n,
        }
    }

    /// Channel count and positions per channel (1 for flat activations).
    pub fn channels_len(self) -> (usize, usize) {
        match self {
            Shape::Seq { channels, len } => (channels, len),
            Shape::Flat(n) => (n, 1),
        }
    }

    pub fn batch_dims(self, batch: usize) -> Vec<usize> {
        match self {
            Shape::Seq { channels, len } => vec![batch, channels, len],
            Shape::Flat(n) => vec![batch, n],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Seq { channels, len } => write!(f, "seq {channels} {len}"),
            Shape::Flat(n) => write!(f, "flat {n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Only meaningful for leaky ReLU.
    pub negative_slope: f64,
}

impl LayerSpec {
    fn plain(kind: LayerKind) -> Self {
        Self {
            kind,
            kernel: 1,
            stride: 1,
            padding: 0,
            in_channels: 1,
            out_channels: 1,
            negative_slope: 0.0,
        }
    }

    pub fn conv1d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            ..Self::plain(LayerKind::Conv1d)
        }
    }

    pub fn deconv1d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Deconv1d,
            ..Self::conv1d(in_channels, out_channels, kernel, stride, padding)
        }
    }

    pub fn batchnorm(channels: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            ..Self::plain(LayerKind::BatchNorm)
        }
    }

    pub fn leaky_relu(negative_slope: f64) -> Self {
        Self {
            negative_slope,
            ..Self::plain(LayerKind::LeakyRelu)
        }
    }

    pub fn tanh() -> Self {
        Self::plain(LayerKind::Tanh)
    }

    pub fn sigmoid() -> Self {
        Self::plain(LayerKind::Sigmoid)
    }

    pub fn affine(in_features: usize, out_features: usize) -> Self {
        Self {
            in_channels: in_features,
            out_channels: out_features,
            ..Self::plain(LayerKind::Affine)
        }
    }

    pub fn flatten() -> Self {
        Self::plain(LayerKind::Flatten)
    }

    pub fn global_avg_pool() -> Self {
        Self::plain(LayerKind::GlobalAvgPool)
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Architecture(format!(
                "{}: kernel, stride and channel counts must be at least 1",
                self.kind
            )));
        }
        if self.kind == LayerKind::LeakyRelu && !self.negative_slope.is_finite() {
            return Err(Error::Architecture("leaky_relu slope must be finite".into()));
        }
        Ok(())
    }

    /// Output shape for a given input shape, or an architecture error.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        let mismatch = || {
            Error::Architecture(format!("{} layer cannot accept input {input}", self.kind))
        };
        match self.kind {
            LayerKind::Conv1d => match input {
                Shape::Seq { channels, len } if channels == self.in_channels => {
                    let span = len + 2 * self.padding;
                    if span < self.kernel {
                        return Err(mismatch());
                    }
                    Ok(Shape::seq(self.out_channels, (span - self.kernel) / self.stride + 1))
                }
                _ => Err(mismatch()),
            },
            LayerKind::Deconv1d => match input {
                Shape::Seq { channels, len } if channels == self.in_channels && len > 0 => {
                    let full = (len - 1) * self.stride + self.kernel;
                    if full <= 2 * self.padding {
                        return Err(mismatch());
                    }
                    Ok(Shape::seq(self.out_channels, full - 2 * self.padding))
                }
                _ => Err(mismatch()),
            },
            LayerKind::BatchNorm => {
                if input.channels_len().0 == self.in_channels && self.in_channels == self.out_channels {
                    Ok(input)
                } else {
                    Err(mismatch())
                }
            }
            LayerKind::LeakyRelu | LayerKind::Tanh | LayerKind::Sigmoid => Ok(input),
            LayerKind::Affine => match input {
                Shape::Flat(n) if n == self.in_channels => Ok(Shape::Flat(self.out_channels)),
                _ => Err(mismatch()),
            },
            LayerKind::Flatten => Ok(Shape::Flat(input.volume())),
            LayerKind::GlobalAvgPool => match input {
                Shape::Seq { channels, .. } => Ok(Shape::Flat(channels)),
                _ => Err(mismatch()),
            },
        }
    }

    /// Shapes of the trainable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (i, o, k) = (self.in_channels, self.out_channels, self.kernel);
        match self.kind {
            LayerKind::Conv1d => vec![vec![o, i, k], vec![o]],
            LayerKind::Deconv1d => vec![vec![i, o, k], vec![o]],
            LayerKind::BatchNorm => vec![vec![o], vec![o]],
            LayerKind::Affine => vec![vec![o, i], vec![o]],
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_length() {
        // windows start at -1, 1, 3, 5 over a length-8 input padded by 1
        let spec = LayerSpec::conv1d(1, 1, 4, 2, 1);
        assert_eq!(spec.output_shape(Shape::seq(1, 8)).unwrap(), Shape::seq(1, 4));
        let starts: Vec<i64> = (-1i64..=8 + 1 - 4).step_by(2).collect();
        assert_eq!(starts.len(), 4);
    }

    #[test]
    fn deconv_restores_conv_length() {
        for len in [8usize, 16, 40, 104] {
            let down = LayerSpec::conv1d(2, 3, 4, 2, 1).output_shape(Shape::seq(2, len)).unwrap();
            let up = LayerSpec::deconv1d(3, 2, 4, 2, 1).output_shape(down).unwrap();
            assert_eq!(up, Shape::seq(2, len));
        }
    }

    #[test]
    fn channel_mismatch_is_architecture_error() {
        let err = LayerSpec::conv1d(2, 4, 3, 1, 1).output_shape(Shape::seq(3, 10));
        assert!(matches!(err, Err(Error::Architecture(_))));
        let err = LayerSpec::affine(5, 1).output_shape(Shape::seq(5, 1));
        assert!(matches!(err, Err(Error::Architecture(_))));
    }

    #[test]
    fn kind_names_roundtrip() {
        for kind in LayerKind::ALL {
            assert_eq!(kind.name().parse::<LayerKind>().unwrap(), kind);
        }
    }

    #[test]
    fn conv_param_count() {
        let shapes = LayerSpec::conv1d(1, 16, 4, 2, 1).param_shapes();
        let counts: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
        assert_eq!(counts, vec![64, 16]);
    }
}
