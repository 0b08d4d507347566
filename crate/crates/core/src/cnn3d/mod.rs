//! A small 3D convolutional network with hand-written backpropagation.
//!
//! Everything runs in `f64`. Inputs are single-channel intensity boxes laid
//! out x-fastest, the same order as [`VoxelGrid`](crate::data_model::VoxelGrid).

pub mod checkpoint;
mod layers;
mod network;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use network::{
    prepare_input, Cnn3d, IntensityNorm, LayerParams, TrainConfig, TrainReport, DEEP_FEATURE_LEN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CnnError {
    #[error("invalid architecture at layer {layer}: {message}")]
    Architecture { layer: usize, message: String },
    #[error("shape underflow at layer {layer}: cannot pool dims {dims:?}")]
    ShapeUnderflow { layer: usize, dims: [usize; 3] },
    #[error("input has {got} values, expected {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}; try a learning rate below {learning_rate}")]
    NonFiniteLoss { epoch: usize, batch: usize, learning_rate: f64 },
    #[error("training labels must contain both classes")]
    DegenerateLabels,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("penultimate layer is not a {DEEP_FEATURE_LEN}-unit dense layer")]
    NoFeatureLayer,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CnnError {
    fn from(e: std::io::Error) -> Self {
        CnnError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

/// Conv kernels are always 3×3×3 with same padding; pools are always 2×2×2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d { channels: usize, activation: Activation, l2: f64 },
    MaxPool3d,
    Flatten,
    Dense { units: usize, activation: Activation, l2: f64 },
}

/// Output shape of a layer. Volumes print as `(x, y, z, channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Volume { dims: [usize; 3], channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Volume { dims, channels } => dims.iter().product::<usize>() * channels,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Volume { dims, channels } => write!(f, "({},{},{},{})", dims[0], dims[1], dims[2], channels),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

pub const CONV_L2: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArchitecture {
    pub input_dims: [usize; 3],
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

fn conv(channels: usize) -> LayerSpec {
    LayerSpec::Conv3d {
        channels,
        activation: Activation::Relu,
        l2: CONV_L2,
    }
}

fn dense(units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { units, activation, l2: 0.0 }
}

impl CnnArchitecture {
    /// Five conv blocks of two layers each, separated by four pools, then
    /// dense 1024 → 64 → 1.
    pub fn reference(input_dims: [usize; 3]) -> Self {
        Self::conv_blocks(input_dims, [32, 64, 128, 256, 512], 1024)
    }

    /// Same topology as [`reference`](Self::reference) with one eighth of
    /// the channels, for desk-scale experiment runs.
    pub fn compact(input_dims: [usize; 3]) -> Self {
        Self::conv_blocks(input_dims, [4, 8, 16, 32, 64], 128)
    }

    /// Two conv layers and two pools; quick to train on a handful of boxes.
    pub fn small(input_dims: [usize; 3]) -> Self {
        Self {
            input_dims,
            input_channels: 1,
            layers: vec![
                conv(4),
                LayerSpec::MaxPool3d,
                conv(8),
                LayerSpec::MaxPool3d,
                LayerSpec::Flatten,
                dense(DEEP_FEATURE_LEN, Activation::Relu),
                dense(1, Activation::Sigmoid),
            ],
        }
    }

    fn conv_blocks(input_dims: [usize; 3], channels: [usize; 5], hidden: usize) -> Self {
        let mut layers = Vec::new();
        for (i, c) in channels.into_iter().enumerate() {
            if i > 0 {
                layers.push(LayerSpec::MaxPool3d);
            }
            layers.push(conv(c));
            layers.push(conv(c));
        }
        layers.push(LayerSpec::Flatten);
        layers.push(dense(hidden, Activation::Relu));
        layers.push(dense(DEEP_FEATURE_LEN, Activation::Relu));
        layers.push(dense(1, Activation::Sigmoid));
        Self {
            input_dims,
            input_channels: 1,
            layers,
        }
    }

    /// Replaces the L2 coefficient of every dense layer.
    pub fn with_dense_l2(mut self, l2: f64) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Dense { l2: d, .. } = l {
                *d = l2;
            }
        }
        self
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Volume {
            dims: self.input_dims,
            channels: self.input_channels,
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv3d { .. }))
            .count()
    }

    /// Output shape of every layer, checking that the stack is well formed.
    pub fn output_shapes(&self) -> Result<Vec<Shape>, CnnError> {
        let bad = |layer: usize, message: &str| CnnError::Architecture {
            layer,
            message: message.to_string(),
        };
        if self.input_channels == 0 || self.input_dims.contains(&0) {
            return Err(bad(0, "input dims and channels must be positive"));
        }
        let mut shape = self.input_shape();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            shape = match (*spec, shape) {
                (LayerSpec::Conv3d { channels, l2, .. }, Shape::Volume { dims, .. }) => {
                    if channels == 0 || !(l2 >= 0.0) {
                        return Err(bad(i, "conv needs channels >= 1 and l2 >= 0"));
                    }
                    Shape::Volume { dims, channels }
                }
                (LayerSpec::MaxPool3d, Shape::Volume { dims, channels }) => {
                    if dims.iter().any(|&d| d < 2) {
                        return Err(CnnError::ShapeUnderflow { layer: i, dims });
                    }
                    Shape::Volume {
                        dims: layers::pooled_dims(dims),
                        channels,
                    }
                }
                (LayerSpec::Flatten, s @ Shape::Volume { .. }) => Shape::Flat(s.len()),
                (LayerSpec::Dense { units, l2, .. }, Shape::Flat(_)) => {
                    if units == 0 || !(l2 >= 0.0) {
                        return Err(bad(i, "dense needs units >= 1 and l2 >= 0"));
                    }
                    Shape::Flat(units)
                }
                (_, Shape::Flat(_)) => return Err(bad(i, "spatial layer after flatten")),
                (_, Shape::Volume { .. }) => return Err(bad(i, "dense layer before flatten")),
            };
            shapes.push(shape);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
                ..
            }) => Ok(shapes),
            _ => Err(bad(self.layers.len(), "last layer must be a 1-unit sigmoid dense layer")),
        }
    }
}
