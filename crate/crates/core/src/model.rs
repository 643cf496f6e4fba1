//! Network topologies (LeNet-5 and its width-scaled variants), parameters and
//! the forward pass that records every layer's activations.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::layers::{
    conv2d_with, dense_batch, maxpool2x2, relu, ConvConfig, DenseParams, KernelBank, PoolIndices,
};
use crate::rng::rng;
use crate::tensor::{Dims4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max2x2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Square convolution followed by the nonlinearity and, when `pool`, 2x2 pooling.
    Conv {
        out_channels: usize,
        kernel_size: usize,
        padding: usize,
        pool: bool,
    },
    /// Fully connected layer, followed by the nonlinearity when `activation`.
    Dense { out_features: usize, activation: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: InputShape,
    pub nonlinearity: Nonlinearity,
    pub pooling: Pooling,
    pub layers: Vec<LayerSpec>,
}

/// Shapes flowing through one layer, as `(channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: (usize, usize, usize),
    pub pre: (usize, usize, usize),
    pub output: (usize, usize, usize),
}

/// Classic LeNet-5 on 32x32 single-channel inputs.
pub fn build_lenet5() -> NetworkSpec {
    let conv = |out_channels| LayerSpec::Conv {
        out_channels,
        kernel_size: 5,
        padding: 0,
        pool: true,
    };
    NetworkSpec {
        name: "lenet5".into(),
        input: InputShape {
            channels: 1,
            height: 32,
            width: 32,
        },
        nonlinearity: Nonlinearity::Relu,
        pooling: Pooling::Max2x2,
        layers: vec![
            conv(6),
            conv(16),
            LayerSpec::Dense {
                out_features: 120,
                activation: true,
            },
            LayerSpec::Dense {
                out_features: 84,
                activation: true,
            },
            LayerSpec::Dense {
                out_features: 10,
                activation: false,
            },
        ],
    }
}

/// Multiply every convolution's channel count and every hidden dense width
/// by `factor`. Network input and the final classifier width are unchanged.
pub fn scale_network(spec: &NetworkSpec, factor: usize) -> Result<NetworkSpec> {
    if factor == 0 {
        return Err(Error::InvalidArgument("scale factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(spec.clone());
    }
    let last = spec.layers.len().saturating_sub(1);
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match *layer {
            LayerSpec::Conv {
                out_channels,
                kernel_size,
                padding,
                pool,
            } => LayerSpec::Conv {
                out_channels: out_channels * factor,
                kernel_size,
                padding,
                pool,
            },
            LayerSpec::Dense {
                out_features,
                activation,
            } => LayerSpec::Dense {
                out_features: if i == last {
                    out_features
                } else {
                    out_features * factor
                },
                activation,
            },
        })
        .collect();
    Ok(NetworkSpec {
        name: format!("{}x{factor}", spec.name),
        layers,
        ..spec.clone()
    })
}

impl NetworkSpec {
    /// Symbolic shape pass: checks that consecutive layers compose.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        let mut cur = (self.input.channels, self.input.height, self.input.width);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = cur;
            let (pre, output) = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel_size,
                    padding,
                    pool,
                } => {
                    if out_channels == 0 || kernel_size == 0 {
                        return Err(Error::shape(format!("layer {i}: empty convolution")));
                    }
                    let (h, w) = ConvConfig::with_padding(padding)
                        .output_size(cur.1, cur.2, kernel_size, kernel_size)
                        .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
                    let pre = (out_channels, h, w);
                    if pool && (h % 2 != 0 || w % 2 != 0) {
                        return Err(Error::shape(format!(
                            "layer {i}: cannot 2x2-pool a {h}x{w} map"
                        )));
                    }
                    (pre, if pool { (out_channels, h / 2, w / 2) } else { pre })
                }
                LayerSpec::Dense { out_features, .. } => {
                    if out_features == 0 {
                        return Err(Error::shape(format!("layer {i}: empty dense layer")));
                    }
                    ((out_features, 1, 1), (out_features, 1, 1))
                }
            };
            out.push(LayerShape { input, pre, output });
            cur = output;
        }
        Ok(out)
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { out_features, .. }) => *out_features,
            Some(LayerSpec::Conv { out_channels, .. }) => *out_channels,
            None => 0,
        }
    }

    /// Positions in `layers` of the convolutional layers, in order.
    pub fn conv_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Position of the 1-based convolutional layer `conv_layer`.
    pub fn conv_position(&self, conv_layer: usize) -> Result<usize> {
        let positions = self.conv_positions();
        conv_layer
            .checked_sub(1)
            .and_then(|i| positions.get(i).copied())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "convolutional layer {conv_layer} does not exist (network has {})",
                    positions.len()
                ))
            })
    }

    /// Learnable parameters (weights plus biases) per layer.
    pub fn param_counts(&self) -> Result<Vec<usize>> {
        Ok(self
            .shapes()?
            .iter()
            .zip(&self.layers)
            .map(|(s, l)| match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel_size,
                    ..
                } => out_channels * s.input.0 * kernel_size * kernel_size + out_channels,
                LayerSpec::Dense { out_features, .. } => {
                    out_features * s.input.0 * s.input.1 * s.input.2 + out_features
                }
            })
            .collect())
    }

    /// Expected parameter tensors as `(name, dims)`, in storage order.
    pub fn tensor_table(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut table = Vec::new();
        let mut conv_i = 0;
        let mut dense_i = 0;
        for (s, l) in self.shapes()?.iter().zip(&self.layers) {
            match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel_size,
                    ..
                } => {
                    conv_i += 1;
                    table.push((
                        format!("conv{conv_i}.weight"),
                        vec![out_channels, s.input.0, kernel_size, kernel_size],
                    ));
                    table.push((format!("conv{conv_i}.bias"), vec![out_channels]));
                }
                LayerSpec::Dense { out_features, .. } => {
                    dense_i += 1;
                    table.push((
                        format!("fc{dense_i}.weight"),
                        vec![out_features, s.input.0 * s.input.1 * s.input.2],
                    ));
                    table.push((format!("fc{dense_i}.bias"), vec![out_features]));
                }
            }
        }
        Ok(table)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerParams {
    Conv(KernelBank),
    Dense(DenseParams),
}

impl LayerParams {
    pub fn param_count(&self) -> usize {
        match self {
            LayerParams::Conv(k) => k.param_count(),
            LayerParams::Dense(d) => d.param_count(),
        }
    }

    /// Flat weight and bias buffers.
    pub fn buffers(&self) -> (&[f32], &[f32]) {
        match self {
            LayerParams::Conv(k) => (&k.weights, &k.bias),
            LayerParams::Dense(d) => (&d.weights, &d.bias),
        }
    }

    pub fn buffers_mut(&mut self) -> (&mut Vec<f32>, &mut Vec<f32>) {
        match self {
            LayerParams::Conv(k) => (&mut k.weights, &mut k.bias),
            LayerParams::Dense(d) => (&mut d.weights, &mut d.bias),
        }
    }
}

/// Output of one layer for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivation {
    /// Convolution / affine output before the nonlinearity.
    pub pre: Tensor4,
    /// After the nonlinearity (equal to `pre` for the linear classifier layer).
    pub post: Tensor4,
    /// After pooling, when the layer pools.
    pub pooled: Option<(Tensor4, PoolIndices)>,
}

impl LayerActivation {
    /// The tensor handed to the next layer.
    pub fn output(&self) -> &Tensor4 {
        self.pooled.as_ref().map_or(&self.post, |(t, _)| t)
    }
}

/// Every layer's activations for one batch, plus the batch itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub input: Tensor4,
    pub layers: Vec<LayerActivation>,
}

impl ActivationRecord {
    /// Input of the layer at `position`.
    pub fn layer_input(&self, position: usize) -> &Tensor4 {
        if position == 0 {
            &self.input
        } else {
            self.layers[position - 1].output()
        }
    }

    pub fn logits(&self) -> &Tensor4 {
        self.layers.last().map_or(&self.input, |l| l.output())
    }
}

/// A network spec together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<LayerParams>,
}

impl Network {
    /// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`) from `seed`, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = rng(seed);
        let mut uniform = |n: usize, fan_in: usize, fan_out: usize| -> Vec<f32> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n)
                .map(|_| rng.gen_range(-limit..limit) as f32)
                .collect()
        };
        let params = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, s)| match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel_size,
                    ..
                } => {
                    let taps = kernel_size * kernel_size;
                    LayerParams::Conv(KernelBank {
                        out_channels,
                        in_channels: s.input.0,
                        kh: kernel_size,
                        kw: kernel_size,
                        weights: uniform(
                            out_channels * s.input.0 * taps,
                            s.input.0 * taps,
                            out_channels * taps,
                        ),
                        bias: vec![0.0; out_channels],
                    })
                }
                LayerSpec::Dense { out_features, .. } => {
                    let fan_in = s.input.0 * s.input.1 * s.input.2;
                    LayerParams::Dense(DenseParams {
                        out_features,
                        in_features: fan_in,
                        weights: uniform(out_features * fan_in, fan_in, out_features),
                        bias: vec![0.0; out_features],
                    })
                }
            })
            .collect();
        Ok(Network {
            spec: spec.clone(),
            params,
        })
    }

    /// Check that every parameter tensor matches the spec.
    pub fn validate(&self) -> Result<()> {
        let table = self.spec.tensor_table()?;
        if table.len() != 2 * self.params.len() {
            return Err(Error::shape(format!(
                "spec has {} layers but {} parameter sets were given",
                table.len() / 2,
                self.params.len()
            )));
        }
        for (i, (p, layer)) in self.params.iter().zip(&self.spec.layers).enumerate() {
            let dims = &table[2 * i].1;
            let ok = match (p, layer) {
                (LayerParams::Conv(k), LayerSpec::Conv { .. }) => {
                    [k.out_channels, k.in_channels, k.kh, k.kw].as_slice() == dims.as_slice()
                        && k.weights.len() == dims.iter().product::<usize>()
                        && k.bias.len() == k.out_channels
                }
                (LayerParams::Dense(d), LayerSpec::Dense { .. }) => {
                    [d.out_features, d.in_features].as_slice() == dims.as_slice()
                        && d.weights.len() == d.out_features * d.in_features
                        && d.bias.len() == d.out_features
                }
                _ => false,
            };
            if !ok {
                return Err(Error::shape(format!(
                    "layer {i} parameters do not match {}",
                    table[2 * i].0
                )));
            }
        }
        Ok(())
    }

    pub fn input_dims(&self, batch: usize) -> Dims4 {
        let i = self.spec.input;
        Dims4::new(batch, i.channels, i.height, i.width)
    }

    pub fn conv_bank(&self, conv_layer: usize) -> Result<&KernelBank> {
        match &self.params[self.spec.conv_position(conv_layer)?] {
            LayerParams::Conv(k) => Ok(k),
            LayerParams::Dense(_) => unreachable!("conv_position returns conv layers"),
        }
    }

    fn conv_config(&self, position: usize) -> ConvConfig {
        match self.spec.layers[position] {
            LayerSpec::Conv { padding, .. } => ConvConfig::with_padding(padding),
            LayerSpec::Dense { .. } => ConvConfig::default(),
        }
    }

    /// Affine part of the layer at `position` (convolution or dense product).
    pub fn layer_linear(&self, exec: Execution, position: usize, input: &Tensor4) -> Result<Tensor4> {
        match &self.params[position] {
            LayerParams::Conv(k) => conv2d_with(exec, input, k, &self.conv_config(position)),
            LayerParams::Dense(d) => dense_batch(input, d),
        }
    }

    /// Nonlinearity and pooling applied to a layer's pre-activation.
    pub fn layer_finish(&self, position: usize, pre: Tensor4) -> Result<LayerActivation> {
        let (activate, pool) = match self.spec.layers[position] {
            LayerSpec::Conv { pool, .. } => (true, pool),
            LayerSpec::Dense { activation, .. } => (activation, false),
        };
        let post = if activate { relu(&pre) } else { pre.clone() };
        let pooled = if pool { Some(maxpool2x2(&post)?) } else { None };
        Ok(LayerActivation { pre, post, pooled })
    }

    pub fn forward(&self, input: &Tensor4) -> Result<ActivationRecord> {
        self.forward_with(Execution::default(), input)
    }

    pub fn forward_with(&self, exec: Execution, input: &Tensor4) -> Result<ActivationRecord> {
        let expected = self.input_dims(input.dims().n);
        if input.dims() != expected {
            return Err(Error::shape(format!(
                "network {} expects input {expected}, got {}",
                self.spec.name,
                input.dims()
            )));
        }
        let layers = self.forward_from(exec, 0, input)?;
        Ok(ActivationRecord {
            input: input.clone(),
            layers,
        })
    }

    /// Run layers `position..` starting from `input`, which stands in for the
    /// input of the layer at `position`.
    pub fn forward_from(
        &self,
        exec: Execution,
        position: usize,
        input: &Tensor4,
    ) -> Result<Vec<LayerActivation>> {
        let mut out: Vec<LayerActivation> = Vec::with_capacity(self.params.len() - position);
        for pos in position..self.params.len() {
            let x = out.last().map_or(input, |l| l.output());
            let pre = self.layer_linear(exec, pos, x)?;
            out.push(self.layer_finish(pos, pre)?);
        }
        Ok(out)
    }

    /// Logits only, starting from the input of the layer at `position`; no
    /// intermediate activations are kept.
    pub fn logits_from(&self, exec: Execution, position: usize, input: &Tensor4) -> Result<Tensor4> {
        let mut cur: Option<Tensor4> = None;
        for pos in position..self.params.len() {
            let x = cur.as_ref().unwrap_or(input);
            let pre = self.layer_linear(exec, pos, x)?;
            let act = self.layer_finish(pos, pre)?;
            cur = Some(match act.pooled {
                Some((t, _)) => t,
                None => act.post,
            });
        }
        Ok(cur.unwrap_or_else(|| input.clone()))
    }

    pub fn predict(&self, exec: Execution, images: &Tensor4) -> Result<Vec<usize>> {
        let logits = self.logits_from(exec, 0, images)?;
        Ok(argmax_rows(&logits))
    }
}

/// Index of the largest entry of each sample; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor4) -> Vec<usize> {
    (0..logits.dims().n)
        .map(|n| {
            logits
                .sample(n)
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}
