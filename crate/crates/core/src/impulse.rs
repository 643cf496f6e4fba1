//! Unit impulse responses of trained networks, and the check that two
//! linear convolutions commute.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::layers::{conv2d_with, ConvConfig, KernelBank};
use crate::model::{InputShape, Network};
use crate::tensor::{Dims4, Map2d, Tensor4};

/// A single nonzero pixel on a zero background, repeated in every input channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseStimulus {
    pub row: usize,
    pub col: usize,
    pub amplitude: f32,
}

impl ImpulseStimulus {
    /// Unit amplitude at `(h / 2, w / 2)`.
    pub fn centered(shape: &InputShape) -> Self {
        ImpulseStimulus {
            row: shape.height / 2,
            col: shape.width / 2,
            amplitude: 1.0,
        }
    }
}

pub fn make_impulse(shape: &InputShape, stimulus: &ImpulseStimulus) -> Result<Tensor4> {
    if stimulus.row >= shape.height || stimulus.col >= shape.width {
        return Err(Error::InvalidArgument(format!(
            "impulse location ({}, {}) outside the {}x{} input",
            stimulus.row, stimulus.col, shape.height, shape.width
        )));
    }
    if !stimulus.amplitude.is_finite() {
        return Err(Error::InvalidArgument("impulse amplitude must be finite".into()));
    }
    let mut t = Tensor4::zeros(Dims4::new(1, shape.channels, shape.height, shape.width));
    for c in 0..shape.channels {
        t.set(0, c, stimulus.row, stimulus.col, stimulus.amplitude);
    }
    Ok(t)
}

/// Where in a convolutional layer the response is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capture {
    /// Convolution output plus bias, before the nonlinearity.
    #[default]
    PreActivation,
    /// After the nonlinearity, before pooling.
    PostActivation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerResponses {
    /// 1-based convolutional layer index.
    pub layer: usize,
    /// One map per output channel.
    pub maps: Vec<Map2d>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponseSet {
    pub stimulus: ImpulseStimulus,
    pub capture: Capture,
    pub layers: Vec<LayerResponses>,
}

impl ImpulseResponseSet {
    pub fn layer(&self, layer: usize) -> Option<&LayerResponses> {
        self.layers.iter().find(|l| l.layer == layer)
    }
}

/// Forward the impulse through the whole network and collect the maps of
/// every convolutional layer. Deeper layers see the composed response of
/// the earlier ones, nonlinearities and pooling included.
pub fn impulse_response(
    net: &Network,
    stimulus: &ImpulseStimulus,
    capture: Capture,
) -> Result<ImpulseResponseSet> {
    let input = make_impulse(&net.spec.input, stimulus)?;
    let record = net.forward_with(Execution::Sequential, &input)?;
    let layers = net
        .spec
        .conv_positions()
        .into_iter()
        .enumerate()
        .map(|(i, pos)| {
            let act = &record.layers[pos];
            let t = match capture {
                Capture::PreActivation => &act.pre,
                Capture::PostActivation => &act.post,
            };
            let d = t.dims();
            let maps = (0..d.c)
                .map(|c| Map2d::new(d.h, d.w, t.plane(0, c).to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerResponses { layer: i + 1, maps })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImpulseResponseSet {
        stimulus: *stimulus,
        capture,
        layers,
    })
}

/// Normalized Gaussian weights along a line of `size` taps.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f32> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

/// `size x size` kernel whose centre column holds a normalized Gaussian.
pub fn gaussian_vertical(size: usize, sigma: f64) -> Map2d {
    let taps = gaussian_taps(size, sigma);
    Map2d::from_fn(size, size, |y, x| if x == size / 2 { taps[y] } else { 0.0 })
}

/// Transpose of [`gaussian_vertical`].
pub fn gaussian_horizontal(size: usize, sigma: f64) -> Map2d {
    gaussian_vertical(size, sigma).transpose()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeResult {
    /// `input` filtered by `k1`, then `k2`.
    pub out12: Map2d,
    /// `input` filtered by `k2`, then `k1`.
    pub out21: Map2d,
    pub max_interior_difference: f64,
}

fn odd_radius(k: &Map2d) -> Result<(usize, usize)> {
    if k.height % 2 == 0 || k.width % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "cascade kernels must be odd-sized, got {}x{}",
            k.height, k.width
        )));
    }
    Ok((k.height / 2, k.width / 2))
}

/// Same-size convolution (zero padding, no bias, no nonlinearity).
fn same_conv(input: &Map2d, k: &Map2d) -> Result<Map2d> {
    let (ry, rx) = odd_radius(k)?;
    let padded = Map2d::from_fn(input.height + 2 * ry, input.width + 2 * rx, |y, x| {
        if y < ry || x < rx || y >= input.height + ry || x >= input.width + rx {
            0.0
        } else {
            input.at(y - ry, x - rx)
        }
    });
    let out = conv2d_with(
        Execution::Sequential,
        &padded.to_tensor(),
        &KernelBank::from_map(k),
        &ConvConfig::default(),
    )?;
    Map2d::new(input.height, input.width, out.into_vec())
}

/// Filter `input` with `k1` then `k2` and in the opposite order, and report
/// the largest disagreement away from the zero-padded border.
pub fn cascade_check(k1: &Map2d, k2: &Map2d, input: &Map2d) -> Result<CascadeResult> {
    let (ry1, rx1) = odd_radius(k1)?;
    let (ry2, rx2) = odd_radius(k2)?;
    let (by, bx) = (ry1 + ry2, rx1 + rx2);
    if input.height <= 2 * by || input.width <= 2 * bx {
        return Err(Error::InvalidArgument(format!(
            "{}x{} input leaves no interior inside a border of {by}x{bx}",
            input.height, input.width
        )));
    }
    let out12 = same_conv(&same_conv(input, k1)?, k2)?;
    let out21 = same_conv(&same_conv(input, k2)?, k1)?;
    let mut max_diff = 0.0f64;
    for y in by..input.height - by {
        for x in bx..input.width - bx {
            max_diff = max_diff.max((out12.at(y, x) as f64 - out21.at(y, x) as f64).abs());
        }
    }
    Ok(CascadeResult {
        out12,
        out21,
        max_interior_difference: max_diff,
    })
}
